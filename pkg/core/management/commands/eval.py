from django.core.management.base import BaseCommand

from ._common import add_run_arguments, execute


class Command(BaseCommand):
    help = 'Evaluates a checkpoint on its task, optionally with quantized parameters (--bits 8 or 6).'

    def add_arguments(self, parser):
        parser.add_argument('checkpoint', help='Path to model.safetensors.')
        parser.add_argument('config', nargs='?', default=None,
                            help='Run config; defaults to the config stored in the checkpoint.')
        add_run_arguments(parser)

    def handle(self, *args, **options):
        execute('eval', self.stdout, self.style, config_path=options['config'],
                checkpoint=options['checkpoint'], options=options)
