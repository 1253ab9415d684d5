from django.core.management.base import BaseCommand

from ._common import add_run_arguments, execute


class Command(BaseCommand):
    help = 'Exports grid images, the frequency-domain error map and pixel-feature variance for a checkpoint.'

    def add_arguments(self, parser):
        parser.add_argument('checkpoint', help='Path to model.safetensors.')
        parser.add_argument('config', nargs='?', default=None,
                            help='Run config; defaults to the config stored in the checkpoint.')
        add_run_arguments(parser)

    def handle(self, *args, **options):
        execute('analyze', self.stdout, self.style, config_path=options['config'],
                checkpoint=options['checkpoint'], options=options)
