from django.core.management.base import BaseCommand

from ._common import add_run_arguments, execute


class Command(BaseCommand):
    help = 'Trains a neural field described by a config file and writes checkpoint, metrics and summary.'

    def add_arguments(self, parser):
        parser.add_argument('config', help='Path to the run config (INI-like sections).')
        add_run_arguments(parser)

    def handle(self, *args, **options):
        self.stdout.write(f"Training from {options['config']}...")
        execute('train', self.stdout, self.style, config_path=options['config'], options=options)
