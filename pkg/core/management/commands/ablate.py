from django.core.management.base import BaseCommand

from ._common import add_run_arguments, execute


class Command(BaseCommand):
    help = 'Trains baseline, CAM without normalization and CAM with a shared seed and compares final PSNR.'

    def add_arguments(self, parser):
        parser.add_argument('config', help='Path to the run config.')
        add_run_arguments(parser)

    def handle(self, *args, **options):
        self.stdout.write(f"Running normalization ablation from {options['config']}...")
        summary = execute('ablate', self.stdout, self.style, config_path=options['config'], options=options)
        if not summary['ordering_holds']:
            self.stdout.write(self.style.WARNING("PSNR ordering baseline <= cam-n <= cam does not hold for this run."))
