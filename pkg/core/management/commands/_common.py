# core/management/commands/_common.py
"""Общие флаги и обработка ошибок для команд train / eval / analyze / ablate."""
import json
import logging
import sys

from django.core.management.base import CommandError

from core.checkpoint import checkpoint_config
from core.config import load_config
from core.exceptions import CamError
from core.runner import RunOptions, run

logger = logging.getLogger(__name__)


def add_run_arguments(parser):
    parser.add_argument('--seed', type=int, default=None, help='Override [train] seed.')
    parser.add_argument('--out', default=None, help='Output directory (default: CAM_OUTPUT_ROOT/<task>-<seed>).')
    parser.add_argument('--force', action='store_true', help='Allow writing into a non-empty output directory.')
    parser.add_argument('--bits', type=int, choices=[32, 8, 6], default=None,
                        help='Evaluate with min-max quantized parameters (32 = full precision).')
    parser.add_argument('--threads', type=int, default=None, help='Limit BLAS/OpenMP threads.')


def run_options(options, checkpoint=None):
    threads = options.get('threads')
    if threads is not None and threads < 1:
        raise CommandError(f"--threads must be positive, got {threads}")
    return RunOptions(
        seed=options.get('seed'),
        out=options.get('out'),
        force=options.get('force', False),
        bits=options.get('bits'),
        threads=threads,
        checkpoint=checkpoint,
        progress=options.get('verbosity', 1) >= 1 and sys.stderr.isatty(),
    )


def execute(command, stdout, style, config_path=None, checkpoint=None, options=None):
    """Загружает конфиг, выполняет команду и печатает сводку; ошибки библиотеки -> CommandError."""
    try:
        if config_path:
            config = load_config(config_path)
        elif checkpoint:
            config = checkpoint_config(checkpoint)
        else:
            raise CommandError("A config file is required")
        summary = run(command, config, run_options(options or {}, checkpoint))
    except (CamError, OSError) as e:
        logger.error(f"{command} failed: {e}")
        raise CommandError(str(e)) from e
    stdout.write(style.SUCCESS(f"{command} finished."))
    stdout.write(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return summary
