# core/runner.py
"""
Оркестрация команд train / eval / analyze / ablate: каталог результатов,
эхо конфига, чекпоинт, metrics.tsv, summary.json и запись в журнал TrainingRun.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from django.conf import settings
from threadpoolctl import threadpool_limits

from . import analysis
from .checkpoint import CHECKPOINT_NAME, load_into, save_checkpoint
from .config import IMAGE_TASKS, serialize_config
from .exceptions import CheckpointError, ConfigError
from .images import save_image
from .models import TrainingRun
from .tasks import evaluate, make_task, train

logger = logging.getLogger(__name__)

COMMANDS = ('train', 'eval', 'analyze', 'ablate')
ABLATION_VARIANTS = ('baseline', 'cam-n', 'cam')
# Допуск шума для baseline <= CAM-N
ORDERING_TOLERANCE = 0.2


@dataclass
class RunOptions:
    seed: int = None
    out: str = None
    force: bool = False
    bits: int = None
    threads: int = None
    checkpoint: str = None
    progress: bool = False


def apply_options(config, options: RunOptions):
    """Флаги командной строки перекрывают значения из файла конфига."""
    if options.seed is not None:
        config = config.replace('train', seed=options.seed)
    if options.out:
        config = config.replace('io', output=str(options.out))
    if options.bits is not None:
        config = config.replace('io', bits=int(options.bits))
    return config


def default_output_dir(config):
    return Path(settings.CAM_OUTPUT_ROOT) / f"{config.task.kind}-{config.train.seed}"


def prepare_output_dir(path, force=False):
    path = Path(path)
    if path.exists() and not path.is_dir():
        raise ConfigError(f"Output path {path} exists and is not a directory")
    if path.is_dir() and any(path.iterdir()) and not force:
        raise ConfigError(f"Output directory {path} is not empty (use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_metrics(path, metrics):
    lines = ['iteration\tloss\tpsnr\tlr']
    for record in metrics:
        psnr = '' if record.psnr is None else f'{record.psnr:.6f}'
        lr = '' if record.lr is None else repr(record.lr)
        lines.append(f'{record.iteration}\t{record.loss:.9g}\t{psnr}\t{lr}')
    Path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


def write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding='utf-8')
    return path


def _image_shape(task, split):
    dataset = task.train_set if split == 'train' else task.eval_set
    return dataset.height, dataset.width


def _load_model(config, checkpoint):
    if not checkpoint:
        raise CheckpointError("A checkpoint path is required for this command")
    task = make_task(config)
    model = task.build_model()
    load_into(model, checkpoint)
    return task, model


# --- Команды ---

def run_train(config, options, ledger=None):
    out = prepare_output_dir(config.io.output or default_output_dir(config), options.force)
    config = config.replace('io', output=str(out))
    (out / 'config.ini').write_text(serialize_config(config), encoding='utf-8')

    task = make_task(config)
    result = train(config, task=task, progress=options.progress)
    save_checkpoint(out / CHECKPOINT_NAME, result.model, config)
    write_metrics(out / 'metrics.tsv', result.metrics)

    held_out = evaluate(result.model, task, 'eval')
    summary = {
        'command': 'train',
        'task': config.task.kind,
        'seed': config.train.seed,
        'cam': config.cam.enabled,
        'normalize': config.cam.normalize,
        'iterations': config.train.iterations,
        'parameters': sum(t.data.size for _, t, _ in result.model.parameters()),
        'final_loss': result.final_loss,
        'train_psnr': result.final_train_psnr,
        'eval_psnr': held_out.psnr,
        'bits': config.io.bits,
        'output': str(out),
    }
    if config.io.bits != 32:
        summary['quantized_psnr'] = analysis.eval_quantized(result.model, config.io.bits, task, 'eval').psnr
    if config.task.kind in IMAGE_TASKS:
        height, width = _image_shape(task, 'eval')
        save_image(out / 'reconstruction.ppm', held_out.prediction.reshape(height, width, 3))
    write_json(out / 'summary.json', summary)
    if ledger is not None:
        ledger.complete(result.final_train_psnr, held_out.psnr, out)
    logger.info(f"Run written to {out}: train PSNR {result.final_train_psnr:.2f} dB, eval PSNR {held_out.psnr:.2f} dB.")
    return summary


def run_eval(config, options, ledger=None):
    task, model = _load_model(config, options.checkpoint)
    bits = config.io.bits
    train_result = analysis.eval_quantized(model, bits, task, 'train')
    eval_result = analysis.eval_quantized(model, bits, task, 'eval')
    summary = {
        'command': 'eval',
        'task': config.task.kind,
        'checkpoint': str(options.checkpoint),
        'bits': bits,
        'train_psnr': train_result.psnr,
        'eval_psnr': eval_result.psnr,
    }
    if bits != 32:
        summary['full_precision_eval_psnr'] = evaluate(model, task, 'eval').psnr
    if options.out:
        out = prepare_output_dir(options.out, options.force)
        write_json(out / 'eval.json', summary)
        summary['output'] = str(out)
    if ledger is not None:
        ledger.complete(train_result.psnr, eval_result.psnr, summary.get('output', ''))
    return summary


def run_analyze(config, options, ledger=None):
    task, model = _load_model(config, options.checkpoint)
    out = prepare_output_dir(options.out or Path(options.checkpoint).parent / 'analysis', options.force)

    grids = {}
    for layer in model.cam_layers:
        for label, grid in (('gamma', layer.gamma), ('beta', layer.beta)):
            key = f'grid_{layer.name}_{label}'
            if grid.rank == 2:
                analysis.export_grid_image(grid, out / f'{key}.pgm')
            grids[key] = {'min': float(grid.values.data.min()), 'max': float(grid.values.data.max()),
                          'resolution': list(grid.resolution)}

    stage = analysis.final_hidden_stage(model)
    result = evaluate(model, task, 'eval', capture_stage=stage)
    variance = analysis.pixel_feature_variance(result.features, channel_axis=task.feature_channel_axis)
    report = {
        'task': config.task.kind,
        'checkpoint': str(options.checkpoint),
        'eval_psnr': result.psnr,
        'feature_stage': stage,
        'pixel_feature_variance': variance,
        'grids': grids,
    }
    if config.task.kind in IMAGE_TASKS:
        height, width = _image_shape(task, 'eval')
        target = task.eval_batch().targets.reshape(height, width, 3)
        error = analysis.freq_error_map(result.prediction.reshape(height, width, 3), target)
        analysis.export_spectrum_image(error.spectrum, out / 'spectrum_error.ppm')
        report.update({
            'high_frequency_ratio': error.high_frequency_ratio,
            'high_band_error_energy': error.high_band_energy,
            'error_energy': error.total_energy,
        })
    write_json(out / 'analysis.json', report)
    if ledger is not None:
        ledger.complete(eval_psnr=result.psnr, output_dir=out)
    logger.info(f"Analysis written to {out} ({len(grids)} grids).")
    return report


def ordering_holds(rows):
    """baseline <= CAM-N (с допуском) и CAM-N <= CAM по итоговому PSNR на обучении."""
    psnr = {row['variant']: row['train_psnr'] for row in rows}
    return (psnr['baseline'] <= psnr['cam-n'] + ORDERING_TOLERANCE) and (psnr['cam-n'] <= psnr['cam'])


def run_ablate(config, options, ledger=None):
    out = prepare_output_dir(config.io.output or default_output_dir(config), options.force)
    rows = []
    for name in ABLATION_VARIANTS:
        variant = config.variant(name).replace('io', output=str(out / name))
        summary = run('train', variant, RunOptions(force=options.force, progress=options.progress), variant=name)
        rows.append({'variant': name, **summary})

    verdict = ordering_holds(rows)
    lines = ['variant\ttrain_psnr\teval_psnr\tparameters']
    lines += [f"{row['variant']}\t{row['train_psnr']:.4f}\t{row['eval_psnr']:.4f}\t{row['parameters']}" for row in rows]
    lines.append(f"# ordering baseline <= cam-n <= cam: {'holds' if verdict else 'violated'}")
    (out / 'ablation.tsv').write_text('\n'.join(lines) + '\n', encoding='utf-8')
    if not verdict:
        logger.warning(f"Ablation ordering violated: {[(r['variant'], round(r['train_psnr'], 2)) for r in rows]}")
    if ledger is not None:
        ledger.complete(rows[-1]['train_psnr'], rows[-1]['eval_psnr'], out)
    return {'command': 'ablate', 'output': str(out), 'rows': rows, 'ordering_holds': verdict}


HANDLERS = {
    'train': run_train,
    'eval': run_eval,
    'analyze': run_analyze,
    'ablate': run_ablate,
}


def run(command, config, options=None, variant=''):
    """Выполняет команду с учетом флагов и записывает результат в журнал запусков."""
    if command not in HANDLERS:
        raise ConfigError(f"Unknown command '{command}' (expected one of {', '.join(COMMANDS)})")
    options = options or RunOptions()
    config = apply_options(config, options)
    ledger = TrainingRun.objects.create(command=command, variant=variant, task=config.task.kind,
                                        seed=config.train.seed, parameters=config.as_dict())
    ledger.start()
    try:
        with threadpool_limits(limits=options.threads):
            return HANDLERS[command](config, options, ledger)
    except Exception as e:
        ledger.fail(str(e))
        raise
