# core/checkpoint.py
"""
Чекпоинты модели в формате safetensors: тензоры под путями stage{i}.{kind}.{param},
в метаданных - версия формата, теги стадий, формы, seed и σ_g кодирования, текст конфига.
"""
import json
import logging
from pathlib import Path

import numpy as np
from safetensors import safe_open
from safetensors.numpy import save_file

from .config import parse_config, serialize_config
from .exceptions import CheckpointError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 'camfields-1'
CHECKPOINT_NAME = 'model.safetensors'


def stage_tags(model):
    """Теги стадий FieldModel или имя класса пробной модели."""
    stages = getattr(model, 'stages', None)
    if stages is None:
        return [type(model).__name__]
    return [stage.kind for stage in stages]


def _encoding(model):
    stages = getattr(model, 'stages', None) or []
    if stages and stages[0].kind in ('fourier', 'positional'):
        return stages[0]
    return None


def save_checkpoint(path, model, config, extra=None):
    path = Path(path)
    tensors = {name: np.ascontiguousarray(tensor.data) for name, tensor, _ in model.parameters()}
    encoding = _encoding(model)
    if encoding is not None:
        tensors['encoding.matrix'] = np.ascontiguousarray(encoding.matrix.data)
    metadata = {
        'format': FORMAT_VERSION,
        'stages': json.dumps(stage_tags(model)),
        'shapes': json.dumps({name: list(array.shape) for name, array in tensors.items()}),
        'encoding_seed': str(encoding.seed) if encoding is not None else '',
        'gaussian_scale': repr(encoding.scale) if encoding is not None else '',
        'config': serialize_config(config),
    }
    if extra:
        metadata.update({key: str(value) for key, value in extra.items()})
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        save_file(tensors, str(path), metadata=metadata)
    except Exception as e:
        raise CheckpointError(f"Cannot write checkpoint {path}: {e}") from e
    logger.info(f"Checkpoint saved to {path} ({len(tensors)} tensors).")
    return path


def read_checkpoint(path):
    """(тензоры, метаданные) без сборки модели."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        with safe_open(str(path), framework='np') as f:
            metadata = dict(f.metadata() or {})
            tensors = {key: f.get_tensor(key) for key in f.keys()}
    except Exception as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    if metadata.get('format') != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint format '{metadata.get('format')}' in {path}")
    return tensors, metadata


def checkpoint_config(path):
    """Конфиг, с которым был обучен чекпоинт."""
    _, metadata = read_checkpoint(path)
    if 'config' not in metadata:
        raise CheckpointError(f"Checkpoint {path} has no embedded config")
    return parse_config(metadata['config'])


def load_into(model, path):
    """Проверяет совместимость и записывает тензоры чекпоинта в параметры модели."""
    tensors, metadata = read_checkpoint(path)
    expected_tags = json.loads(metadata.get('stages', '[]'))
    if expected_tags != stage_tags(model):
        raise CheckpointError(f"Stage layout mismatch: checkpoint {expected_tags}, model {stage_tags(model)}")

    encoding = _encoding(model)
    if encoding is not None:
        stored = tensors.get('encoding.matrix')
        if stored is None or not np.array_equal(stored, encoding.matrix.data):
            raise CheckpointError(f"Encoding matrix in {path} does not match seed {metadata.get('encoding_seed')} "
                                  f"and scale {metadata.get('gaussian_scale')}")

    parameters = list(model.parameters())
    missing = [name for name, _, _ in parameters if name not in tensors]
    if missing:
        raise CheckpointError(f"Checkpoint {path} is missing tensors: {', '.join(missing)}")
    for name, tensor, _ in parameters:
        array = tensors[name]
        if array.shape != tensor.data.shape:
            raise CheckpointError(f"Shape mismatch for {name}: checkpoint {array.shape}, model {tensor.data.shape}")
        tensor.data = array.astype(tensor.data.dtype, copy=False)
    logger.info(f"Loaded {len(parameters)} tensors from {path}.")
    return model
