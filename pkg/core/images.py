# core/images.py
"""Чтение и запись изображений через Pillow (PPM P6 / PGM P5 обязательно, PNG - тоже работает)."""
import logging
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import DatasetError, ShapeError

logger = logging.getLogger(__name__)


def load_image(path):
    """RGB-картинка как float64 [H x W x 3] в [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"Image file not found: {path}")
    try:
        with Image.open(path) as image:
            pixels = np.asarray(image.convert('RGB'), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as e:
        raise DatasetError(f"Cannot read image {path}: {e}") from e
    logger.info(f"Loaded image {path} ({pixels.shape[1]}x{pixels.shape[0]}).")
    return pixels


def to_uint8(array):
    """[0, 1] -> 0..255 с округлением; uint8 проходит как есть."""
    array = np.asarray(array)
    if array.dtype == np.uint8:
        return array
    return np.clip(np.rint(np.asarray(array, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_image(path, array):
    """[H x W x 3] -> PPM/PNG, [H x W] -> PGM/PNG (формат по расширению)."""
    path = Path(path)
    pixels = to_uint8(array)
    if pixels.ndim == 3 and pixels.shape[2] == 3:
        mode = 'RGB'
    elif pixels.ndim == 2:
        mode = 'L'
    else:
        raise ShapeError("image must be [H x W] or [H x W x 3]", pixels.shape)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path)
    logger.debug(f"Saved {mode} image {path} ({pixels.shape[1]}x{pixels.shape[0]}).")
    return path


def minmax_gray(matrix):
    """Мин-макс нормализация в 8 бит; постоянная матрица -> 128 (средне-серый)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    lo, hi = matrix.min(), matrix.max()
    if hi == lo:
        return np.full(matrix.shape, 128, dtype=np.uint8)
    return np.rint((matrix - lo) / (hi - lo) * 255.0).astype(np.uint8)
