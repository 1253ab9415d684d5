# core/analysis.py
"""
Диагностика: карты ошибки в частотной области, дисперсия признаков по пикселям,
выгрузка сеток в картинки и оценка квантованной модели.
"""
import logging
from dataclasses import dataclass

import numpy as np
from django.conf import settings

from .exceptions import ShapeError
from .grid import ModulationGrid
from .images import minmax_gray, save_image
from .optim import quantize_state
from .tasks import evaluate

logger = logging.getLogger(__name__)

# Граница низкочастотной полосы: половина радиуса Найквиста (расстояние Чебышева)
HALF_BAND = 0.5


def _is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


def fft_radix2(x, axis=-1):
    """БПФ Кули-Тьюки по основанию 2 вдоль оси; длина - степень двойки."""
    x = np.moveaxis(np.asarray(x, dtype=np.complex128), axis, -1)
    n = x.shape[-1]
    if not _is_power_of_two(n):
        raise ShapeError(f"radix-2 FFT needs a power-of-two length, got {n}")

    def _fft(v):
        size = v.shape[-1]
        if size == 1:
            return v
        even, odd = _fft(v[..., ::2]), _fft(v[..., 1::2])
        twiddle = np.exp(-2j * np.pi * np.arange(size // 2) / size) * odd
        return np.concatenate([even + twiddle, even - twiddle], axis=-1)

    return np.moveaxis(_fft(x), -1, axis)


def dft_direct(x, axis=-1):
    """Прямое ДПФ O(n²) - запасной путь и эталон для тестов."""
    x = np.moveaxis(np.asarray(x, dtype=np.complex128), axis, -1)
    n = x.shape[-1]
    k = np.arange(n)
    matrix = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return np.moveaxis(x @ matrix.T, -1, axis)


def fft2_radix2(image):
    return fft_radix2(fft_radix2(image, axis=0), axis=1)


def dft2_direct(image):
    return dft_direct(dft_direct(image, axis=0), axis=1)


def fftshift(coefficients):
    """Сдвиг нулевой частоты в центр (индекс n // 2 по каждой оси)."""
    shifted = coefficients
    for axis in (0, 1):
        shifted = np.roll(shifted, shifted.shape[axis] // 2, axis=axis)
    return shifted


@dataclass
class SpectrumMap:
    coefficients: np.ndarray # комплексные, DC в центре
    source: str = ''

    @property
    def magnitude(self):
        return np.abs(self.coefficients)

    @property
    def energy(self):
        return np.abs(self.coefficients) ** 2

    @property
    def shape(self):
        return self.coefficients.shape


def dft2(image, source='') -> SpectrumMap:
    """Ненормированное 2D ДПФ со сдвигом DC в центр."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ShapeError("dft2 expects a real [H x W] image", image.shape)
    height, width = image.shape
    if _is_power_of_two(height) and _is_power_of_two(width):
        coefficients = fft2_radix2(image)
    elif height * width <= settings.CAM_DIRECT_DFT_LIMIT:
        coefficients = dft2_direct(image)
    else:
        raise ShapeError(f"non-power-of-two image larger than {settings.CAM_DIRECT_DFT_LIMIT} pixels", image.shape)
    return SpectrumMap(fftshift(coefficients), source=source)


def high_band_mask(shape):
    """True для частот вне центральной полосы max(|u|/(H/2), |v|/(W/2)) <= 0.5."""
    height, width = shape
    u = (np.arange(height) - height // 2) / (height / 2.0)
    v = (np.arange(width) - width // 2) / (width / 2.0)
    distance = np.maximum(np.abs(u)[:, None], np.abs(v)[None, :])
    return distance > HALF_BAND


def high_frequency_ratio(spectrum: SpectrumMap):
    energy = spectrum.energy
    total = energy.sum()
    if total == 0.0:
        return 0.0
    return float(energy[high_band_mask(energy.shape)].sum() / total)


@dataclass
class FrequencyError:
    spectrum: SpectrumMap
    high_frequency_ratio: float
    high_band_energy: float
    total_energy: float


def freq_error_map(pred, target, source='error') -> FrequencyError:
    """Спектр знаковой ошибки pred - target; для RGB энергии каналов складываются."""
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError("prediction and target shapes differ", pred.shape, target.shape)
    error = pred - target
    if error.ndim == 3:
        spectra = [dft2(error[..., c]).coefficients for c in range(error.shape[2])]
        # Модуль из суммарной энергии каналов; фаза не нужна для энергии
        combined = np.sqrt(sum(np.abs(s) ** 2 for s in spectra))
        spectrum = SpectrumMap(combined.astype(np.complex128), source=source)
    else:
        spectrum = dft2(error, source=source)
    energy = spectrum.energy
    high = float(energy[high_band_mask(energy.shape)].sum())
    total = float(energy.sum())
    return FrequencyError(spectrum, high / total if total else 0.0, high, total)


def pixel_feature_variance(features, channel_axis=-1):
    """v = (1/C) sum_c var(признаки канала c по всем пикселям); популяционная дисперсия."""
    features = np.asarray(features, dtype=np.float64)
    features = np.moveaxis(features, channel_axis, -1)
    per_channel = features.reshape(-1, features.shape[-1])
    if per_channel.shape[0] <= 1:
        return 0.0
    return float(per_channel.var(axis=0).mean())


def export_grid_image(grid: ModulationGrid, path, channel=0):
    """Сетка d_x x d_y -> 8-битный PGM, мин-макс нормализация (постоянная сетка -> 128)."""
    if grid.rank != 2:
        raise ShapeError("only rank-2 grids can be exported as images", grid.values.shape)
    return save_image(path, minmax_gray(grid.to_matrix(channel)))


def export_spectrum_image(spectrum: SpectrumMap, path, log_scale=False):
    magnitude = spectrum.magnitude
    if log_scale:
        magnitude = np.log1p(magnitude)
    gray = minmax_gray(magnitude)
    if str(path).endswith('.pgm'):
        return save_image(path, gray)
    return save_image(path, np.repeat(gray[..., None], 3, axis=2))


def eval_quantized(model, bits, task, split='train', skip=()):
    """
    Квантует все параметры модели (включая Γ и B) min-max по слоям, оценивает и возвращает
    исходные значения обратно. bits == 32 - обычная оценка без изменений.
    """
    if bits == 32:
        return evaluate(model, task, split)
    tensors = {path: tensor for path, tensor, _ in model.parameters()}
    original = {path: tensor.data for path, tensor in tensors.items()}
    restored, errors = quantize_state(original, bits, skip=skip)
    try:
        for path, tensor in tensors.items():
            tensor.data = restored[path]
        result = evaluate(model, task, split)
    finally:
        for path, tensor in tensors.items():
            tensor.data = original[path]
    logger.info(f"{bits}-bit evaluation ({split}): PSNR {result.psnr:.2f} dB, worst weight error "
                f"{max(errors.values(), default=0.0):.3g}.")
    return result


def final_hidden_stage(model):
    """Индекс последней скрытой активации (relu) - признаки для дисперсии и карт."""
    stages = getattr(model, 'stages', None)
    if stages is None:
        return 0
    hidden = [i for i, stage in enumerate(stages) if stage.kind == 'activation' and stage.name == 'relu']
    if not hidden:
        raise ShapeError("model has no hidden activation stage")
    return hidden[-1]
