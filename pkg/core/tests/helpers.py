# core/tests/helpers.py
"""Общие заготовки для тестов: минимальные конфиги и маленькие картинки."""
import numpy as np

try:
    import torch
except ImportError: # torch нужен только как независимый эталон
    torch = None

from core.config import parse_config

# Порог относительной ошибки градиента
GRAD_TOLERANCE = 1e-3
# Знаменатель относительной ошибки: |fd| + 1e-6
SINGLE_PRECISION_FLOOR = 1e-6
DOUBLE_PRECISION_TOLERANCE = 1e-6


def random_inputs(rng, *shapes, low=-2.0, high=2.0):
    return [rng.uniform(low, high, size=shape) for shape in shapes]


def config_text(kind, **sections):
    """Текст конфига: config_text('signal1d', train={'iterations': 5})."""
    lines = ['[task]', f'kind = {kind}']
    for key, value in sections.pop('task', {}).items():
        lines.append(f'{key} = {value}')
    for section, items in sections.items():
        lines.append(f'[{section}]')
        lines.extend(f'{key} = {value}' for key, value in items.items())
    return '\n'.join(lines) + '\n'


def make_config(kind, **sections):
    return parse_config(config_text(kind, **sections))


def smooth_image(size, seed=0):
    """Плавная цветная картинка [size x size x 3] в [0, 1]."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size] / float(size)
    channels = []
    for _ in range(3):
        a, b, c = rng.uniform(1.0, 3.0, size=3)
        channels.append(0.5 + 0.4 * np.sin(2 * np.pi * (a * x + b * y) + c))
    return np.stack(channels, axis=-1)
