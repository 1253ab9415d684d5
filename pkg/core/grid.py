# core/grid.py
"""
Обучаемые сетки модуляции Γ и B.

Сетка - кусочно-(би)линейная функция на [0, 1] (или [0, 1]^2): узел i стоит
в координате i / (d - 1), значение между узлами собирается из соседних
узлов с весами по расстоянию. Каналов k = 1 для скалярной модуляции и
k = C для поканальной.
"""
import logging
from dataclasses import dataclass

import numpy as np
from django.conf import settings

from .exceptions import DomainError, ShapeError
from .tensor import Tensor, record_op

logger = logging.getLogger(__name__)

# Координата, отстоящая от узла меньше чем на это значение (в единицах шага), считается узлом
_NODE_SNAP = 1e-6


@dataclass
class GridWeights:
    """Узлы (плоские индексы в сетке) и веса интерполяции для каждого запроса."""
    indices: np.ndarray # [N x 2] или [N x 4]
    weights: np.ndarray # те же размеры, сумма по строке = 1
    fractions: np.ndarray = None # доли t по каждой оси [N x rank]

    def touched(self, n):
        """Пары (узел, вес) с ненулевым весом для запроса n."""
        return [(int(i), float(w)) for i, w in zip(self.indices[n], self.weights[n]) if w != 0.0]


def check_unit_domain(coords, tolerance=None):
    """Проверяет, что координаты лежат в [0, 1] с допуском, и прижимает их к границам."""
    tolerance = settings.CAM_COORD_TOLERANCE if tolerance is None else tolerance
    coords = np.asarray(coords, dtype=np.float64)
    if coords.size and (coords.min() < -tolerance or coords.max() > 1.0 + tolerance):
        raise DomainError(
            f"Coordinates must lie in [0, 1] (got range [{coords.min():.6g}, {coords.max():.6g}])"
        )
    return np.clip(coords, 0.0, 1.0)


def _lerp(a, b, t):
    """a + t (b - a), считая от ближнего узла: t = 0 дает a, t = 1 дает b без ошибки округления."""
    t = t[:, None]
    return np.where(t < 0.5, a + t * (b - a), b - (1 - t) * (b - a))


def _axis_weights(x, resolution):
    """Левый узел и доля t вдоль одной оси."""
    s = x * (resolution - 1)
    nearest = np.rint(s)
    s = np.where(np.abs(s - nearest) < _NODE_SNAP, nearest, s)
    left = np.clip(np.floor(s), 0, resolution - 2).astype(np.int64)
    return left, s - left


class ModulationGrid:
    def __init__(self, values, name='grid'):
        values = values if isinstance(values, Tensor) else Tensor(values, requires_grad=True)
        if values.ndim not in (2, 3):
            raise ShapeError("grid values must be [d, k] or [d1, d2, k]", values.shape)
        if any(d < 2 for d in values.shape[:-1]):
            raise ShapeError("every grid resolution must be >= 2", values.shape)
        if values.shape[-1] < 1:
            raise ShapeError("grid needs at least one channel", values.shape)
        if not np.all(np.isfinite(values.data)):
            raise ValueError(f"Grid '{name}' has non-finite values")
        values.requires_grad = True
        self.values = values
        self.name = name

    @classmethod
    def constant(cls, resolution, channels=1, value=0.0, name='grid'):
        if isinstance(resolution, int):
            resolution = (resolution,)
        data = np.full(tuple(resolution) + (channels,), value)
        return cls(Tensor(data, requires_grad=True), name=name)

    @property
    def rank(self):
        return self.values.ndim - 1

    @property
    def resolution(self):
        return tuple(self.values.shape[:-1])

    @property
    def channels(self):
        return self.values.shape[-1]

    @property
    def num_nodes(self):
        return int(np.prod(self.resolution))

    def __repr__(self):
        return f"ModulationGrid({self.name}, resolution={self.resolution}, channels={self.channels})"

    def weights(self, coords):
        coords = np.asarray(coords.data if isinstance(coords, Tensor) else coords)
        if self.rank == 1:
            if coords.ndim == 2:
                if coords.shape[1] != 1:
                    raise ShapeError("rank-1 grid expects [N] or [N x 1] coordinates", coords.shape)
                coords = coords[:, 0]
            x = check_unit_domain(coords)
            left, t = _axis_weights(x, self.resolution[0])
            indices = np.stack([left, left + 1], axis=1)
            weights = np.stack([1.0 - t, t], axis=1)
            return GridWeights(indices, weights, t[:, None])

        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ShapeError("rank-2 grid expects [N x 2] coordinates", coords.shape)
        xy = check_unit_domain(coords)
        d1, d2 = self.resolution
        i, tx = _axis_weights(xy[:, 0], d1)
        j, ty = _axis_weights(xy[:, 1], d2)
        indices = np.stack([i * d2 + j, i * d2 + j + 1, (i + 1) * d2 + j, (i + 1) * d2 + j + 1], axis=1)
        weights = np.stack([(1 - tx) * (1 - ty), (1 - tx) * ty, tx * (1 - ty), tx * ty], axis=1)
        return GridWeights(indices, weights, np.stack([tx, ty], axis=1))

    def interp(self, coords) -> Tensor:
        """Значения сетки в координатах: [N x k]. Градиент по узлам равен весам интерполяции."""
        gw = self.weights(coords)
        flat = self.values.data.reshape(self.num_nodes, self.channels)
        dtype = self.values.data.dtype
        w = gw.weights.astype(dtype)
        corners = flat[gw.indices]
        t = gw.fractions.astype(dtype)
        if self.rank == 1:
            out = _lerp(corners[:, 0], corners[:, 1], t[:, 0])
        else:
            near = _lerp(corners[:, 0], corners[:, 1], t[:, 1])
            far = _lerp(corners[:, 2], corners[:, 3], t[:, 1])
            out = _lerp(near, far, t[:, 0])
        num_nodes, channels = self.num_nodes, self.channels
        shape = self.values.shape

        def interp_backward(g):
            grad = np.empty((num_nodes, channels), dtype=dtype)
            for c in range(channels):
                grad[:, c] = np.bincount(gw.indices.ravel(), weights=(w * g[:, c:c + 1]).ravel(), minlength=num_nodes)
            return (grad.reshape(shape),)

        return record_op(f'interp{self.rank}', out, (self.values,), interp_backward)

    def to_matrix(self, channel=0):
        """Плотная матрица значений одного канала (для выгрузки в картинку)."""
        return np.array(self.values.data[..., channel])


def interp1(grid: ModulationGrid, x) -> Tensor:
    if grid.rank != 1:
        raise ShapeError("interp1 needs a rank-1 grid", grid.values.shape)
    return grid.interp(x)


def interp2(grid: ModulationGrid, xy) -> Tensor:
    if grid.rank != 2:
        raise ShapeError("interp2 needs a rank-2 grid", grid.values.shape)
    return grid.interp(xy)


def grid_grad_weights(grid: ModulationGrid, x) -> GridWeights:
    return grid.weights(x)
