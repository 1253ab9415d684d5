# core/cam.py
"""
Слой CAM: стандартизация промежуточного признака и аффинная модуляция
скалярами γ, β, которые читаются из сеток Γ, B по координатам входа.

Три режима по форме признака:
    scalar  - F [N x C], статистики по C, один (γ, β) на строку;
    ray     - F [N x S x C], статистики по S x C (весь луч), один (γ, β) на луч;
    channel - F [N x C x H x W], статистики по H x W, (γ, β) на канал.
"""
import logging

import numpy as np
from django.conf import settings

from .exceptions import ShapeError
from .grid import ModulationGrid
from .tensor import Tensor, as_tensor

logger = logging.getLogger(__name__)

MODES = ('scalar', 'ray', 'channel')

# Оси нормализации по умолчанию (все, кроме батча; для 4D - кроме батча и канала)
DEFAULT_NORM_AXES = {
    'scalar': (1,),
    'ray': (1, 2),
    'channel': (2, 3),
}
FEATURE_RANKS = {'scalar': 2, 'ray': 3, 'channel': 4}

# Иерархия координат: время > направление взгляда > пространство
COORDINATE_PRIORITY = (
    ('time', ('t',)),
    ('view', ('phi', 'theta')),
    ('space', ('x', 'y', 'z')),
)


def select_coords(X, selector=None):
    """Подмножество столбцов X в заданном порядке; None - все столбцы."""
    data = X.data if isinstance(X, Tensor) else np.asarray(X)
    if data.ndim != 2:
        raise ShapeError("coordinates must be [N x D]", data.shape)
    if selector is None:
        return data
    selector = tuple(selector)
    dim = data.shape[1]
    for index in selector:
        if not 0 <= index < dim:
            raise ShapeError(f"coordinate selector index {index} out of range for D={dim}")
    return data[:, list(selector)]


def priority_selector(layout):
    """
    По подписям столбцов координат (например ('x','y','z','phi','theta','t'))
    возвращает индексы группы с наивысшим приоритетом.
    """
    layout = tuple(layout)
    for group, names in COORDINATE_PRIORITY:
        columns = tuple(i for i, name in enumerate(layout) if name in names)
        if columns:
            logger.debug(f"Coordinate priority picked '{group}' columns {columns} from layout {layout}")
            return columns
    raise ValueError(f"No known coordinate components in layout {layout}")


def standardize(F: Tensor, axes, eps) -> Tensor:
    """(F - μ) / sqrt(σ² + ε) с популяционной дисперсией по осям axes."""
    mu = F.mean(axes, keepdims=True)
    var = F.var(axes, keepdims=True)
    return (F - mu) / (var + eps).sqrt()


class CamLayer:
    def __init__(self, mode, channels, resolution, selector=None, normalize=True, eps=None,
                 norm_axes=None, grid_channels=None, name='cam'):
        if mode not in MODES:
            raise ValueError(f"Unknown CAM mode '{mode}' (expected one of {MODES})")
        eps = settings.CAM_EPS if eps is None else float(eps)
        if eps < 0:
            raise ValueError(f"CAM eps must be non-negative, got {eps}")
        if eps == 0:
            logger.debug(f"CAM layer '{name}' built with eps=0 (reference computation only)")
        if channels < 1:
            raise ShapeError(f"CAM layer needs at least one feature channel, got {channels}")

        if grid_channels is None:
            grid_channels = channels if mode == 'channel' else 1
        if mode != 'channel' and grid_channels != 1:
            raise ShapeError(f"'{mode}' mode uses single-channel grids, got {grid_channels} channels")
        if mode == 'channel' and grid_channels not in (1, channels):
            raise ShapeError(f"channel mode grid needs 1 or C={channels} channels, got {grid_channels}")

        if isinstance(resolution, int):
            resolution = (resolution,)
        resolution = tuple(resolution)
        if selector is not None and len(tuple(selector)) != len(resolution):
            raise ShapeError("coordinate selector length must equal grid rank", tuple(selector), resolution)

        self.mode = mode
        self.channels = channels
        self.normalize = normalize
        self.eps = eps
        self.norm_axes = tuple(norm_axes) if norm_axes is not None else DEFAULT_NORM_AXES[mode]
        if not self.norm_axes or any(not 1 <= axis < FEATURE_RANKS[mode] for axis in self.norm_axes):
            raise ShapeError(f"'{mode}' mode normalizes over axes 1..{FEATURE_RANKS[mode] - 1}, got {self.norm_axes}")
        self.selector = tuple(selector) if selector is not None else None
        self.name = name
        self.gamma = ModulationGrid.constant(resolution, grid_channels, settings.CAM_GAMMA_INIT, name=f'{name}.gamma')
        self.beta = ModulationGrid.constant(resolution, grid_channels, settings.CAM_BETA_INIT, name=f'{name}.beta')

    def __repr__(self):
        return (f"CamLayer({self.mode}, C={self.channels}, grid={self.gamma.resolution}x{self.gamma.channels}, "
                f"normalize={self.normalize}, eps={self.eps})")

    @property
    def grid_rank(self):
        return self.gamma.rank

    def parameters(self):
        return [('gamma', self.gamma.values), ('beta', self.beta.values)]

    def modulation(self, Xsel):
        """(γ, β) для каждого запроса: два тензора [N x k]."""
        return self.gamma.interp(Xsel), self.beta.interp(Xsel)

    def __call__(self, F, X):
        Xsel = select_coords(X, self.selector)
        if self.mode == 'scalar':
            return cam_scalar(self, F, Xsel)
        if self.mode == 'ray':
            return cam_ray(self, F, Xsel)
        return cam_channel(self, F, Xsel)

    def _features(self, F, mode, rank):
        if self.mode != mode:
            raise ValueError(f"CAM layer '{self.name}' is in '{self.mode}' mode, not '{mode}'")
        F = as_tensor(F)
        if F.ndim != rank:
            raise ShapeError(f"'{mode}' mode expects a rank-{rank} feature tensor", F.shape)
        if any(extent == 0 for extent in F.shape[1:]):
            raise ShapeError("CAM normalization unit is empty", F.shape)
        return F

    def _coords(self, F, Xsel):
        Xsel = np.asarray(Xsel.data if isinstance(Xsel, Tensor) else Xsel)
        if Xsel.ndim == 1:
            Xsel = Xsel[:, None]
        if Xsel.shape[0] != F.shape[0]:
            raise ShapeError("features and coordinates disagree on N", F.shape, Xsel.shape)
        if Xsel.shape[1] != self.grid_rank:
            raise ShapeError("selected coordinates must match grid rank", Xsel.shape, self.gamma.resolution)
        return Xsel

    def _modulate(self, F, Xsel, param_shape):
        normalized = standardize(F, self.norm_axes, self.eps) if self.normalize else F
        gamma, beta = self.modulation(Xsel)
        return gamma.reshape(param_shape) * normalized + beta.reshape(param_shape)


def cam_scalar(layer: CamLayer, F, X) -> Tensor:
    """F~[n, c] = γ_n (F[n, c] - μ_n) / sqrt(σ²_n + ε) + β_n; без нормализации - γ_n F + β_n."""
    F = layer._features(F, 'scalar', 2)
    Xsel = layer._coords(F, X)
    return layer._modulate(F, Xsel, (F.shape[0], 1))


def cam_ray(layer: CamLayer, F, Xsel) -> Tensor:
    """Луч из S точек - одна единица нормализации; один (γ, β) на луч."""
    F = layer._features(F, 'ray', 3)
    Xsel = layer._coords(F, Xsel)
    return layer._modulate(F, Xsel, (F.shape[0], 1, 1))


def cam_channel(layer: CamLayer, F, Xsel) -> Tensor:
    """Нормализация по (H, W) для каждого (n, c); γ, β - столбец канала c сетки по t_n."""
    F = layer._features(F, 'channel', 4)
    if layer.gamma.channels not in (1, F.shape[1]):
        raise ShapeError("grid channel count differs from feature channels", layer.gamma.values.shape, F.shape)
    Xsel = layer._coords(F, Xsel)
    return layer._modulate(F, Xsel, (F.shape[0], layer.gamma.channels, 1, 1))
