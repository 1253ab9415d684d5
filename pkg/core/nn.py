# core/nn.py
"""
Кодирование координат, линейные слои, активации и FieldModel -
упорядоченная композиция стадий, отображающая координаты X в сигнал.
"""
import logging
import math

import numpy as np

from .cam import CamLayer, priority_selector
from .exceptions import ShapeError
from .grid import check_unit_domain
from .tensor import Tensor, as_tensor, concat, matmul, transpose

logger = logging.getLogger(__name__)

ACTIVATIONS = ('relu', 'sigmoid', 'identity')


class FourierEncoding:
    """[cos(2π B x), sin(2π B x)]; B ~ N(0, σ_g²), фиксирована и не обучается."""
    kind = 'fourier'

    def __init__(self, in_dim, num_frequencies, scale=10.0, seed=0, include_input=False, matrix=None):
        if in_dim < 1 or num_frequencies < 1:
            raise ShapeError(f"encoding needs positive dims, got in_dim={in_dim}, m={num_frequencies}")
        self.in_dim = in_dim
        self.num_frequencies = num_frequencies
        self.scale = float(scale)
        self.seed = int(seed)
        self.include_input = include_input
        if matrix is None:
            rng = np.random.default_rng(self.seed)
            matrix = rng.normal(0.0, self.scale, size=(num_frequencies, in_dim))
        self.matrix = Tensor(matrix)
        if self.matrix.shape != (num_frequencies, in_dim):
            raise ShapeError("projection matrix shape", self.matrix.shape, (num_frequencies, in_dim))

    @classmethod
    def from_matrix(cls, matrix, include_input=False):
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(matrix.shape[1], matrix.shape[0], scale=0.0, include_input=include_input, matrix=matrix)

    @property
    def out_dim(self):
        return 2 * self.num_frequencies + (self.in_dim if self.include_input else 0)

    def __repr__(self):
        return f"{type(self).__name__}(D={self.in_dim}, m={self.num_frequencies}, out={self.out_dim})"

    def parameters(self):
        return []

    def __call__(self, x):
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError("encoding input dimension", x.shape, (None, self.in_dim))
        projected = matmul(x, transpose(self.matrix)) * (2.0 * math.pi)
        parts = [projected.cos(), projected.sin()]
        if self.include_input:
            parts.insert(0, x)
        return concat(parts, axis=1)


class PositionalEncoding(FourierEncoding):
    """
    Детерминированное кодирование по степеням двойки: угловые частоты 2^k π,
    k = linspace(0, max_octave, m) по каждой оси. Без max_octave k = 0..m-1.
    """
    kind = 'positional'

    def __init__(self, in_dim, num_frequencies, include_input=True, max_octave=None):
        if max_octave is None:
            max_octave = num_frequencies - 1
        if max_octave < 0:
            raise ValueError(f"max_octave must be >= 0, got {max_octave}")
        # 2π * (2^k / 2) = 2^k π
        cycles = 2.0 ** np.linspace(0.0, max_octave, num_frequencies) / 2.0
        matrix = np.zeros((in_dim * num_frequencies, in_dim))
        for d in range(in_dim):
            matrix[d * num_frequencies:(d + 1) * num_frequencies, d] = cycles
        super().__init__(in_dim, in_dim * num_frequencies, scale=0.0, include_input=include_input, matrix=matrix)
        self.frequencies_per_axis = num_frequencies
        self.max_octave = float(max_octave)


def fourier_features(encoding: FourierEncoding, x):
    return encoding(x)


class LinearLayer:
    kind = 'linear'

    def __init__(self, weight, bias):
        weight, bias = as_tensor(weight), as_tensor(bias)
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise ShapeError("linear layer weight [out x in] and bias [out]", weight.shape, bias.shape)
        if not (np.all(np.isfinite(weight.data)) and np.all(np.isfinite(bias.data))):
            raise ValueError("Linear layer parameters must be finite")
        weight.requires_grad = True
        bias.requires_grad = True
        self.weight = weight
        self.bias = bias

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]

    def __repr__(self):
        return f"LinearLayer({self.in_dim} -> {self.out_dim})"

    def parameters(self):
        return [('weight', self.weight), ('bias', self.bias)]

    def __call__(self, x):
        x = as_tensor(x)
        if x.shape[-1] != self.in_dim:
            raise ShapeError("linear layer input width", x.shape, (self.in_dim,))
        # Признаки большего ранга ([N x S x C]) обрабатываются по последней оси
        lead = x.shape[:-1]
        flat = x.reshape(-1, self.in_dim) if x.ndim != 2 else x
        out = matmul(flat, transpose(self.weight)) + self.bias
        return out.reshape(lead + (self.out_dim,)) if x.ndim != 2 else out


def init_linear(in_dim, out_dim, seed=0) -> LinearLayer:
    """Веса ~ U(-1/sqrt(in), 1/sqrt(in)), смещения - нули; детерминировано по seed."""
    if in_dim < 1 or out_dim < 1:
        raise ShapeError(f"linear layer dims must be positive, got in={in_dim}, out={out_dim}")
    bound = 1.0 / math.sqrt(in_dim)
    rng = np.random.default_rng(seed)
    weight = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    return LinearLayer(Tensor(weight), Tensor(np.zeros(out_dim)))


class Activation:
    kind = 'activation'

    def __init__(self, name):
        if name not in ACTIVATIONS:
            raise ValueError(f"Unknown activation '{name}'")
        self.name = name

    def __repr__(self):
        return f"Activation({self.name})"

    def parameters(self):
        return []

    def __call__(self, x):
        if self.name == 'relu':
            return x.relu()
        if self.name == 'sigmoid':
            return x.sigmoid()
        return x


class CamStage:
    """CAM внутри модели: получает признак и исходные координаты."""
    kind = 'cam'

    def __init__(self, layer: CamLayer):
        self.layer = layer

    def __repr__(self):
        return f"CamStage({self.layer!r})"

    def parameters(self):
        return self.layer.parameters()

    def __call__(self, h, coords):
        return self.layer(h, coords)


class FieldModel:
    def __init__(self, stages, in_dim, out_dim):
        self.stages = list(stages)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.validate()

    def __repr__(self):
        inner = ', '.join(repr(s) for s in self.stages)
        return f"FieldModel({self.in_dim} -> {self.out_dim}: {inner})"

    def validate(self):
        width = self.in_dim
        for i, stage in enumerate(self.stages):
            if stage.kind in ('fourier', 'positional'):
                if i != 0:
                    raise ShapeError(f"encoding must be the first stage (found at stage {i})")
                if stage.in_dim != width:
                    raise ShapeError(f"stage {i} encoding input", (stage.in_dim,), (width,))
                width = stage.out_dim
            elif stage.kind == 'linear':
                if stage.in_dim != width:
                    raise ShapeError(f"stage {i} linear input", (stage.in_dim,), (width,))
                width = stage.out_dim
            elif stage.kind == 'cam':
                if stage.layer.channels != width:
                    raise ShapeError(f"stage {i} CAM channels", (stage.layer.channels,), (width,))
        if width != self.out_dim:
            raise ShapeError("model output width", (width,), (self.out_dim,))

    def parameters(self):
        """(путь, тензор, группа) - группа 'grid' для Γ/B, иначе 'network'."""
        for i, stage in enumerate(self.stages):
            for name, tensor in stage.parameters():
                group = 'grid' if stage.kind == 'cam' else 'network'
                yield f'stage{i}.{stage.kind}.{name}', tensor, group

    def named_tensors(self):
        return {path: tensor for path, tensor, _ in self.parameters()}

    @property
    def num_parameters(self):
        return int(sum(tensor.data.size for _, tensor, _ in self.parameters()))

    @property
    def cam_layers(self):
        return [stage.layer for stage in self.stages if stage.kind == 'cam']

    def forward(self, x, capture=False):
        coords = check_unit_domain(x.data if isinstance(x, Tensor) else x)
        if coords.ndim != 2 or coords.shape[1] != self.in_dim:
            raise ShapeError("model input coordinates", coords.shape, (None, self.in_dim))
        h = Tensor(coords)
        captured = []
        for stage in self.stages:
            h = stage(h, coords) if stage.kind == 'cam' else stage(h)
            if capture:
                captured.append(h)
        return (h, captured) if capture else h

    __call__ = forward


def forward(model: FieldModel, x, capture=False):
    return model.forward(x, capture=capture)


def build_model(model_cfg, cam_cfg, grid_cfg, in_dim, out_dim, seed=0, coordinate_layout=None) -> FieldModel:
    """
    Собирает MLP из секций конфига: [кодирование] -> (linear -> [CAM] -> act) x (depth-1) -> linear -> head.
    CAM ставится после линейного слоя и перед активацией.
    """
    stages = []
    width = in_dim
    if model_cfg.encoding == 'fourier':
        encoding = FourierEncoding(in_dim, model_cfg.num_frequencies, model_cfg.gaussian_scale,
                                   seed=seed, include_input=model_cfg.include_input)
        stages.append(encoding)
        width = encoding.out_dim
    elif model_cfg.encoding == 'positional':
        encoding = PositionalEncoding(in_dim, model_cfg.num_frequencies, include_input=model_cfg.include_input,
                                      max_octave=model_cfg.max_octave)
        stages.append(encoding)
        width = encoding.out_dim

    placements = set(cam_cfg.placements) if cam_cfg.enabled else set()
    hidden = model_cfg.depth - 1
    bad = [p for p in placements if not 0 <= p < hidden]
    if bad:
        raise ShapeError(f"CAM placements {sorted(bad)} do not reference hidden layers 0..{hidden - 1}")

    for layer_index in range(hidden):
        stages.append(init_linear(width, model_cfg.width, seed=seed + 1 + layer_index))
        width = model_cfg.width
        if layer_index in placements:
            selector = cam_cfg.selector
            if selector is None and coordinate_layout is not None:
                selector = priority_selector(coordinate_layout)
            layer = CamLayer(cam_cfg.mode, width, grid_cfg.resolution, selector=selector,
                             normalize=cam_cfg.normalize, eps=cam_cfg.eps, norm_axes=cam_cfg.norm_axes,
                             grid_channels=grid_cfg.channels, name=f'cam{layer_index}')
            stages.append(CamStage(layer))
        stages.append(Activation('relu'))

    stages.append(init_linear(width, out_dim, seed=seed + 1 + hidden))
    if model_cfg.head != 'identity':
        stages.append(Activation(model_cfg.head))

    model = FieldModel(stages, in_dim, out_dim)
    logger.info(f"Built model with {len(stages)} stages, {model.num_parameters} parameters, "
                f"{len(model.cam_layers)} CAM layer(s).")
    return model
