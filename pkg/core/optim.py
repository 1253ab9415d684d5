# core/optim.py
"""Adam с группами параметров, ступенчатое расписание и min-max квантование."""
import logging
from dataclasses import dataclass, field

import numpy as np
from django.conf import settings

from .exceptions import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

QUANTIZATION_BITS = (6, 8)


@dataclass
class ParamGroup:
    name: str
    params: list # [(путь, Tensor)]
    lr: float


@dataclass
class AdamState:
    betas: tuple = None
    eps: float = None
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.betas is None:
            self.betas = tuple(settings.CAM_ADAM_BETAS)
        if self.eps is None:
            self.eps = settings.CAM_ADAM_EPS


class Adam:
    def __init__(self, groups, betas=None, eps=None):
        self.groups = [g if isinstance(g, ParamGroup) else ParamGroup(**g) for g in groups]
        for group in self.groups:
            if group.lr <= 0:
                raise ValueError(f"Learning rate of group '{group.name}' must be positive, got {group.lr}")
        self.state = AdamState(betas=betas, eps=eps)

    def __repr__(self):
        rates = ', '.join(f"{g.name}={g.lr:g}" for g in self.groups)
        return f"Adam(step={self.state.step}, {rates})"

    def set_lr(self, rates):
        for group in self.groups:
            if group.name in rates:
                group.lr = rates[group.name]

    def lr(self, group_name):
        for group in self.groups:
            if group.name == group_name:
                return group.lr
        raise KeyError(group_name)

    def step(self, grads=None):
        """
        Один шаг Adam с коррекцией смещения. grads: {путь: массив}; по умолчанию берется tensor.grad.
        Отсутствующий градиент считается нулевым.
        """
        state = self.state
        beta1, beta2 = state.betas
        # Сначала проверяем все градиенты, чтобы не обновить параметры наполовину
        resolved = []
        for group in self.groups:
            for path, tensor in group.params:
                grad = grads.get(path) if grads is not None else tensor.grad
                if grad is None:
                    grad = np.zeros_like(tensor.data)
                grad = np.asarray(grad)
                if grad.shape != tensor.shape:
                    raise ShapeError(f"gradient shape for {path}", grad.shape, tensor.shape)
                if not np.all(np.isfinite(grad)):
                    raise NonFiniteError("Non-finite gradient", iteration=state.step, path=path)
                resolved.append((group, path, tensor, grad))

        state.step += 1
        bc1 = 1.0 - beta1 ** state.step
        bc2 = 1.0 - beta2 ** state.step
        for group, path, tensor, grad in resolved:
            if path not in state.m:
                state.m[path] = np.zeros(tensor.shape, dtype=np.float64)
                state.v[path] = np.zeros(tensor.shape, dtype=np.float64)
            m = state.m[path] = beta1 * state.m[path] + (1.0 - beta1) * grad
            v = state.v[path] = beta2 * state.v[path] + (1.0 - beta2) * (grad * grad)
            update = group.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
            # Новый массив: данные тензора не меняются на месте
            tensor.data = (tensor.data - update).astype(tensor.data.dtype)


def adam_step(optimizer: Adam, grads=None):
    optimizer.step(grads)
    return optimizer.state


class StepSchedule:
    """Начальная скорость каждой группы, умноженная на factor^(число пройденных вех)."""

    def __init__(self, initial, milestones=(), factor=0.1):
        self.initial = dict(initial)
        self.milestones = tuple(int(m) for m in milestones)
        self.factor = float(factor)
        if any(rate <= 0 for rate in self.initial.values()):
            raise ValueError(f"Learning rates must be positive: {self.initial}")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError(f"Milestones must be strictly increasing: {self.milestones}")
        if self.factor <= 0:
            raise ValueError(f"Decay factor must be positive, got {self.factor}")

    def __repr__(self):
        return f"StepSchedule({self.initial}, milestones={self.milestones}, factor={self.factor})"

    def __call__(self, iteration):
        passed = sum(1 for milestone in self.milestones if iteration >= milestone)
        return {name: rate * self.factor ** passed for name, rate in self.initial.items()}


def lr_at(schedule: StepSchedule, iteration):
    if iteration < 0:
        raise ValueError(f"Iteration must be non-negative, got {iteration}")
    return schedule(iteration)


def _check_bits(bits):
    if bits not in QUANTIZATION_BITS:
        raise ValueError(f"Quantization supports {QUANTIZATION_BITS} bits, got {bits}")


def quantize_minmax(values, bits):
    """
    Равномерная сетка из 2^bits уровней на [min, max] тензора.
    Возвращает (codes, scale, offset); постоянный тензор -> все коды 0, scale 0.
    """
    _check_bits(bits)
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return np.zeros(values.shape, dtype=np.uint32), 0.0, 0.0
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros(values.shape, dtype=np.uint32), 0.0, lo
    levels = 2 ** bits - 1
    scale = (hi - lo) / levels
    scaled = (values - lo) / scale
    # Округление половины от нуля (значения неотрицательны)
    codes = np.floor(scaled + 0.5)
    codes = np.clip(codes, 0, levels).astype(np.uint32)
    return codes, scale, lo


def dequantize(codes, scale, offset):
    return np.asarray(codes, dtype=np.float64) * scale + offset


def quantize_state(named_arrays, bits, skip=()):
    """
    Послойное квантование всех тензоров, включая Γ и B.
    Возвращает ({путь: деквантованный массив}, {путь: макс. ошибка}).
    """
    _check_bits(bits)
    restored, errors = {}, {}
    for path, array in named_arrays.items():
        array = np.asarray(array)
        if path in skip:
            restored[path] = array
            errors[path] = 0.0
            continue
        codes, scale, offset = quantize_minmax(array, bits)
        restored[path] = dequantize(codes, scale, offset).astype(array.dtype)
        errors[path] = float(np.max(np.abs(restored[path].astype(np.float64) - array))) if array.size else 0.0
    logger.info(f"Quantized {len(restored) - len(skip)} tensors to {bits} bits; "
                f"worst error {max(errors.values(), default=0.0):.3g}.")
    return restored, errors
