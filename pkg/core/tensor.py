# core/tensor.py
"""
Плотный вещественный тензор поверх numpy и лента обратного режима (define-by-run).

Каждая операция над отслеживаемыми тензорами записывается в активную ленту
(Tape) вместе с правилом обратного прохода. backward(root) проходит ленту
в обратном порядке и раскладывает градиенты по листьям.
"""
import contextlib
import contextvars
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from django.conf import settings

from .exceptions import ShapeError

logger = logging.getLogger(__name__)

ELEMENTWISE_KINDS = (
    'add', 'sub', 'mul', 'div', 'relu', 'sin', 'cos',
    'sigmoid', 'sqrt', 'square', 'scalar-affine',
)
REDUCE_KINDS = ('mean', 'variance', 'sum')

_dtype_var = contextvars.ContextVar('cam_dtype', default=None)
_tape_var = contextvars.ContextVar('cam_tape', default=None)
_grad_enabled_var = contextvars.ContextVar('cam_grad_enabled', default=True)


def default_dtype():
    dtype = _dtype_var.get()
    if dtype is None:
        dtype = np.dtype(settings.CAM_TENSOR_DTYPE)
    return dtype


def _accumulate_dtype():
    # None -> numpy накапливает в dtype входа (float32 и выше)
    return np.float64 if settings.CAM_ACCUMULATE_DOUBLE else None


@contextlib.contextmanager
def precision(dtype):
    """Временно меняет точность новых тензоров ('float64' - отладочный режим)."""
    token = _dtype_var.set(np.dtype(dtype))
    try:
        yield
    finally:
        _dtype_var.reset(token)


@contextlib.contextmanager
def no_grad():
    token = _grad_enabled_var.set(False)
    try:
        yield
    finally:
        _grad_enabled_var.reset(token)


@dataclass
class Operation:
    kind: str
    inputs: tuple # node-id входа или None для констант
    output: int
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Упорядоченный список операций; входы любой операции записаны раньше неё."""

    def __init__(self):
        self.operations: list[Operation] = []
        self._tensors: list['Tensor'] = [] # node-id -> тензор

    def __len__(self):
        return len(self.operations)

    def register(self, tensor: 'Tensor') -> int:
        if tensor._tape is self:
            return tensor._node
        if tensor._op is not None:
            raise ValueError(f"Tensor {tensor.shape} was produced on another tape; its history is lost.")
        node = len(self._tensors)
        self._tensors.append(tensor)
        tensor._tape = self
        tensor._node = node
        return node

    def record(self, kind, inputs, output: 'Tensor', backward):
        ids = tuple(self.register(t) if t.requires_grad else None for t in inputs)
        node = self.register(output)
        op = Operation(kind=kind, inputs=ids, output=node, backward=backward)
        output._op = op
        self.operations.append(op)
        return op

    def backward(self, root: 'Tensor') -> dict:
        if root.shape != ():
            raise ShapeError("backward() needs a scalar root", root.shape)
        if not root.requires_grad or root._tape is not self:
            raise ValueError("backward() root is not tracked on this tape")

        grads = {root._node: np.ones((), dtype=root.data.dtype)}
        for op in reversed(self.operations):
            grad_out = grads.pop(op.output, None)
            if grad_out is None:
                continue
            for node, grad_in in zip(op.inputs, op.backward(grad_out)):
                if node is None or grad_in is None:
                    continue
                # Разветвление: градиенты складываются
                if node in grads:
                    grads[node] = grads[node] + grad_in
                else:
                    grads[node] = grad_in

        leaf_grads = {}
        for node, grad in grads.items():
            tensor = self._tensors[node]
            if tensor._op is None:
                grad = np.asarray(grad, dtype=tensor.data.dtype).reshape(tensor.shape)
                tensor.grad = grad
                leaf_grads[tensor] = grad
        logger.debug(f"Backward over {len(self.operations)} operations, {len(leaf_grads)} leaves reached.")
        return leaf_grads

    def release(self):
        """
        Отвязывает ленту от тензоров: лента, операции и замыкания с активациями
        освобождаются подсчетом ссылок, без сборщика циклов. Градиенты листьев остаются.
        """
        for tensor in self._tensors:
            tensor._tape = None
            tensor._node = None
            tensor._op = None
        self.operations.clear()
        self._tensors.clear()


def current_tape() -> Tape:
    tape = _tape_var.get()
    if tape is None:
        tape = Tape()
        _tape_var.set(tape)
    return tape


@contextlib.contextmanager
def recording():
    """Новая лента на время блока (одна итерация обучения = одна лента)."""
    tape = Tape()
    token = _tape_var.set(tape)
    try:
        yield tape
    finally:
        tape.release()
        _tape_var.reset(token)


class Tensor:
    __array_priority__ = 1000 # ndarray + Tensor -> Tensor.__radd__

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or default_dtype())
        self.requires_grad = requires_grad
        self.grad = None
        self._tape = None
        self._node = None
        self._op = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return self._op is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return elementwise('add', self, other)

    def __radd__(self, other):
        return elementwise('add', other, self)

    def __sub__(self, other):
        return elementwise('sub', self, other)

    def __rsub__(self, other):
        return elementwise('sub', other, self)

    def __mul__(self, other):
        return elementwise('mul', self, other)

    def __rmul__(self, other):
        return elementwise('mul', other, self)

    def __truediv__(self, other):
        return elementwise('div', self, other)

    def __rtruediv__(self, other):
        return elementwise('div', other, self)

    def __neg__(self):
        return elementwise('scalar-affine', self, scale=-1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def relu(self):
        return elementwise('relu', self)

    def sigmoid(self):
        return elementwise('sigmoid', self)

    def sin(self):
        return elementwise('sin', self)

    def cos(self):
        return elementwise('cos', self)

    def sqrt(self):
        return elementwise('sqrt', self)

    def square(self):
        return elementwise('square', self)

    def sum(self, axes=None, keepdims=False):
        return reduce('sum', self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return reduce('mean', self, axes, keepdims)

    def var(self, axes=None, keepdims=False):
        return reduce('variance', self, axes, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def record_op(kind, data, inputs, backward) -> Tensor:
    """
    Создает выходной тензор и, если хотя бы один вход отслеживается,
    записывает операцию в активную ленту. Используется и внешними модулями
    (интерполяция сеток) для собственных правил обратного прохода.
    """
    out = Tensor(data)
    if _grad_enabled_var.get() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        current_tape().record(kind, inputs, out, backward)
    return out


def unbroadcast(grad, shape):
    """Суммирует градиент по осям, размноженным при broadcasting."""
    shape = tuple(shape)
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def broadcast_shape(a_shape, b_shape):
    try:
        return np.broadcast_shapes(a_shape, b_shape)
    except ValueError:
        raise ShapeError("operands could not be broadcast together", a_shape, b_shape) from None


def elementwise(op_kind, a, b=None, scale=1.0, shift=0.0) -> Tensor:
    """Поэлементные операции; scalar-affine вычисляет scale * a + shift."""
    if op_kind not in ELEMENTWISE_KINDS:
        raise ValueError(f"Unknown elementwise op '{op_kind}'")
    a = as_tensor(a)
    x = a.data

    if op_kind in ('add', 'sub', 'mul', 'div'):
        if b is None:
            raise ValueError(f"Elementwise '{op_kind}' needs two operands")
        b = as_tensor(b)
        y = b.data
        broadcast_shape(x.shape, y.shape)
        a_shape, b_shape = x.shape, y.shape

        if op_kind == 'add':
            return record_op('add', x + y, (a, b), lambda g: (unbroadcast(g, a_shape), unbroadcast(g, b_shape)))
        if op_kind == 'sub':
            return record_op('sub', x - y, (a, b), lambda g: (unbroadcast(g, a_shape), unbroadcast(-g, b_shape)))
        if op_kind == 'mul':
            return record_op('mul', x * y, (a, b),
                             lambda g: (unbroadcast(g * y, a_shape), unbroadcast(g * x, b_shape)))
        # div: деление на точный ноль дает inf/nan, их ловит проверка в тренере
        with np.errstate(divide='ignore', invalid='ignore'):
            out = x / y

        def div_backward(g):
            with np.errstate(divide='ignore', invalid='ignore'):
                return unbroadcast(g / y, a_shape), unbroadcast(-g * x / (y * y), b_shape)
        return record_op('div', out, (a, b), div_backward)

    if op_kind == 'relu':
        mask = x > 0
        return record_op('relu', np.where(mask, x, 0).astype(x.dtype), (a,), lambda g: (g * mask,))
    if op_kind == 'sin':
        return record_op('sin', np.sin(x), (a,), lambda g: (g * np.cos(x),))
    if op_kind == 'cos':
        return record_op('cos', np.cos(x), (a,), lambda g: (-g * np.sin(x),))
    if op_kind == 'sigmoid':
        # tanh-форма не переполняется при больших |x|
        out = (0.5 * (1.0 + np.tanh(0.5 * x))).astype(x.dtype)
        return record_op('sigmoid', out, (a,), lambda g: (g * out * (1.0 - out),))
    if op_kind == 'sqrt':
        out = np.sqrt(x)

        def sqrt_backward(g):
            with np.errstate(divide='ignore', invalid='ignore'):
                return (g * 0.5 / out,)
        return record_op('sqrt', out, (a,), sqrt_backward)
    if op_kind == 'square':
        return record_op('square', x * x, (a,), lambda g: (g * 2.0 * x,))
    # scalar-affine
    out = (x * scale + shift).astype(x.dtype)
    return record_op('scalar-affine', out, (a,), lambda g: (g * scale,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects two matrices", a.shape, b.shape)
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul inner dimensions differ", a.shape, b.shape)
    x, y = a.data, b.data
    return record_op('matmul', x @ y, (a, b), lambda g: (g @ y.T, x.T @ g))


def _normalize_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    normalized = []
    for axis in axes:
        if not -ndim <= axis < ndim:
            raise ShapeError(f"axis {axis} out of range for tensor of rank {ndim}")
        normalized.append(axis % ndim)
    return tuple(sorted(set(normalized)))


def reduce(stat_kind, a, axes=None, keepdims=False) -> Tensor:
    """mean / variance (популяционная, делитель n) / sum по указанным осям."""
    if stat_kind not in REDUCE_KINDS:
        raise ValueError(f"Unknown reduction '{stat_kind}'")
    a = as_tensor(a)
    x = a.data
    axes = _normalize_axes(axes, x.ndim)
    count = int(np.prod([x.shape[i] for i in axes])) if axes else 1
    if count == 0:
        raise ShapeError(f"empty reduction over axes {axes}", x.shape)

    kept_shape = tuple(1 if i in axes else n for i, n in enumerate(x.shape))
    acc = _accumulate_dtype()
    dtype = x.dtype

    def expand(g):
        return np.broadcast_to(np.reshape(g, kept_shape), x.shape)

    if stat_kind == 'sum':
        out = x.sum(axis=axes, keepdims=keepdims, dtype=acc).astype(dtype)
        return record_op('sum', out, (a,), lambda g: (np.array(expand(g)),))
    if stat_kind == 'mean':
        out = x.mean(axis=axes, keepdims=keepdims, dtype=acc).astype(dtype)
        return record_op('mean', out, (a,), lambda g: (expand(g) / count,))

    mu = x.mean(axis=axes, keepdims=True, dtype=acc)
    centered = (x - mu).astype(dtype)
    out = (centered * centered).mean(axis=axes, keepdims=keepdims, dtype=acc).astype(dtype)
    # d var / d x_i = 2 (x_i - mu) / n; зависимость от mu сокращается
    return record_op('variance', out, (a,), lambda g: (expand(g) * (2.0 / count) * centered,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    original = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("cannot reshape", original, tuple(shape)) from None
    return record_op('reshape', out, (a,), lambda g: (g.reshape(original),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return record_op('transpose', a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    datas = [t.data for t in tensors]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError:
        raise ShapeError("cannot concatenate", *(d.shape for d in datas)) from None
    bounds = np.cumsum([d.shape[axis] for d in datas])[:-1]
    return record_op('concat', out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def backward(root: Tensor) -> dict:
    """Градиенты root по всем отслеживаемым листьям; также пишет их в leaf.grad."""
    if not isinstance(root, Tensor) or not root.requires_grad or root._tape is None:
        raise ValueError("backward() root must be a grad-tracked tensor")
    return root._tape.backward(root)


def gradcheck(fn, arrays, step=1e-3, atol=1e-6):
    """
    Сравнивает градиенты ленты с центральными разностями.
    Разности считаются в float64, аналитика - в текущей точности.
    Возвращает максимум |auto - fd| / (|fd| + atol) по всем элементам.
    """
    with recording():
        leaves = [Tensor(np.array(arr), requires_grad=True) for arr in arrays]
        out = fn(*leaves)
        backward(out)
        analytic = [np.zeros(leaf.shape) if leaf.grad is None else leaf.grad.astype(np.float64) for leaf in leaves]

    worst = 0.0
    with precision('float64'), no_grad():
        base = [np.array(arr, dtype=np.float64) for arr in arrays]
        for k, arr in enumerate(base):
            flat = arr.reshape(-1)
            numeric = np.zeros_like(flat)
            for i in range(flat.size):
                saved = flat[i]
                flat[i] = saved + step
                plus = fn(*[Tensor(b) for b in base]).item()
                flat[i] = saved - step
                minus = fn(*[Tensor(b) for b in base]).item()
                flat[i] = saved
                numeric[i] = (plus - minus) / (2.0 * step)
            error = np.abs(analytic[k].reshape(-1) - numeric) / (np.abs(numeric) + atol)
            if error.size:
                worst = max(worst, float(error.max()))
    return worst
