"""Dense tensors with reverse-mode automatic differentiation on numpy.

The graph is built eagerly: any operation touching a tensor that requires
gradients records a backward closure, and ``Tensor.backward()`` walks the
graph once in reverse topological order, accumulating a gradient into every
reachable tensor that requires one.

Precision is a process-wide switch (float32 for training, float64 for
finite-difference verification); see :func:`set_default_dtype` and
:func:`precision`. Tensors are treated as immutable once consumed by an
operation — in-place writes are reserved for optimizer updates on leaves,
which happen outside any live graph.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

_DTYPE = np.dtype(np.float32)
_GRAD_ENABLED = True
_DEBUG_CHECKS = False


def set_default_dtype(dtype) -> None:
    """Set the process-wide dtype for newly created tensors."""
    global _DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dt}; use float32 or float64")
    _DTYPE = dt


def get_default_dtype() -> np.dtype:
    return _DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default dtype (e.g. float64 for grad checks)."""
    global _DTYPE
    saved = _DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _DTYPE = saved


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference fast path)."""
    global _GRAD_ENABLED
    saved = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = saved


def set_debug_checks(enabled: bool) -> None:
    """When enabled, every operation raises on non-finite outputs."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


class Tensor:
    """A dense real array plus optional gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool = False,
              parents: tuple = (), backward=None) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t.requires_grad = requires_grad
        t._parents = parents
        t._backward = backward
        return t

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- autodiff ------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from a scalar through the recorded graph.

        Every reachable tensor with ``requires_grad`` ends up with a
        ``grad`` of the same shape as its data.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        if not self.requires_grad:
            return

        # Iterative DFS post-order; graphs can be a few thousand nodes deep.
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data) if self.grad is None else self.grad + np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                parent.grad = pg if parent.grad is None else parent.grad + pg

    # -- operators -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self.data.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other, self.data.dtype), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


class Parameter:
    """A named model weight.

    Frozen parameters never receive optimizer updates; they are also
    excluded from backward passes (``requires_grad`` is cleared), so a
    frozen tower contributes to the forward graph without accumulating
    gradients of its own.
    """

    __slots__ = ("tensor", "frozen", "name")

    def __init__(self, data, frozen: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=_DTYPE)
        self.tensor = Tensor._wrap(arr.copy() if arr.base is not None else arr,
                                   requires_grad=not frozen)
        self.frozen = frozen
        self.name = name

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value: np.ndarray) -> None:
        self.tensor.data = value

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.shape

    @property
    def size(self) -> int:
        return self.tensor.size

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name or '<unnamed>'}, shape={self.shape}, frozen={self.frozen})"


# -- graph construction helpers -----------------------------------------


def _coerce(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.asarray(value, dtype=dtype))


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced by an operation")
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor._wrap(data, True, parents, backward)
    return Tensor._wrap(data)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- arithmetic ----------------------------------------------------------


def add(a, b) -> Tensor:
    a = _coerce(a, _DTYPE)
    b = _coerce(b, a.data.dtype)
    data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a = _coerce(a, _DTYPE)
    b = _coerce(b, a.data.dtype)
    data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _coerce(a, _DTYPE)
    b = _coerce(b, a.data.dtype)
    data = a.data * b.data

    def backward(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def div(a, b) -> Tensor:
    a = _coerce(a, _DTYPE)
    b = _coerce(b, a.data.dtype)
    data = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        return (-g,)

    return _make(-a.data, (a,), backward)


def power(a: Tensor, exponent: float) -> Tensor:
    p = float(exponent)
    data = a.data ** p

    def backward(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul requires operands with ndim >= 2")
    data = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _make(data, (a, b), backward)


# -- shape manipulation ---------------------------------------------------


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.data.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.data.shape),)

    return _make(data, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.data.ndim)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    data = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.data.shape),)

    return _make(data, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.data.shape),)

    return _make(data, (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    data = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return _make(data, (a,), backward)


def getitem(a: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing; use :func:`index_select` for fancy rows."""
    data = a.data[idx]

    def backward(g):
        out = np.zeros_like(a.data)
        out[idx] = g
        return (out,)

    return _make(data, (a,), backward)


def index_select(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather rows along axis 0; duplicate indices accumulate in backward."""
    if axis != 0:
        raise ValueError("index_select supports axis=0 only")
    idx = np.asarray(indices, dtype=np.intp)
    data = a.data.take(idx, axis=0)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(data, (a,), backward)


def concatenate(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make(data, tensors, backward)


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = np.broadcast_to(a.data, shape)

    def backward(g):
        return (_unbroadcast(g, a.data.shape),)

    return _make(data, (a,), backward)


# -- pointwise nonlinearities ---------------------------------------------


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _make(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return _make(data, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def backward(g):
        return (g * 0.5 / out,)

    return _make(out, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    positive = x >= 0
    z = np.exp(np.where(positive, -x, x))
    out = np.where(positive, 1.0 / (1.0 + z), z / (1.0 + z))

    def backward(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    data = a.data * mask

    def backward(g):
        return (g * mask,)

    return _make(data, (a,), backward)


_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    x_sq = x * x
    t = np.tanh(_GELU_K * (x + _GELU_C * x_sq * x))
    data = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_K * (1.0 + 3.0 * _GELU_C * x_sq)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(data, (a,), backward)


# -- reductions with structure ---------------------------------------------


def softmax(a: Tensor, axis: int) -> Tensor:
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ValueError(f"axis {axis} invalid for shape {a.data.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), backward)


def log_softmax(a: Tensor, axis: int) -> Tensor:
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ValueError(f"axis {axis} invalid for shape {a.data.shape}")
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), backward)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (population variance, eps inside sqrt)."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ValueError(f"gain/bias must have shape ({d},)")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = centered * inv
    data = y * gain.data + bias.data

    def backward(g):
        reduce_axes = tuple(range(g.ndim - 1))
        dgain = (g * y).sum(axis=reduce_axes)
        dbias = g.sum(axis=reduce_axes)
        dy = g * gain.data
        dx = (dy - dy.mean(axis=-1, keepdims=True)
              - y * (dy * y).mean(axis=-1, keepdims=True)) * inv
        return dx, dgain, dbias

    return _make(data, (x, gain, bias), backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer (or one-hot) labels."""
    if logits.data.ndim != 2:
        raise ValueError("logits must be [batch, classes]")
    n, k = logits.data.shape
    if k < 2:
        raise ValueError("cross_entropy needs at least 2 classes")
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if labels.shape != (n, k):
            raise ValueError(f"one-hot labels must have shape {(n, k)}")
        labels = labels.argmax(axis=1)
    labels = labels.astype(np.intp)
    if labels.shape != (n,):
        raise ValueError(f"labels must have shape ({n},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range [0, {k})")

    m = logits.data.max(axis=1, keepdims=True)
    shifted = logits.data - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    data = np.asarray(-logp[np.arange(n), labels].mean(), dtype=logits.data.dtype)

    def backward(g):
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        return (grad * (g / n),)

    return _make(data, (logits,), backward)


# -- finite-difference verification ----------------------------------------


@dataclass
class GradCheckEntry:
    label: str
    param_name: str
    index: int
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    """Per-coordinate comparison of analytic gradients vs central differences."""

    entries: list[GradCheckEntry]
    h: float

    @property
    def max_rel_err(self) -> float:
        return max((e.rel_err for e in self.entries), default=0.0)

    def max_by_label(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for e in self.entries:
            out[e.label] = max(out.get(e.label, 0.0), e.rel_err)
        return out

    def worst(self) -> GradCheckEntry | None:
        return max(self.entries, key=lambda e: e.rel_err, default=None)

    def to_text(self) -> str:
        lines = [f"finite-difference check, h={self.h:g}, {len(self.entries)} coordinates"]
        for label, err in sorted(self.max_by_label().items()):
            lines.append(f"  {label:<16s} max rel err {err:.3e}")
        lines.append(f"  overall max rel err {self.max_rel_err:.3e}")
        return "\n".join(lines)


# The central difference carries roundoff noise of roughly eps*|f|/(2h);
# the relative-error denominator is floored at a safe multiple of that, so
# near-zero gradients report noise-level errors instead of 0/0 blowups and
# the reported error stays comparable across step sizes.
_REL_ERR_FLOOR = 1e-6
_NOISE_SAFETY = 1e5


def _rel_err_floor(h: float, f_scale: float) -> float:
    noise = np.finfo(np.float64).eps * max(1.0, f_scale) / (2.0 * h)
    return max(_REL_ERR_FLOOR, _NOISE_SAFETY * noise)


def _coord_tensor(item) -> Tensor:
    return item.tensor if isinstance(item, Parameter) else item


def finite_diff_gradcheck(f: Callable[[], Tensor], coords, h: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients of ``f`` against central differences.

    ``coords`` is a sequence of ``(tensor_or_parameter, flat_index)`` or
    ``(tensor_or_parameter, flat_index, label)`` tuples. ``f`` must rebuild
    its forward pass from the current parameter values on every call.
    Requires float64 data (pre-condition of the harness).
    """
    if not 1e-6 <= h <= 1e-4:
        raise ValueError(f"h={h} outside [1e-6, 1e-4]")
    norm = []
    for item in coords:
        holder, index = item[0], int(item[1])
        label = item[2] if len(item) > 2 else ""
        t = _coord_tensor(holder)
        if isinstance(holder, Parameter) and holder.frozen:
            raise ValueError(f"frozen parameter {holder.name!r} cannot be grad-checked")
        if t.data.dtype != np.float64:
            raise ValueError("finite_diff_gradcheck requires float64 tensors (64-bit mode)")
        name = holder.name if isinstance(holder, Parameter) else ""
        norm.append((t, index, label, name))

    for t, _, _, _ in norm:
        t.grad = None
    out = f()
    if out.data.size != 1 or not np.isfinite(out.data):
        raise ValueError("objective must evaluate to a finite scalar")
    out.backward()
    analytic = [0.0 if t.grad is None else float(t.grad.flat[i]) for t, i, _, _ in norm]
    floor = _rel_err_floor(h, abs(float(out.data)))

    entries = []
    for (t, i, label, name), a in zip(norm, analytic):
        saved = t.data.flat[i]
        t.data.flat[i] = saved + h
        f_plus = float(f().data)
        t.data.flat[i] = saved - h
        f_minus = float(f().data)
        t.data.flat[i] = saved
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise ValueError(f"objective non-finite at perturbed coordinate {name or label}[{i}]")
        numeric = (f_plus - f_minus) / (2.0 * h)
        rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        entries.append(GradCheckEntry(label, name, i, a, numeric, rel))
    return GradCheckReport(entries, h)


def sample_coordinates(params: Iterable[Parameter], count: int, rng: np.random.Generator,
                       label: str = "") -> list[tuple[Parameter, int, str]]:
    """Sample flat coordinates across parameters, weighted by size.

    Frozen parameters are excluded from sampling.
    """
    live = [p for p in params if not p.frozen]
    if not live:
        return []
    sizes = np.array([p.size for p in live], dtype=np.float64)
    picks = rng.choice(len(live), size=count, p=sizes / sizes.sum())
    return [(live[k], int(rng.integers(live[k].size)), label) for k in picks]
