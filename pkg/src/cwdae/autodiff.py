"""Small reverse-mode autodiff engine on top of numpy.

Everything runs in float64. A :class:`Tape` records every primitive whose
inputs require gradients while it is active; ``Tape.gradient`` then walks the
record backwards once. Outside a tape the same ops are plain numpy
evaluations, which is what generation and evaluation use.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "NonFiniteError",
    "Tensor",
    "Tape",
    "as_tensor",
    "concat",
    "elementwise",
    "straight_through",
]


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Dense float64 array that can take part in gradient recording."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return _record(self.data + other.data, (self, other),
                       lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)), "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return _record(self.data - other.data, (self, other),
                       lambda g: (_unbroadcast(g, a), -_unbroadcast(g, b)), "sub")

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __neg__(self):
        return _record(-self.data, (self,), lambda g: (-g,), "neg")

    def __mul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return _record(x * y, (self, other),
                       lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
                       "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        out = x / y
        return _record(out, (self, other),
                       lambda g: (_unbroadcast(g / y, x.shape),
                                  _unbroadcast(-g * out / y, y.shape)),
                       "div")

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, p: float):
        x = self.data
        return _record(x ** p, (self,), lambda g: (g * p * x ** (p - 1),), "pow")

    def __matmul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return _record(x @ y, (self, other), lambda g: (g @ y.T, x.T @ g), "matmul")

    def __getitem__(self, idx):
        shape = self.shape

        def vjp(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return _record(self.data[idx], (self,), vjp, "gather")

    # -- shape ------------------------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        old = self.shape
        return _record(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),), "reshape")

    def transpose(self) -> "Tensor":
        return _record(self.data.T, (self,), lambda g: (g.T,), "transpose")

    # -- reductions -------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return _record(self.data.sum(axis=axis, keepdims=keepdims), (self,), vjp, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- elementwise ------------------------------------------------------
    def exp(self) -> "Tensor":
        with np.errstate(over="ignore"):
            out = np.exp(self.data)
        return _record(out, (self,), lambda g: (g * out,), "exp")

    def log(self) -> "Tensor":
        x = self.data
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.log(x)
        return _record(out, (self,), lambda g: (g / x,), "log")

    def sqrt(self) -> "Tensor":
        with np.errstate(invalid="ignore"):
            out = np.sqrt(self.data)
        return _record(out, (self,), lambda g: (0.5 * g / out,), "sqrt")

    def softplus(self) -> "Tensor":
        x = self.data
        out = np.logaddexp(0.0, x)
        return _record(out, (self,), lambda g: (g * _sigmoid(x),), "softplus")

    def relu(self) -> "Tensor":
        x = self.data
        return _record(np.maximum(x, 0.0), (self,), lambda g: (g * (x > 0),), "relu")

    def elu(self, alpha: float = 1.0) -> "Tensor":
        x = self.data
        neg = alpha * np.expm1(np.minimum(x, 0.0))
        out = np.where(x > 0, x, neg)
        return _record(out, (self,), lambda g: (g * np.where(x > 0, 1.0, neg + alpha),), "elu")

    def clamp_min(self, floor: float) -> "Tensor":
        x = self.data
        return _record(np.maximum(x, floor), (self,), lambda g: (g * (x > floor),), "clamp_min")

    def softmax(self, axis: int = -1) -> "Tensor":
        x = self.data
        e = np.exp(x - x.max(axis=axis, keepdims=True))
        out = e / e.sum(axis=axis, keepdims=True)

        def vjp(g):
            return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

        return _record(out, (self,), vjp, "softmax")

    def detach(self) -> "Tensor":
        return Tensor(self.data)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(data, parents: tuple, vjp, op: str) -> Tensor:
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by op '{op}'")
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
        tape.nodes.append(out)
    return out


def elementwise(x: Tensor, f: Callable[[np.ndarray], np.ndarray],
                df: Callable[[np.ndarray], np.ndarray], op: str = "elementwise") -> Tensor:
    """Apply a scalar function with a known derivative as one primitive."""
    x = as_tensor(x)
    xd = x.data
    return _record(f(xd), (x,), lambda g: (g * df(xd),), op)


def straight_through(soft: Tensor, hard: np.ndarray) -> Tensor:
    """Forward value ``hard`` exactly; gradient is routed to ``soft`` unchanged."""
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.shape:
        raise ValueError(f"shape mismatch {hard.shape} vs {soft.shape}")
    return _record(hard, (soft,), lambda g: (g,), "straight_through")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis)
                     for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp,
                   "concat")


def primitive(data: np.ndarray, parents: Sequence[Tensor],
              vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]], op: str) -> Tensor:
    """Register a custom primitive (used by the fused kernel sums)."""
    return _record(data, tuple(as_tensor(p) for p in parents), vjp, op)


class Tape:
    """Ordered record of primitive ops, used as a context manager.

    >>> w = Tensor(3.0, requires_grad=True)
    >>> with Tape() as tape:
    ...     f = w * w
    >>> float(tape.gradient(f, [w])[0])
    6.0
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def gradient(self, loss: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``loss`` w.r.t. ``params`` (zeros if unreachable)."""
        if loss.size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
        params = list(params)
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        # recording order is a topological order, so reverse it once
        for node in reversed(self.nodes):
            g = grads.get(id(node))
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        out = []
        for p in params:
            g = grads.get(id(p))
            out.append(np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64).reshape(p.shape))
        return out
