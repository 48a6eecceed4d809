"""Reverse-mode automatic differentiation over float64 numpy arrays.

A ``Tensor`` wraps an ndarray and records how it was produced; calling
``backward()`` on a scalar walks the recorded graph in reverse topological
order and accumulates vector-Jacobian products into ``.grad``. Nodes whose
inputs do not require gradients record nothing, so detached subgraphs cost
only the forward arithmetic.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Array = np.ndarray
Vjp = Callable[[Array], tuple[Array, ...]]


def _as_f64(x) -> Array:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """One node of the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        vjp: Vjp | None = None,
    ):
        self.data = _as_f64(data)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents = parents if requires_grad else ()
        self._vjp = vjp if requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Same values, no history. Gradient never flows past this node."""
        return Tensor(self.data)

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into ``.grad`` for every reachable node.

        Overwrites any gradients left over from a previous call, so one
        backward pass per loss; sum losses first if a joint gradient is
        needed. Only defined for scalar outputs.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.shape}")
        order = _toposort(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # Operator sugar. Scalars and ndarrays are lifted to constant tensors.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: Array, parents: tuple[Tensor, ...], vjp: Vjp) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, vjp=vjp)
    return Tensor(data)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if squeeze:
        g = g.sum(axis=squeeze, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data + b.data

    def vjp(g: Array):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data - b.data

    def vjp(g: Array):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data * b.data

    def vjp(g: Array):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _make(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data / b.data

    def vjp(g: Array):
        ga = _unbroadcast(g / b.data, a.data.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb

    return _make(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = _lift(a)

    def vjp(g: Array):
        return (-g,)

    return _make(-a.data, (a,), vjp)


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    out = a.data @ b.data

    def vjp(g: Array):
        return g @ b.data.T, a.data.T @ g

    return _make(out, (a, b), vjp)


def square(a) -> Tensor:
    a = _lift(a)

    def vjp(g: Array):
        return (g * (2.0 * a.data),)

    return _make(a.data * a.data, (a,), vjp)


def exp(a) -> Tensor:
    a = _lift(a)
    out = np.exp(a.data)

    def vjp(g: Array):
        return (g * out,)

    return _make(out, (a,), vjp)


def log(a) -> Tensor:
    a = _lift(a)

    def vjp(g: Array):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), vjp)


def sin(a) -> Tensor:
    a = _lift(a)

    def vjp(g: Array):
        return (g * np.cos(a.data),)

    return _make(np.sin(a.data), (a,), vjp)


def cos(a) -> Tensor:
    a = _lift(a)

    def vjp(g: Array):
        return (-g * np.sin(a.data),)

    return _make(np.cos(a.data), (a,), vjp)


def _softplus(x: Array) -> Array:
    # log(1 + e^x) via the same per-element algebra as logaddexp(0, x), but
    # through numpy's vectorized exp/log1p, which is several times faster.
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x: Array) -> Array:
    # exp(x - log(1 + e^x)) is stable for both signs of x.
    return np.exp(x - _softplus(x))


def mish_raw(x: Array) -> Array:
    """x * tanh(softplus(x)) on plain arrays, overflow-safe."""
    return x * np.tanh(_softplus(x))


def mish(a) -> Tensor:
    """Fused mish activation: d/dx = tanh(sp(x)) + x (1 - tanh^2(sp(x))) sigmoid(x)."""
    a = _lift(a)
    sp = _softplus(a.data)
    t = np.tanh(sp)
    out = a.data * t

    def vjp(g: Array):
        sig = np.exp(a.data - sp)  # sigmoid, reusing the forward softplus
        local = t + a.data * (1.0 - t * t) * sig
        return (g * local,)

    return _make(out, (a,), vjp)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where lo <= x <= hi."""
    a = _lift(a)
    out = np.clip(a.data, lo, hi)
    inside = ((a.data >= lo) & (a.data <= hi)).astype(np.float64)

    def vjp(g: Array):
        return (g * inside,)

    return _make(out, (a,), vjp)


def tsum(a, axis: int | None = None) -> Tensor:
    a = _lift(a)
    out = a.data.sum(axis=axis)

    def vjp(g: Array):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy(),)

    return _make(out, (a,), vjp)


def tmean(a, axis: int | None = None) -> Tensor:
    a = _lift(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    tensors = tuple(_lift(p) for p in parts)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g: Array):
        moved = np.moveaxis(g, axis, 0)
        slices = []
        for i in range(len(tensors)):
            piece = moved[offsets[i] : offsets[i + 1]]
            slices.append(np.moveaxis(piece, 0, axis))
        return tuple(slices)

    return _make(out, tensors, vjp)


def narrow(a, start: int, length: int, axis: int = -1) -> Tensor:
    """Contiguous slice [start, start+length) along ``axis``."""
    a = _lift(a)
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = a.data[index]

    def vjp(g: Array):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _make(out, (a,), vjp)
