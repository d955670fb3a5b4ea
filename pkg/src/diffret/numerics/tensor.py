"""
Dense float64 tensors with tape-based reverse-mode differentiation.

Ops executed while a :class:`Tape` is active are appended to it together with
a closure computing the vector-Jacobian product. :func:`backward` replays the
tape in reverse. Outside a tape every op is a plain numpy computation, which
is what evaluation and sampling use.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence

import numpy as np

from ..exceptions import ContractError, DimensionError, NumericError

_ACTIVE: list["Tape"] = []

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tape:
    """Append-only computation record.

    ``entries`` holds ``(out_node, input_nodes, backward_fn)`` in execution
    order, so an op's inputs always carry smaller node ids than its output.
    """

    def __init__(self):
        self.entries: list[tuple[int, list[int | None], BackwardFn]] = []
        self.n_nodes = 0
        self._leaves: dict[int, int] = {}
        self._leaf_refs: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def _new_node(self) -> int:
        self.n_nodes += 1
        return self.n_nodes - 1

    def leaf_node(self, t: "Tensor") -> int | None:
        return self._leaves.get(id(t))

    def node_of(self, t: "Tensor") -> int | None:
        if t._tape is self:
            return t.node
        if not t.requires_grad:
            return None
        node = self._leaves.get(id(t))
        if node is None:
            node = self._new_node()
            self._leaves[id(t)] = node
            self._leaf_refs.append(t)
        return node


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


class Tensor:
    """A float64 array that can take part in a recorded computation."""

    __slots__ = ("value", "requires_grad", "node", "_tape")
    __array_priority__ = 1000

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.array(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.node: int | None = None
        self._tape: Tape | None = None

    @classmethod
    def _wrap(cls, value: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.value = value
        out.requires_grad = False
        out.node = None
        out._tape = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.value)

    # arithmetic
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self) -> "Tensor":
        return swapaxes(self, -1, -2)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64))


def _result(value: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NumericError("op produced non-finite values")
    out = Tensor._wrap(value)
    tape = active_tape()
    if tape is None:
        return out
    nodes = [tape.node_of(t) for t in inputs]
    if all(n is None for n in nodes):
        return out
    out.node = tape._new_node()
    out._tape = tape
    out.requires_grad = True
    tape.entries.append((out.node, nodes, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# elementwise binary ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.value, b.value)
    sa, sb = a.shape, b.shape
    return _result(a.value + b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.value, b.value)
    sa, sb = a.shape, b.shape
    return _result(a.value - b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.value, b.value)
    av, bv = a.value, b.value
    return _result(av * bv, (a, b),
                   lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.value, b.value)
    av, bv = a.value, b.value
    out = av / bv

    def bw(g):
        return _unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)

    return _result(out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.value, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs operands with at least two dims")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise DimensionError(f"matmul batch dims differ: {a.shape} @ {b.shape}") from exc
    av, bv = a.value, b.value

    def bw(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _result(av @ bv, (a, b), bw)


# elementwise unary ops

def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    return _result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.value <= 0):
        raise NumericError("log of a non-positive value")
    av = a.value
    return _result(np.log(av), (a,), lambda g: (g / av,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _result(out, (a,), lambda g: (g / (2.0 * out),))


def square(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _result(av * av, (a,), lambda g: (2.0 * g * av,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.value > 0
    return _result(np.where(pos, a.value, 0.0), (a,), lambda g: (g * pos,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return _result(np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,))


# reductions

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(a.value.sum(axis=axis, keepdims=keepdims)), (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in axes]))
    return div(tsum(a, axis=axis, keepdims=keepdims), float(count))


def _masked(values: np.ndarray, mask, axis: int) -> tuple[np.ndarray, np.ndarray | None]:
    if mask is None:
        return values, None
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), values.shape)
    if not np.all(mask.any(axis=axis)):
        raise DimensionError("reduction over an axis with every entry masked")
    return np.where(mask, values, -np.inf), mask


def amax(a, axis: int = -1, mask=None) -> Tensor:
    """Maximum along ``axis``; entries where ``mask`` is False are ignored."""
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise DimensionError("max over an empty axis")
    z, _ = _masked(a.value, mask, axis)
    idx = np.expand_dims(np.argmax(z, axis=axis), axis)
    out = np.take_along_axis(a.value, idx, axis=axis).squeeze(axis)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _result(out, (a,), bw)


def softmax(a, axis: int = -1, mask=None) -> Tensor:
    """Numerically stable softmax; masked entries get exactly zero weight."""
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise DimensionError("softmax over an empty axis")
    z, m = _masked(a.value, mask, axis)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), bw)


def log_softmax(a, axis: int = -1, mask=None) -> Tensor:
    """Log-softmax; masked positions output 0 and receive no gradient."""
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise DimensionError("log_softmax over an empty axis")
    z, m = _masked(a.value, mask, axis)
    zmax = z.max(axis=axis, keepdims=True)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=axis, keepdims=True))
    out = a.value - lse
    p = np.exp(z - lse)
    if m is not None:
        out = np.where(m, out, 0.0)

    def bw(g):
        if m is not None:
            g = np.where(m, g, 0.0)
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _result(out, (a,), bw)


def l2_normalize(a, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Divide by the L2 norm along ``axis``, clamping the norm at ``eps``."""
    a = as_tensor(a)
    norm = np.sqrt((a.value * a.value).sum(axis=axis, keepdims=True))
    clamped = np.maximum(norm, eps)
    out = a.value / clamped
    live = norm > eps

    def bw(g):
        proj = g - out * (g * out).sum(axis=axis, keepdims=True)
        return (np.where(live, proj, g) / clamped,)

    return _result(out, (a,), bw)


# shape ops

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    return _result(out, (a,), lambda g: (g.reshape(old),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _result(np.swapaxes(a.value, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def expand_dims(a, axis: int) -> Tensor:
    a = as_tensor(a)
    return _result(np.expand_dims(a.value, axis), (a,), lambda g: (np.squeeze(g, axis),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = np.broadcast_to(a.value, shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    return _result(out, (a,), lambda g: (_unbroadcast(g, old),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.value for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _result(out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _result(np.asarray(a.value[idx]), (a,), bw)


def backward(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. every tensor in ``params``.

    Parameters that did not take part in the recorded computation get a zero
    gradient.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        return {name: np.zeros_like(p.value) for name, p in params.items()}
    grads: list[np.ndarray | None] = [None] * tape.n_nodes
    grads[loss.node] = np.ones_like(loss.value)
    for out, ins, fn in reversed(tape.entries):
        g = grads[out]
        if g is None:
            continue
        grads[out] = None
        for node, gi in zip(ins, fn(g)):
            if node is None or gi is None:
                continue
            grads[node] = gi if grads[node] is None else grads[node] + gi
    result = {}
    for name, p in params.items():
        node = tape.leaf_node(p)
        g = grads[node] if node is not None else None
        result[name] = np.zeros_like(p.value) if g is None else np.asarray(g).reshape(p.shape)
    return result
