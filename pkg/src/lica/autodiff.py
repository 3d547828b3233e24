"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records every op whose inputs are tracked while the tape is
active. ``tape.backward(loss)`` then walks the recorded nodes in exact
reverse order and writes ``grad`` onto tracked leaves.

There is no implicit broadcasting. Shapes must agree exactly, except for
:func:`scale` (tensor times python scalar). Use :func:`expand` to repeat a
bias vector over a batch.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

LOG_FLOOR = 1e-12

_active: list["Tape"] = []


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.array(data, dtype=np.float64)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be >= 1, got {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: _Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self.node is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, tracked={self.tracked})"

    # operator sugar, all explicit-shape
    def __add__(self, other): return add(self, other)
    def __sub__(self, other): return sub(self, other)
    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)
    __rmul__ = __mul__
    def __neg__(self): return scale(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)


def _not_scalar(t: Tensor):
    raise ShapeError(f"item() needs a single element, got shape {t.shape}")


class _Node:
    __slots__ = ("tape", "inputs", "output", "backward")

    def __init__(self, tape, inputs, output, backward):
        self.tape = tape
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Records ops for one backward pass. Use as a context manager."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.remove(self)

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        node = _Node(self, tuple(inputs), out, backward)
        out.node = node
        self.nodes.append(node)

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.tracked:
            raise ValueError("loss is not tracked on any tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        if loss.node is None:
            leaves[id(loss)] = loss
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.tracked:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
                if inp.node is None:
                    leaves[key] = inp
        for key, leaf in leaves.items():
            g = grads.get(key)
            leaf.grad = np.zeros_like(leaf.data) if g is None else g.reshape(leaf.shape)


def active_tape() -> Tape | None:
    return _active[-1] if _active else None


def backward(loss: Tensor) -> None:
    """Backpropagate through the tape that produced ``loss``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        raise ValueError("loss was not produced on a tape")
    loss.node.tape.backward(loss)


def tensor(data, requires_grad: bool = False, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _out(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out.node = None
    out.name = ""
    tape = active_tape()
    if tape is not None and any(t.tracked for t in inputs):
        tape.record(out, inputs, backward)
    return out


def _same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _axis(x: Tensor, axis: int) -> int:
    return axis % x.data.ndim


# --- elementwise -----------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same("add", a, b)
    return _out(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same("sub", a, b)
    return _out(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same("mul", a, b)
    ad, bd = a.data, b.data
    return _out(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _out(x.data * c, (x,), lambda g: (g * c,))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _out(xd * xd, (x,), lambda g: (2.0 * xd * g,))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _out(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _out(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _out(y, (x,), lambda g: (g * y * (1.0 - y),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _out(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    # single numerical guard: inputs are clamped at LOG_FLOOR
    clamped = np.maximum(x.data, LOG_FLOOR)
    live = x.data >= LOG_FLOOR
    return _out(np.log(clamped), (x,), lambda g: (np.where(live, g / clamped, 0.0),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _axis(x, axis)
    z = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=ax, keepdims=True)

    def bwd(g):
        return (y * (g - (g * y).sum(axis=ax, keepdims=True)),)

    return _out(y, (x,), bwd)


# --- reductions and shape --------------------------------------------------

def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = x.shape
    if axis is None:
        return _out(np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, g.item()),))
    ax = _axis(x, axis)
    out = x.data.sum(axis=ax)
    if out.ndim == 0:
        out = np.asarray(out)
    return _out(out, (x,), lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),))


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[_axis(x, axis)]
    return scale(sum(x, axis), 1.0 / n)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _out(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def batch_vecmat(x: Tensor, w: Tensor) -> Tensor:
    """Row-wise vector-matrix product: (B, m) x (B, m, h) -> (B, h)."""
    if x.data.ndim != 2 or w.data.ndim != 3 or x.shape != w.shape[:2]:
        raise ShapeError(f"batch_vecmat: shape mismatch {x.shape} vs {w.shape}")
    xd, wd = x.data, w.data
    out = np.einsum("bm,bmh->bh", xd, wd)

    def bwd(g):
        return np.einsum("bh,bmh->bm", g, wd), xd[:, :, None] * g[:, None, :]

    return _out(out, (x, w), bwd)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as err:
        raise ShapeError(f"reshape: cannot reshape {old} to {tuple(shape)}") from err
    return _out(out, (x,), lambda g: (g.reshape(old),))


def expand(x: Tensor, n: int) -> Tensor:
    """Stack ``n`` copies of ``x`` along a new leading axis."""
    out = np.broadcast_to(x.data, (n,) + x.shape).copy()
    return _out(out, (x,), lambda g: (g.sum(axis=0),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not xs:
        raise ShapeError("concat: empty input")
    ax = _axis(xs[0], axis)
    ref = xs[0].shape
    for x in xs[1:]:
        if x.data.ndim != len(ref) or any(
            d != r for i, (d, r) in enumerate(zip(x.shape, ref)) if i != ax
        ):
            raise ShapeError(f"concat: shape mismatch {ref} vs {x.shape} on axis {ax}")
    bounds = np.cumsum([x.shape[ax] for x in xs])[:-1]

    def bwd(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _out(np.concatenate([x.data for x in xs], axis=ax), tuple(xs), bwd)


def slice(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:  # noqa: A001
    ax = _axis(x, axis)
    if not 0 <= start < stop <= x.shape[ax]:
        raise ShapeError(f"slice: range [{start}, {stop}) invalid for shape {x.shape} axis {ax}")
    idx = [np.s_[:]] * x.data.ndim
    idx[ax] = np.s_[start:stop]
    idx = tuple(idx)
    shape = x.shape

    def bwd(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return _out(x.data[idx].copy(), (x,), bwd)


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather entries along ``axis`` (repeats allowed)."""
    ax = _axis(x, axis)
    ind = np.asarray(indices, dtype=np.int64)
    shape = x.shape

    def bwd(g):
        full = np.zeros(shape)
        np.add.at(full, (np.s_[:],) * ax + (ind,), g)
        return (full,)

    return _out(np.take(x.data, ind, axis=ax), (x,), bwd)


def stop_gradient(x: Tensor) -> Tensor:
    """Value copy with no tape linkage."""
    return Tensor(x.data.copy())


# --- gradient checking -----------------------------------------------------

def numeric_grad(fn: Callable[[], Tensor], x: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` w.r.t. ``x.data``."""
    flat = x.data.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn().item()
        flat[i] = orig - eps
        lo = fn().item()
        flat[i] = orig
        out[i] = (hi - lo) / (2 * eps)
    return out.reshape(x.shape)


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error |analytic - numeric| / max(1, |numeric|) over ``inputs``."""
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    worst = 0.0
    for x in inputs:
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        numeric = numeric_grad(fn, x, eps)
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
        worst = max(worst, float(err.max()))
    return worst


def straight_through(value: np.ndarray, x: Tensor) -> Tensor:
    """Forward ``value`` exactly, backward the identity into ``x``."""
    value = np.asarray(value, dtype=np.float64)
    if value.shape != x.shape:
        raise ShapeError(f"straight_through: shape mismatch {value.shape} vs {x.shape}")
    return _out(value.copy(), (x,), lambda g: (g,))
