"""Minimal reverse-mode differentiation over float64 numpy arrays.

Values are plain ``numpy.ndarray`` objects (row-major, double precision).
Operations accept either arrays or :class:`Node` objects; when at least one
input is a Node the result is recorded on that node's :class:`Tape`,
otherwise the operation runs eagerly and returns an array. The eager path is
what gradient checks and inference use.

    tape = Tape()
    w = tape.param("w", np.ones(3))
    loss = sum_(mul(w, w))
    grads = backward(tape, loss)     # {"w": array([2., 2., 2.])}
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from . import _kernels
from .errors import InvalidInputError, InvariantError

CHECK_FINITE = True


class Node:
    __slots__ = ("value", "tape", "index")
    __array_priority__ = 100.0

    def __init__(self, value: np.ndarray, tape: "Tape", index: int):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Node(#{self.index}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return index(self, key)


class Tape:
    """Ordered record of primitive operations.

    ``records[k] = (output index, parent indices, input positions, vjp)``.
    A tape belongs to a single thread for its forward and backward lifetime.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.records: list[tuple] = []
        self.params: dict[str, Node] = {}
        self.adjoint_steps = 0

    def __len__(self):
        return len(self.records)

    def leaf(self, value) -> Node:
        node = Node(np.asarray(value, dtype=np.float64), self, len(self.nodes))
        self.nodes.append(node)
        return node

    def param(self, name: str, value) -> Node:
        if name in self.params:
            raise InvalidInputError(f"parameter {name!r} registered twice")
        node = self.leaf(np.array(value, dtype=np.float64, copy=True))
        self.params[name] = node
        return node

    def params_from(self, arrays: Mapping[str, np.ndarray]) -> dict[str, Node]:
        return {name: self.param(name, value) for name, value in arrays.items()}


Operand = "Node | np.ndarray | float"


def value(x) -> np.ndarray:
    if isinstance(x, Node):
        return x.value
    return np.asarray(x, dtype=np.float64)


def primitive(out: np.ndarray, inputs: Sequence, vjp: Callable) -> "Node | np.ndarray":
    """Record ``out`` as the result of a primitive over ``inputs``.

    ``vjp(g)`` must return one gradient per input (``None`` allowed for
    non-differentiable positions). Returns ``out`` unchanged when no input is
    a Node.
    """
    if CHECK_FINITE and not np.all(np.isfinite(out)):
        raise InvariantError("non-finite value produced by a primitive")
    tape = None
    parents: list[int] = []
    positions: list[int] = []
    for pos, x in enumerate(inputs):
        if isinstance(x, Node):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise InvalidInputError("operands belong to different tapes")
            parents.append(x.index)
            positions.append(pos)
    if tape is None:
        return out
    node = tape.leaf(out)
    tape.records.append((node.index, tuple(parents), tuple(positions), vjp))
    return node


def backward(tape: Tape, loss: Node) -> dict[str, np.ndarray]:
    """Gradients of scalar ``loss`` for every registered parameter.

    Parameters that do not reach the loss receive exact zeros.
    """
    if not isinstance(loss, Node) or loss.tape is not tape:
        raise InvalidInputError("loss must be a node recorded on this tape")
    if loss.value.size != 1:
        raise InvalidInputError(f"loss must be scalar, got shape {loss.value.shape}")
    grads: list = [None] * len(tape.nodes)
    grads[loss.index] = np.ones_like(loss.value)
    steps = 0
    for out_idx, parents, positions, vjp in reversed(tape.records):
        steps += 1
        g = grads[out_idx]
        if g is None:
            continue
        pgrads = vjp(g)
        for p_idx, pos in zip(parents, positions):
            pg = pgrads[pos]
            if pg is None:
                continue
            if grads[p_idx] is None:
                grads[p_idx] = np.array(pg, dtype=np.float64, copy=True)
            else:
                grads[p_idx] += pg
    tape.adjoint_steps = steps
    out = {}
    for name, node in tape.params.items():
        g = grads[node.index]
        out[name] = np.zeros_like(node.value) if g is None else g.reshape(node.value.shape)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b):
    av, bv = value(a), value(b)
    out = av + bv
    return primitive(out, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value(a), value(b)
    out = av - bv
    return primitive(out, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value(a), value(b)
    out = av * bv
    return primitive(
        out, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def tanh(x):
    out = np.tanh(value(x))
    return primitive(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x):
    out = expit(value(x))
    return primitive(out, (x,), lambda g: (g * out * (1.0 - out),))


def exp(x):
    out = np.exp(value(x))
    return primitive(out, (x,), lambda g: (g * out,))


def log(x, floor: float = 0.0):
    """Natural log of ``max(x, floor)``; zero gradient where the floor binds."""
    xv = value(x)
    clipped = np.maximum(xv, floor) if floor > 0 else xv
    out = np.log(clipped)

    def vjp(g):
        gx = g / clipped
        if floor > 0:
            gx = np.where(xv > floor, gx, 0.0)
        return (gx,)

    return primitive(out, (x,), vjp)


# ------------------------------------------------------------------ reductions


def sum_(x, axis=None, keepdims=False):
    xv = value(x)
    out = np.asarray(xv.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xv.shape),)

    return primitive(out, (x,), vjp)


def mean(x, axis=None, keepdims=False):
    xv = value(x)
    out = np.asarray(xv.mean(axis=axis, keepdims=keepdims))
    count = xv.size if axis is None else np.prod([xv.shape[a] for a in np.atleast_1d(axis)])

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, xv.shape),)

    return primitive(out, (x,), vjp)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    """``numpy.matmul`` semantics, including broadcasting batch dimensions."""
    av, bv = value(a), value(b)
    out = av @ bv
    a2 = av[None, :] if av.ndim == 1 else av
    b2 = bv[:, None] if bv.ndim == 1 else bv

    def vjp(g):
        g2 = np.reshape(g, (a2 @ b2).shape)
        ga = _unbroadcast(g2 @ np.swapaxes(b2, -1, -2), a2.shape).reshape(av.shape)
        gb = _unbroadcast(np.swapaxes(a2, -1, -2) @ g2, b2.shape).reshape(bv.shape)
        return ga, gb

    return primitive(out, (a, b), vjp)


# ------------------------------------------------------------------- structure


def _has_advanced(key) -> bool:
    keys = key if isinstance(key, tuple) else (key,)
    return any(isinstance(k, (np.ndarray, list)) for k in keys)


def _scatter_add(gx, key, g):
    keys = key if isinstance(key, tuple) else (key,)
    n_adv = len(keys)
    if any(k is Ellipsis or isinstance(k, slice) or k is None for k in keys):
        np.add.at(gx, key, g)
        return
    # pure integer-array key over the leading axes: flatten and use the kernel
    lead = gx.shape[:n_adv]
    idx = np.broadcast_arrays(*[np.asarray(k) for k in keys])
    flat = np.ravel_multi_index([i.ravel() for i in idx], lead)
    width = int(np.prod(gx.shape[n_adv:], dtype=np.int64))
    rows = np.ascontiguousarray(np.asarray(g).reshape(flat.size, width))
    _kernels.scatter_add_rows(gx.reshape(-1, width), flat, rows)


def index(x, key):
    """``x[key]`` for basic or advanced (integer-array) indexing."""
    xv = value(x)
    out = np.array(xv[key], dtype=np.float64)
    advanced = _has_advanced(key)

    def vjp(g):
        gx = np.zeros_like(xv)
        if advanced:
            _scatter_add(gx, key, g)
        else:
            gx[key] += g
        return (gx,)

    return primitive(out, (x,), vjp)


def concat(xs: Sequence, axis: int = -1):
    vals = [value(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return primitive(out, tuple(xs), vjp)


def reshape(x, shape):
    xv = value(x)
    out = xv.reshape(shape)
    return primitive(out, (x,), lambda g: (g.reshape(xv.shape),))


def swapaxes(x, a1: int, a2: int):
    out = np.swapaxes(value(x), a1, a2)
    return primitive(out, (x,), lambda g: (np.swapaxes(g, a1, a2),))


# ------------------------------------------------------------------- softmax


def softmax(x, axis: int = -1, mask=None):
    """Softmax along ``axis`` with optional boolean mask (True = keep).

    Masked positions are excluded before exponentiation and get exactly zero
    probability. A slice with every position masked is an error.
    """
    xv = value(x)
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), xv.shape)
        if not np.all(mask.any(axis=axis)):
            raise InvalidInputError("softmax: every position of a slice is masked")
        scores = np.where(mask, xv, -np.inf)
    else:
        scores = xv
    shifted = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return primitive(out, (x,), vjp)


# ------------------------------------------------------------ gradient check


def relative_error(a, b) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def numeric_gradient(
    f: Callable[[Mapping], "Node | np.ndarray"],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central differences ``(f(p + h) - f(p - h)) / 2h`` for every coordinate."""
    if h <= 0:
        raise InvalidInputError("finite-difference step must be positive")
    params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    out = {}
    for name, p in params.items():
        flat = p.reshape(-1)
        g = np.empty(flat.size)
        for i in range(flat.size):
            probe = dict(params)
            up = flat.copy()
            up[i] += h
            probe[name] = up.reshape(p.shape)
            f_up = float(value(f(probe)))
            down = flat.copy()
            down[i] -= h
            probe[name] = down.reshape(p.shape)
            f_down = float(value(f(probe)))
            g[i] = (f_up - f_down) / (2.0 * h)
        out[name] = g.reshape(p.shape)
    return out


def analytic_gradient(f, params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Reverse-mode gradient of ``f`` at ``params`` (zeros if ``f`` ignores them all)."""
    params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    tape = Tape()
    loss = f(tape.params_from(params))
    if not isinstance(loss, Node):
        return {k: np.zeros_like(v) for k, v in params.items()}
    return backward(tape, loss)


def gradient_errors(
    f: Callable[[Mapping], "Node | np.ndarray"],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
) -> dict[str, float]:
    """Max relative error per parameter between backward() and central differences."""
    numeric = numeric_gradient(f, params, h)
    analytic = analytic_gradient(f, params)
    return {k: float(np.max(relative_error(analytic[k], numeric[k]), initial=0.0)) for k in numeric}


def grad_check(f, params: Mapping[str, np.ndarray], h: float = 1e-5) -> float:
    """Max relative error over every coordinate of every parameter."""
    errors = gradient_errors(f, params, h)
    return max(errors.values(), default=0.0)
