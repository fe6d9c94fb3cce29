"""LSTM cell without peepholes and a sequence encoder.

Gate layout of the affine map ``M`` (weight ``W`` of shape ``4d x (d + D)``
plus bias ``b``): rows ``[0:d]`` input gate, ``[d:2d]`` forget gate,
``[2d:3d]`` output gate, ``[3d:4d]`` candidate. Columns ``[0:d]`` multiply
the previous hidden state and ``[d:]`` the input, matching ``M (h_{t-1}, x_t)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import autodiff as ad
from .errors import InvalidInputError


@dataclass(frozen=True)
class LstmParams:
    W: "np.ndarray | ad.Node"
    b: "np.ndarray | ad.Node"

    @property
    def d(self) -> int:
        return ad.value(self.W).shape[0] // 4

    @property
    def D(self) -> int:
        return ad.value(self.W).shape[1] - self.d


@dataclass(frozen=True)
class LstmState:
    h: "np.ndarray | ad.Node"
    c: "np.ndarray | ad.Node"

    @classmethod
    def zeros(cls, d: int, batch: tuple = ()) -> "LstmState":
        return cls(np.zeros(batch + (d,)), np.zeros(batch + (d,)))


def _check_params(params: LstmParams) -> None:
    W, b = ad.value(params.W), ad.value(params.b)
    if W.ndim != 2 or W.shape[0] % 4 or W.shape[1] <= W.shape[0] // 4:
        raise InvalidInputError(f"LSTM weight has invalid shape {W.shape}")
    if b.shape != (W.shape[0],):
        raise InvalidInputError(f"LSTM bias shape {b.shape} does not match weight {W.shape}")


def lstm_step(params: LstmParams, state: LstmState, x) -> LstmState:
    """One LSTM step built from tape primitives (differentiable in every input)."""
    _check_params(params)
    d, D = params.d, params.D
    if ad.value(x).shape[-1] != D:
        raise InvalidInputError(f"input width {ad.value(x).shape[-1]} != D={D}")
    if ad.value(state.h).shape[-1] != d or ad.value(state.c).shape[-1] != d:
        raise InvalidInputError("state width does not match the cell")
    z = ad.add(ad.matmul(ad.concat([state.h, x], axis=-1), ad.swapaxes(params.W, 0, 1)), params.b)
    i = ad.sigmoid(z[..., 0:d])
    f = ad.sigmoid(z[..., d : 2 * d])
    o = ad.sigmoid(z[..., 2 * d : 3 * d])
    g = ad.tanh(z[..., 3 * d : 4 * d])
    c = ad.add(ad.mul(f, state.c), ad.mul(i, g))
    h = ad.mul(o, ad.tanh(c))
    return LstmState(h, c)


def lstm_scan(W, b, xs, h0=None, c0=None):
    """Run the cell over the time axis of ``xs`` (``(..., T, D)``) as one primitive.

    Returns hidden states ``(..., T, d)``. BPTT is hand-written (compiled
    kernels in ``_kernels``); the initial state is a constant.
    """
    Wv, bv, xv = ad.value(W), ad.value(b), ad.value(xs)
    d = Wv.shape[0] // 4
    lead, (T, D) = xv.shape[:-2], xv.shape[-2:]
    B = int(np.prod(lead, dtype=np.int64))
    Wh, Wx = np.ascontiguousarray(Wv[:, :d]), Wv[:, d:]
    x_tm = np.ascontiguousarray(np.swapaxes(xv.reshape(B, T, D), 0, 1))  # (T, B, D)
    zx = x_tm @ Wx.T + bv
    h0v = np.zeros((B, d)) if h0 is None else np.broadcast_to(ad.value(h0), lead + (d,)).reshape(B, d).copy()
    c0v = np.zeros((B, d)) if c0 is None else np.broadcast_to(ad.value(c0), lead + (d,)).reshape(B, d).copy()
    hs_tm, cs_tm, tcs_tm, gates = _kernels.lstm_forward(zx, np.ascontiguousarray(Wh.T), h0v, c0v)
    out = np.swapaxes(hs_tm, 0, 1).reshape(lead + (T, d))

    def vjp(g_hs):
        g_tm = np.ascontiguousarray(np.swapaxes(np.asarray(g_hs).reshape(B, T, d), 0, 1))
        dz = _kernels.lstm_backward(g_tm, gates, cs_tm, tcs_tm, c0v, Wh)
        h_prev = np.concatenate([h0v[None], hs_tm[:-1]], axis=0)
        dz2 = dz.reshape(T * B, 4 * d)
        dWh = dz2.T @ h_prev.reshape(T * B, d)
        dWx = dz2.T @ x_tm.reshape(T * B, D)
        db = dz2.sum(axis=0)
        dx = np.swapaxes(dz @ Wx, 0, 1).reshape(lead + (T, D))
        return np.concatenate([dWh, dWx], axis=1), db, dx

    return ad.primitive(out, (W, b, xs), vjp)


def encode_sequence(params: LstmParams, xs, init: LstmState | None = None):
    """Hidden states ``(h_1, ..., h_T)`` for inputs ``xs`` of shape ``(..., T, D)``."""
    _check_params(params)
    xv = ad.value(xs)
    if xv.ndim < 2 or xv.shape[-2] == 0:
        raise InvalidInputError("cannot encode an empty sequence")
    if xv.shape[-1] != params.D:
        raise InvalidInputError(f"input width {xv.shape[-1]} != D={params.D}")
    h0 = c0 = None
    if init is not None:
        if isinstance(init.h, ad.Node) or isinstance(init.c, ad.Node):
            raise InvalidInputError("initial state must be constant")
        h0, c0 = init.h, init.c
    return lstm_scan(params.W, params.b, xs, h0, c0)


def encode_sequence_stepwise(params: LstmParams, xs, init: LstmState | None = None):
    """Same result as :func:`encode_sequence`, threading :func:`lstm_step` explicitly."""
    xv = ad.value(xs)
    if xv.ndim < 2 or xv.shape[-2] == 0:
        raise InvalidInputError("cannot encode an empty sequence")
    state = init or LstmState.zeros(params.d, xv.shape[:-2])
    hs = []
    for t in range(xv.shape[-2]):
        state = lstm_step(params, state, ad.index(xs, (..., t, slice(None))))
        hs.append(ad.reshape(state.h, state.h.shape[:-1] + (1, params.d)))
    return ad.concat(hs, axis=-2)


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_out, fan_in))


def init_lstm(d: int, D: int, rng: "np.random.Generator | int", scheme: str = "glorot") -> LstmParams:
    """Per-gate-block Glorot-uniform weights, zero biases, forget bias 1."""
    if d < 1 or D < 1:
        raise InvalidInputError("LSTM widths must be positive")
    if scheme != "glorot":
        raise InvalidInputError(f"unknown init scheme {scheme!r}")
    if not isinstance(rng, np.random.Generator):
        from .rng import make_rng

        rng = make_rng(int(rng), "lstm")
    W = np.concatenate([glorot_uniform(rng, d, d + D) for _ in range(4)], axis=0)
    b = np.zeros(4 * d)
    b[d : 2 * d] = 1.0
    return LstmParams(W, b)
