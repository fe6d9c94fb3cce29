"""Windowed soft-attention alignment of an audio hidden sequence to visual frames.

Indices exposed to users (centres, window slots, truth alignments) are
1-based frame numbers; array positions are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, InvalidInputError
from .lstm import LstmParams, encode_sequence


@dataclass(frozen=True)
class AlignParams:
    W_a: "np.ndarray | ad.Node"  # (k, d_a)
    W_v: "np.ndarray | ad.Node"  # (k, d_v)
    W_slot: "np.ndarray | ad.Node"  # (2w+1, k), or (k,) when shared across slots
    w: int

    @property
    def k(self) -> int:
        return ad.value(self.W_a).shape[0]

    @property
    def n_slots(self) -> int:
        return 2 * self.w + 1

    @property
    def shared(self) -> bool:
        return ad.value(self.W_slot).ndim == 1

    def check(self) -> None:
        Wa, Wv, Ws = ad.value(self.W_a), ad.value(self.W_v), ad.value(self.W_slot)
        if self.w < 0:
            raise ConfigError("half-window width must be >= 0")
        if Wv.shape[0] != Wa.shape[0]:
            raise ConfigError("W_a and W_v must map to the same attention width")
        if Ws.ndim == 2 and Ws.shape != (self.n_slots, Wa.shape[0]):
            raise ConfigError(f"W_slot must have shape ({self.n_slots}, {Wa.shape[0]}), got {Ws.shape}")
        if Ws.ndim == 1 and Ws.shape != (Wa.shape[0],):
            raise ConfigError("shared W_slot must be a length-k vector")


@dataclass
class AlignmentTrace:
    centers: np.ndarray  # (T,) 1-based p_t
    indices: np.ndarray  # (T, 2w+1) 1-based audio frame of each slot
    mask: np.ndarray  # (T, 2w+1) True where the slot is a real frame
    weights: np.ndarray  # (T, 2w+1) l_t
    contexts: np.ndarray  # (T, d_a) x_t

    def expected_index(self) -> np.ndarray:
        """Attention-weighted audio frame number per visual step."""
        return (self.weights * self.indices).sum(axis=1)

    def heatmap(self) -> np.ndarray:
        """Slot-by-time matrix (2w+1, T); row 0 is the first slot."""
        return self.weights.T.copy()


def coarse_align(t: int, T: int, T_a: int) -> int:
    """Window centre for visual step ``t``: ``round(t * T_a / T)`` half-up, clamped to [1, T_a]."""
    if T < 1 or T_a < 1 or not 1 <= t <= T:
        raise InvalidInputError(f"invalid coarse alignment query t={t}, T={T}, T_a={T_a}")
    p = (2 * t * T_a + T) // (2 * T)
    return min(max(p, 1), T_a)


def coarse_centers(T: int, T_a: int) -> np.ndarray:
    t = np.arange(1, T + 1)
    return np.clip((2 * t * T_a + T) // (2 * T), 1, T_a)


def window(centers: np.ndarray, T_a: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """1-based slot indices ``p_t - w .. p_t + w`` and their validity mask."""
    idx = np.asarray(centers)[..., None] + np.arange(-w, w + 1)
    return idx, (idx >= 1) & (idx <= T_a)


def slot_scores(params: AlignParams, h_win, v):
    """Slot scores ``W_i^T tanh(W_a h_att,i + W_v v)``; ``h_win`` is ``(..., S, d_a)``, ``v`` ``(..., d_v)``."""
    proj_a = ad.matmul(h_win, ad.swapaxes(params.W_a, 0, 1))
    proj_v = ad.matmul(v, ad.swapaxes(params.W_v, 0, 1))
    lead = ad.value(proj_v).shape[:-1]
    hidden = ad.tanh(ad.add(proj_a, ad.reshape(proj_v, lead + (1, params.k))))
    return ad.sum_(ad.mul(hidden, params.W_slot), axis=-1)


def attend_window(params: AlignParams, h_a, v_t, p_t: int):
    """Alignment weights over the window centred on audio frame ``p_t`` (1-based)."""
    params.check()
    h = ad.value(h_a)
    T_a = h.shape[0]
    if not 1 <= p_t <= T_a:
        raise InvalidInputError(f"window centre {p_t} outside 1..{T_a}")
    idx, mask = window(np.array(p_t), T_a, params.w)
    h_win = ad.index(h_a, np.clip(idx, 1, T_a) - 1)
    scores = slot_scores(params, h_win, v_t)
    return ad.softmax(scores, mask=mask), mask


def expected_context(weights, h_window):
    """``sum_i l_i h_i``; masked slots carry zero weight so their rows never contribute."""
    return ad.matmul(weights, h_window)


def align_sequences(params: AlignParams, h_a, v, centers: np.ndarray, T_a):
    """Vectorised alignment of every visual step.

    ``h_a``: ``(B, T_a_max, d_a)``; ``v``: ``(B, T, d_v)``; ``centers``: ``(B, T)``
    1-based; ``T_a``: ``(B,)`` true audio lengths. Returns ``(contexts, weights,
    indices, mask)``.
    """
    B = centers.shape[0]
    idx, mask = window(centers, np.asarray(T_a)[:, None, None], params.w)
    pos = np.clip(idx, 1, np.asarray(T_a)[:, None, None]) - 1
    rows = np.arange(B)[:, None, None]
    proj_a = ad.matmul(h_a, ad.swapaxes(params.W_a, 0, 1))
    proj_v = ad.matmul(v, ad.swapaxes(params.W_v, 0, 1))
    Tv = centers.shape[1]
    gathered = ad.index(proj_a, (rows, pos))  # (B, T, S, k)
    hidden = ad.tanh(ad.add(gathered, ad.reshape(proj_v, (B, Tv, 1, params.k))))
    scores = ad.sum_(ad.mul(hidden, params.W_slot), axis=-1)  # (B, T, S)
    weights = ad.softmax(scores, axis=-1, mask=mask)
    h_win = ad.index(h_a, (rows, pos))  # (B, T, S, d_a)
    Wshape = ad.value(weights).shape
    contexts = ad.reshape(
        ad.matmul(ad.reshape(weights, Wshape[:2] + (1, Wshape[2])), h_win),
        Wshape[:2] + (ad.value(h_win).shape[-1],),
    )
    return contexts, weights, idx, mask


def encode_audio_visual(av_params: LstmParams, align: AlignParams, h_a, v):
    """Align ``h_a`` (``(T_a, d_a)``) to ``v`` (``(T, d_v)``) and run the audio-visual LSTM.

    The LSTM input at step t is the concatenation ``(v_t, x_t)``.
    """
    align.check()
    hv, vv = ad.value(h_a), ad.value(v)
    if hv.ndim != 2 or vv.ndim != 2 or hv.shape[0] == 0 or vv.shape[0] == 0:
        raise InvalidInputError("audio and visual sequences must be nonempty matrices")
    if vv.shape[1] + hv.shape[1] != av_params.D:
        raise ConfigError(
            f"audio-visual LSTM expects width {av_params.D}, got {vv.shape[1]} + {hv.shape[1]}"
        )
    T, T_a = vv.shape[0], hv.shape[0]
    centers = coarse_centers(T, T_a)[None, :]
    ctx, weights, idx, mask = align_sequences(
        align, ad.reshape(h_a, (1,) + hv.shape), ad.reshape(v, (1,) + vv.shape), centers, np.array([T_a])
    )
    inputs = ad.concat([ad.reshape(v, (1,) + vv.shape), ctx], axis=-1)
    h_av = encode_sequence(av_params, inputs)
    trace = AlignmentTrace(
        centers=centers[0],
        indices=idx[0],
        mask=mask[0],
        weights=ad.value(weights)[0].copy(),
        contexts=ad.value(ctx)[0].copy(),
    )
    return ad.reshape(h_av, (T, av_params.d)), trace
