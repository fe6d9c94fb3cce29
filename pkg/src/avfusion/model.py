"""Classification heads and full model assembly.

A *stack* is the encoder pipeline

    shape -> tanh hidden ┐
    appearance -> tanh hidden ┴ concat -> tanh fusion hidden = v_t
    audio -> tanh hidden -> audio LSTM = h_a
    align(h_a, v) = x_t ;  AV LSTM over (v_t, x_t) = h_av

Baseline heads (``last``, ``average``) use one stack of width ``lstm_hidden``
followed by a linear layer and softmax. The ``perception`` head builds two
stacks with independent parameters: a selection stack of width ``d_sel``
whose output locates per-class attention, and a main stack of width ``d_av``
whose output is pooled under that attention.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .align import AlignParams, AlignmentTrace, align_sequences, coarse_centers
from .errors import ConfigError, InvalidInputError
from .layers import apply_dropout, dense
from .lstm import glorot_uniform, lstm_scan
from .rng import make_rng

HEADS = ("last", "average", "perception")


@dataclass(frozen=True)
class ModelConfig:
    shape_dim: int
    audio_dim: int
    appearance_dim: int = 0
    pre_hidden: int = 64
    lstm_hidden: int = 64
    d_sel: int = 8
    d_av: int = 32
    d_e: int = 8
    window: int = 4
    n_classes: int = 7
    head: str = "perception"
    shared_slot_scoring: bool = False
    attention_width: int = 0  # 0: same as the stack's LSTM width

    @property
    def visual_dim(self) -> int:
        return self.shape_dim + self.appearance_dim

    def validate(self) -> "ModelConfig":
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}, got {self.head!r}")
        for name in ("shape_dim", "audio_dim", "pre_hidden", "lstm_hidden", "d_sel", "d_av", "d_e"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.appearance_dim < 0 or self.attention_width < 0 or self.window < 0:
            raise ConfigError("appearance_dim, attention_width and window must be >= 0")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")
        return self

    def stacks(self) -> dict[str, tuple[int, int]]:
        """Stack prefix -> (pre-encoder width, LSTM width)."""
        if self.head == "perception":
            return {"sel": (self.d_sel, self.d_sel), "main": (self.d_av, self.d_av)}
        return {"main": (self.pre_hidden, self.lstm_hidden)}

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d).validate()


def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    """Ordered name -> shape map of every trainable tensor."""
    shapes: dict[str, tuple] = {}
    S = 2 * config.window + 1
    for p, (u, d) in config.stacks().items():
        k = config.attention_width or d
        shapes[f"{p}.shape.W"] = (u, config.shape_dim)
        shapes[f"{p}.shape.b"] = (u,)
        n_branches = 1
        if config.appearance_dim:
            shapes[f"{p}.appearance.W"] = (u, config.appearance_dim)
            shapes[f"{p}.appearance.b"] = (u,)
            n_branches = 2
        shapes[f"{p}.visual.W"] = (u, n_branches * u)
        shapes[f"{p}.visual.b"] = (u,)
        shapes[f"{p}.audio.W"] = (u, config.audio_dim)
        shapes[f"{p}.audio.b"] = (u,)
        shapes[f"{p}.audio_lstm.W"] = (4 * d, d + u)
        shapes[f"{p}.audio_lstm.b"] = (4 * d,)
        shapes[f"{p}.align.W_a"] = (k, d)
        shapes[f"{p}.align.W_v"] = (k, u)
        shapes[f"{p}.align.W_slot"] = (k,) if config.shared_slot_scoring else (S, k)
        shapes[f"{p}.av_lstm.W"] = (4 * d, d + u + d)
        shapes[f"{p}.av_lstm.b"] = (4 * d,)
    N = config.n_classes
    if config.head == "perception":
        shapes["percep.W_h"] = (config.d_e, config.d_sel)
        shapes["percep.E"] = (N, config.d_e)
        shapes["percep.W"] = (N, config.d_av)
        shapes["percep.b"] = (N,)
    else:
        shapes["head.W"] = (N, config.lstm_hidden)
        shapes["head.b"] = (N,)
    return shapes


def is_weight(name: str) -> bool:
    """Weight-decayed tensors: every matrix, slot-scoring vector and the embeddings; not biases."""
    return not name.endswith(".b")


def init_params(config: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    config.validate()
    params = {}
    for name, shape in param_shapes(config).items():
        rng = make_rng(seed, "init", name)
        if name.endswith(".b"):
            value = np.zeros(shape)
            if name.endswith("lstm.b"):
                d = shape[0] // 4
                value[d : 2 * d] = 1.0
        elif name.endswith("lstm.W"):
            d = shape[0] // 4
            value = np.concatenate([glorot_uniform(rng, d, shape[1]) for _ in range(4)])
        elif len(shape) == 1:
            s = np.sqrt(6.0 / (shape[0] + 1))
            value = rng.uniform(-s, s, size=shape)
        else:
            value = glorot_uniform(rng, *shape)
        params[name] = value
    return params


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, np.ndarray]
    seed: int = 0
    whiten: dict = field(default_factory=dict)  # modality -> WhitenTransform

    @classmethod
    def create(cls, config: ModelConfig, seed: int) -> "Model":
        return cls(config.validate(), init_params(config, seed), seed)

    def copy(self) -> "Model":
        return replace(self, params={k: v.copy() for k, v in self.params.items()}, whiten=dict(self.whiten))


# ------------------------------------------------------------------ batching


@dataclass
class Batch:
    visual: np.ndarray  # (B, T_max, D_v) zero padded
    audio: np.ndarray  # (B, T_a_max, D_a)
    lengths: np.ndarray  # (B,) T
    audio_lengths: np.ndarray  # (B,) T_a
    centers: np.ndarray  # (B, T_max) 1-based
    labels: np.ndarray  # (B,) 0-based class index

    @property
    def size(self) -> int:
        return len(self.lengths)

    def time_mask(self) -> np.ndarray:
        return np.arange(self.visual.shape[1])[None, :] < self.lengths[:, None]


def make_batch(clips, config: ModelConfig) -> Batch:
    if not clips:
        raise InvalidInputError("empty batch")
    for clip in clips:
        if clip.visual.shape[1] != config.visual_dim or clip.audio.shape[1] != config.audio_dim:
            raise ConfigError(
                f"clip {clip.clip_id}: widths (audio {clip.audio.shape[1]}, visual {clip.visual.shape[1]}) "
                f"do not match config (audio {config.audio_dim}, visual {config.visual_dim})"
            )
        if clip.visual.shape[0] < 1 or clip.audio.shape[0] < 1:
            raise InvalidInputError(f"clip {clip.clip_id}: empty sequence")
    B = len(clips)
    lengths = np.array([c.visual.shape[0] for c in clips])
    alengths = np.array([c.audio.shape[0] for c in clips])
    T, Ta = int(lengths.max()), int(alengths.max())
    visual = np.zeros((B, T, config.visual_dim))
    audio = np.zeros((B, Ta, config.audio_dim))
    centers = np.empty((B, T), dtype=np.int64)
    for b, clip in enumerate(clips):
        visual[b, : lengths[b]] = clip.visual
        audio[b, : alengths[b]] = clip.audio
        centers[b, : lengths[b]] = coarse_centers(int(lengths[b]), int(alengths[b]))
        centers[b, lengths[b] :] = alengths[b]
    labels = np.array([c.label - 1 for c in clips], dtype=np.int64)
    return Batch(visual, audio, lengths, alengths, centers, labels)


# ------------------------------------------------------------------ heads


def encode_last(h_av, lengths=None):
    """Hidden state at the final valid step. ``h_av``: ``(T, d)`` or ``(B, T, d)``."""
    hv = ad.value(h_av)
    if hv.ndim < 2 or hv.shape[-2] == 0:
        raise InvalidInputError("cannot pool an empty sequence")
    if hv.ndim == 2:
        return ad.index(h_av, hv.shape[0] - 1)
    lengths = np.full(hv.shape[0], hv.shape[1]) if lengths is None else np.asarray(lengths)
    return ad.index(h_av, (np.arange(hv.shape[0]), lengths - 1))


def encode_average(h_av, lengths=None):
    """Time mean of the hidden states over valid steps."""
    hv = ad.value(h_av)
    if hv.ndim < 2 or hv.shape[-2] == 0:
        raise InvalidInputError("cannot pool an empty sequence")
    if hv.ndim == 2:
        return ad.mean(h_av, axis=0)
    lengths = np.full(hv.shape[0], hv.shape[1]) if lengths is None else np.asarray(lengths)
    mask = (np.arange(hv.shape[1])[None, :] < lengths[:, None]).astype(np.float64)
    total = ad.sum_(ad.mul(h_av, mask[:, :, None]), axis=1)
    return ad.mul(total, 1.0 / lengths[:, None])


def perception_attention(W_h, E, h_sel, time_mask=None):
    """Per-class attention over time.

    ``h_sel``: ``(T, d_sel)`` or ``(B, T, d_sel)``; returns ``(..., T, N)`` where
    column n is ``softmax_i((W_h h_sel,i)^T e_n)``.
    """
    Wv, Ev, hv = ad.value(W_h), ad.value(E), ad.value(h_sel)
    if Wv.shape[1] != hv.shape[-1] or Ev.shape[1] != Wv.shape[0]:
        raise ConfigError(
            f"perception widths inconsistent: W_h {Wv.shape}, E {Ev.shape}, h_sel {hv.shape}"
        )
    if hv.shape[-2] == 0:
        raise InvalidInputError("cannot attend over an empty sequence")
    proj = ad.matmul(h_sel, ad.swapaxes(W_h, 0, 1))
    scores = ad.matmul(proj, ad.swapaxes(E, 0, 1))
    mask = None if time_mask is None else np.asarray(time_mask)[..., None]
    return ad.softmax(scores, axis=-2, mask=mask)


def pool_per_class(f, h_av):
    """``sum_i f_i^n h_av,i`` for every class: ``(..., N, d)``."""
    return ad.matmul(ad.swapaxes(f, -1, -2), h_av)


def emotion_scores(W, b, pooled):
    """``s^n = W_n . pooled_n + b_n``; ``pooled``: ``(..., N, d)``."""
    return ad.add(ad.sum_(ad.mul(pooled, W), axis=-1), b)


def classify(scores):
    return ad.softmax(scores, axis=-1)


# ------------------------------------------------------------------ forward


@dataclass
class StackOutput:
    h_a: object
    h_av: object
    align_weights: object
    align_indices: np.ndarray
    align_mask: np.ndarray


@dataclass
class BatchOutput:
    posterior: object  # (B, N)
    scores: object
    stacks: dict[str, StackOutput]
    attention: object = None  # (B, T, N) for the perception head
    pooled: object = None


def _stack_forward(P, prefix, config, batch, mode, rng, dropout):
    def drop(x):
        return apply_dropout(x, dropout, rng, mode)

    vis = batch.visual
    h_shape = drop(ad.tanh(dense(vis[..., : config.shape_dim], P[f"{prefix}.shape.W"], P[f"{prefix}.shape.b"])))
    if config.appearance_dim:
        h_app = drop(
            ad.tanh(dense(vis[..., config.shape_dim :], P[f"{prefix}.appearance.W"], P[f"{prefix}.appearance.b"]))
        )
        vis_in = ad.concat([h_shape, h_app], axis=-1)
    else:
        vis_in = h_shape
    v = drop(ad.tanh(dense(vis_in, P[f"{prefix}.visual.W"], P[f"{prefix}.visual.b"])))
    aud = drop(ad.tanh(dense(batch.audio, P[f"{prefix}.audio.W"], P[f"{prefix}.audio.b"])))
    h_a = lstm_scan(P[f"{prefix}.audio_lstm.W"], P[f"{prefix}.audio_lstm.b"], aud)
    align = AlignParams(P[f"{prefix}.align.W_a"], P[f"{prefix}.align.W_v"], P[f"{prefix}.align.W_slot"], config.window)
    ctx, weights, idx, mask = align_sequences(align, h_a, v, batch.centers, batch.audio_lengths)
    h_av = lstm_scan(P[f"{prefix}.av_lstm.W"], P[f"{prefix}.av_lstm.b"], ad.concat([v, ctx], axis=-1))
    return StackOutput(h_a, h_av, weights, idx, mask)


def check_params(config: ModelConfig, params: Mapping) -> None:
    shapes = param_shapes(config)
    missing = set(shapes) - set(params)
    if missing:
        raise ConfigError(f"missing parameters: {sorted(missing)}")
    for name, shape in shapes.items():
        if ad.value(params[name]).shape != shape:
            raise ConfigError(f"parameter {name} has shape {ad.value(params[name]).shape}, expected {shape}")


def forward_batch(
    config: ModelConfig,
    params: Mapping,
    batch: Batch,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    dropout: float = 0.0,
) -> BatchOutput:
    """Posterior for every clip in ``batch``; ``params`` may be arrays or tape nodes."""
    P = params
    stacks = {p: _stack_forward(P, p, config, batch, mode, rng, dropout) for p in config.stacks()}
    main = stacks["main"]
    if config.head == "perception":
        f = perception_attention(P["percep.W_h"], P["percep.E"], stacks["sel"].h_av, batch.time_mask())
        pooled = apply_dropout(pool_per_class(f, main.h_av), dropout, rng, mode)
        scores = emotion_scores(P["percep.W"], P["percep.b"], pooled)
        return BatchOutput(classify(scores), scores, stacks, f, pooled)
    if config.head == "last":
        pooled = encode_last(main.h_av, batch.lengths)
    else:
        pooled = encode_average(main.h_av, batch.lengths)
    pooled = apply_dropout(pooled, dropout, rng, mode)
    scores = dense(pooled, P["head.W"], P["head.b"])
    return BatchOutput(classify(scores), scores, stacks, None, pooled)


@dataclass
class ForwardTrace:
    """Per-clip view of one forward pass (plain arrays)."""

    alignment: dict[str, AlignmentTrace]  # stack prefix -> trace
    hidden: dict[str, np.ndarray]  # "main.h_a", "main.h_av", ...
    attention: np.ndarray | None  # (N, T) f^n rows, perception head only
    pooled: np.ndarray
    scores: np.ndarray
    posterior: np.ndarray


def clip_trace(out: BatchOutput, batch: Batch, b: int) -> ForwardTrace:
    T, Ta = int(batch.lengths[b]), int(batch.audio_lengths[b])
    alignment, hidden = {}, {}
    for p, s in out.stacks.items():
        ctx_w = ad.value(s.align_weights)[b, :T]
        h_a = ad.value(s.h_a)[b, :Ta]
        idx = s.align_indices[b, :T]
        mask = s.align_mask[b, :T]
        pos = np.clip(idx, 1, Ta) - 1
        contexts = np.einsum("ts,tsd->td", ctx_w, h_a[pos])
        alignment[p] = AlignmentTrace(batch.centers[b, :T].copy(), idx.copy(), mask.copy(), ctx_w.copy(), contexts)
        hidden[f"{p}.h_a"] = h_a.copy()
        hidden[f"{p}.h_av"] = ad.value(s.h_av)[b, :T].copy()
    attention = None if out.attention is None else ad.value(out.attention)[b, :T].T.copy()
    return ForwardTrace(
        alignment,
        hidden,
        attention,
        ad.value(out.pooled)[b].copy(),
        ad.value(out.scores)[b].copy(),
        ad.value(out.posterior)[b].copy(),
    )


def forward(model: Model, clip, mode: str = "eval", rng=None, dropout: float = 0.0):
    """Posterior ``(N,)`` and trace for a single clip."""
    check_params(model.config, model.params)
    batch = make_batch([clip], model.config)
    out = forward_batch(model.config, model.params, batch, mode, rng, dropout)
    return ad.value(out.posterior)[0].copy(), clip_trace(out, batch, 0)


def predict(model: Model, clips, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode posteriors ``(n, N)`` and 0-based predictions for ``clips``."""
    check_params(model.config, model.params)
    posts = []
    for start in range(0, len(clips), batch_size):
        batch = make_batch(clips[start : start + batch_size], model.config)
        posts.append(ad.value(forward_batch(model.config, model.params, batch).posterior))
    post = np.concatenate(posts) if posts else np.zeros((0, model.config.n_classes))
    return post, post.argmax(axis=1)
