"""Attention diagnostics against planted ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedOperationError
from .model import Model, clip_trace, forward_batch, make_batch


@dataclass
class AlignmentRecovery:
    fraction: float  # within-tolerance share of salient timesteps
    n_steps: int
    n_clips: int
    tolerance: float


@dataclass
class SalienceLocalization:
    fraction: float  # share of clips whose in-interval mass >= factor * uniform
    n_clips: int
    factor: float
    ratios: np.ndarray  # in-interval mass / uniform mass, per clip


def traces(model: Model, clips, batch_size: int = 64):
    """Eval-mode :class:`ForwardTrace` for each clip, in order."""
    out = []
    for start in range(0, len(clips), batch_size):
        chunk = clips[start : start + batch_size]
        batch = make_batch(chunk, model.config)
        res = forward_batch(model.config, model.params, batch)
        out.extend(clip_trace(res, batch, b) for b in range(len(chunk)))
    return out


def _correct(clips, trs):
    return [(c, tr) for c, tr in zip(clips, trs) if int(np.argmax(tr.posterior)) == c.label - 1]


def alignment_recovery(model: Model, clips, stack: str = "main", tolerance: float | None = None, trs=None):
    """Share of salient visual steps (correctly classified clips only) whose
    attention-expected audio frame is within ``tolerance`` (default ``w/2``)
    of the planted alignment."""
    tol = model.config.window / 2 if tolerance is None else tolerance
    trs = traces(model, clips) if trs is None else trs
    hits = total = n = 0
    for clip, tr in _correct(clips, trs):
        if clip.truth_align is None or clip.truth_salient is None:
            continue
        s, e = clip.truth_salient
        expected = tr.alignment[stack].expected_index()[s - 1 : e]
        dev = np.abs(expected - clip.truth_align[s - 1 : e])
        hits += int(np.sum(dev <= tol))
        total += len(dev)
        n += 1
    return AlignmentRecovery(hits / total if total else 0.0, total, n, tol)


def salience_localization(model: Model, clips, factor: float = 2.0, trs=None):
    """Share of correctly classified clips where the true class's attention
    mass inside the planted interval is at least ``factor`` times ``|interval|/T``."""
    if model.config.head != "perception":
        raise UnsupportedOperationError("salience localization needs the perception head")
    trs = traces(model, clips) if trs is None else trs
    ratios = []
    for clip, tr in _correct(clips, trs):
        if clip.truth_salient is None:
            continue
        s, e = clip.truth_salient
        mass = tr.attention[clip.label - 1, s - 1 : e].sum()
        ratios.append(mass / ((e - s + 1) / clip.T))
    ratios = np.array(ratios)
    frac = float(np.mean(ratios >= factor)) if len(ratios) else 0.0
    return SalienceLocalization(frac, len(ratios), factor, ratios)
