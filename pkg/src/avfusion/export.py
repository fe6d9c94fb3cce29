"""Plot-ready CSV exports: attention heatmaps and the 2-D embedding projection.

Heatmap CSV layout: header ``row,1,2,...,T`` then one line per matrix row,
the first field being the row label. Values are written with ``repr`` so the
file re-parses to the identical matrix.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, UnsupportedOperationError, ValidationError
from .model import Model, forward


@dataclass
class HeatmapExport:
    row_labels: list[str]
    matrix: np.ndarray  # (rows, T)
    normalization: str = "row-max"

    @property
    def T(self) -> int:
        return self.matrix.shape[1]


def row_max_normalize(m: np.ndarray) -> np.ndarray:
    """Scale each row so its maximum is exactly 1; all-zero rows stay zero."""
    m = np.asarray(m, dtype=np.float64)
    peak = m.max(axis=1, keepdims=True)
    out = np.divide(m, peak, out=np.zeros_like(m), where=peak > 0)
    # x / x is exactly 1 in IEEE arithmetic, but pin the peak anyway
    rows = np.flatnonzero(peak[:, 0] > 0)
    out[rows, m[rows].argmax(axis=1)] = 1.0
    return out


def _check_clip(model: Model, clip) -> None:
    cfg = model.config
    if clip.audio.shape[1] != cfg.audio_dim or clip.visual.shape[1] != cfg.visual_dim:
        raise ValidationError(
            f"clip {clip.clip_id}: widths (audio {clip.audio.shape[1]}, visual {clip.visual.shape[1]}) "
            f"do not match the model (audio {cfg.audio_dim}, visual {cfg.visual_dim})"
        )


def alignment_heatmap(model: Model, clip, stack: str = "main", normalize: bool = True) -> HeatmapExport:
    """``(2w+1) x T`` slot weights; the bottom row is the earliest slot (offset ``-w``)."""
    _check_clip(model, clip)
    _, trace = forward(model, clip)
    m = trace.alignment[stack].heatmap()[::-1]
    w = model.config.window
    labels = [f"slot{off:+d}" for off in range(w, -w - 1, -1)]
    return HeatmapExport(labels, row_max_normalize(m) if normalize else m.copy(), "row-max" if normalize else "none")


def perception_heatmap(model: Model, clip, normalize: bool = True) -> HeatmapExport:
    """``N x T`` per-class attention, rows in class order (class 1 first)."""
    if model.config.head != "perception":
        raise UnsupportedOperationError(f"head {model.config.head!r} has no perception attention")
    _check_clip(model, clip)
    _, trace = forward(model, clip)
    m = trace.attention
    labels = [f"class{n}" for n in range(1, m.shape[0] + 1)]
    return HeatmapExport(labels, row_max_normalize(m) if normalize else m.copy(), "row-max" if normalize else "none")


def write_heatmap(h: HeatmapExport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write("row," + ",".join(str(t) for t in range(1, h.T + 1)) + "\n")
        for label, row in zip(h.row_labels, h.matrix):
            fh.write(label + "," + ",".join(repr(float(x)) for x in row) + "\n")


def read_heatmap(path) -> HeatmapExport:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "row" or header[1:] != [str(t) for t in range(1, len(header))]:
            raise ParseError(path, 1, "header must be 'row,1,2,...,T'")
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(x) for x in row[1:]])
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            labels.append(row[0])
    return HeatmapExport(labels, np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 1), "unknown")


@dataclass
class EmbeddingProjection:
    points: np.ndarray  # (N, 2)
    explained_variance: np.ndarray  # (2,), descending
    degenerate: bool


def project_embeddings(model: Model, tol: float = 1e-12) -> EmbeddingProjection:
    """PCA of the class embedding vectors onto their top two principal axes.

    Each axis is sign-fixed so its largest-magnitude loading is positive.
    If the embeddings are all identical the projection is all zeros and a
    ``RuntimeWarning`` is issued.
    """
    if model.config.head != "perception":
        raise UnsupportedOperationError(f"head {model.config.head!r} has no class embeddings")
    E = np.asarray(model.params["percep.E"], dtype=np.float64)
    N = E.shape[0]
    centered = E - E.mean(axis=0)
    if np.max(np.abs(centered), initial=0.0) <= tol * max(1.0, np.max(np.abs(E))):
        warnings.warn("all class embeddings are identical; projection is degenerate", RuntimeWarning, stacklevel=2)
        return EmbeddingProjection(np.zeros((N, 2)), np.zeros(2), True)
    cov = centered.T @ centered / max(N - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    axes = np.zeros((E.shape[1], 2))
    n_axes = min(2, E.shape[1])
    axes[:, :n_axes] = evecs[:, :n_axes]
    for j in range(n_axes):
        if axes[np.argmax(np.abs(axes[:, j])), j] < 0:
            axes[:, j] *= -1
    var = np.zeros(2)
    var[:n_axes] = np.clip(evals[:n_axes], 0.0, None)
    return EmbeddingProjection(centered @ axes, var, False)


def write_projection(p: EmbeddingProjection, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write("class,x,y\n")
        for n, (x, y) in enumerate(p.points, start=1):
            fh.write(f"{n},{float(x)!r},{float(y)!r}\n")


def read_projection(path) -> np.ndarray:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["class", "x", "y"]:
            raise ParseError(path, 1, "header must be 'class,x,y'")
        pts = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3 or row[0] != str(lineno - 1):
                raise ParseError(path, lineno, "expected 'class,x,y' with consecutive class numbers")
            try:
                pts.append([float(row[1]), float(row[2])])
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
    return np.array(pts, dtype=np.float64).reshape(len(pts), 2)
