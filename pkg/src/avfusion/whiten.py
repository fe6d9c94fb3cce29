"""PCA whitening to a fixed number of kept dimensions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

EIGEN_FLOOR = 1e-8


@dataclass(frozen=True)
class WhitenTransform:
    mean: np.ndarray  # (D,)
    projection: np.ndarray  # (k, D)

    @property
    def k(self) -> int:
        return self.projection.shape[0]

    @property
    def dim(self) -> int:
        return self.projection.shape[1]


def pca_whiten_fit(X, k: int) -> WhitenTransform:
    """Fit a PCA whitening transform keeping the ``k`` leading components.

    Projection rows are eigenvectors of the sample covariance (ddof=1), in
    descending eigenvalue order, each scaled by ``1/sqrt(eigenvalue)``.
    Eigenvalues are floored at ``EIGEN_FLOOR`` so rank-deficient data never
    divides by zero.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidInputError(f"expected a samples x features matrix, got shape {X.shape}")
    n, d = X.shape
    if n < 2:
        raise InvalidInputError("whitening needs at least two samples")
    if not 1 <= k <= min(n - 1, d):
        raise InvalidInputError(f"k={k} outside feasible range 1..{min(n - 1, d)}")
    mu = X.mean(axis=0)
    centered = X - mu
    cov = centered.T @ centered / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    evals = np.maximum(evals[order], EIGEN_FLOOR)
    evecs = evecs[:, order]
    # fix eigenvector signs so fits are reproducible across LAPACK builds
    signs = np.sign(evecs[np.argmax(np.abs(evecs), axis=0), np.arange(k)])
    signs[signs == 0] = 1.0
    evecs = evecs * signs
    projection = evecs.T / np.sqrt(evals)[:, None]
    return WhitenTransform(mean=mu, projection=projection)


def pca_whiten_apply(t: WhitenTransform, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != t.dim:
        raise InvalidInputError(
            f"expected {t.dim} feature columns, got shape {X.shape}"
        )
    return (X - t.mean) @ t.projection.T
