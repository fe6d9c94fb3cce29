import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avfusion.errors import InvalidInputError
from avfusion.whiten import EIGEN_FLOOR, pca_whiten_apply, pca_whiten_fit


def sample_cov(Z):
    return np.cov(Z, rowvar=False, ddof=1).reshape(Z.shape[1], Z.shape[1])


def test_independent_unit_features_whiten_to_identity(rng):
    X = rng.standard_normal((2000, 6))
    t = pca_whiten_fit(X, 6)
    Z = pca_whiten_apply(t, X)
    assert np.linalg.norm(sample_cov(Z) - np.eye(6)) < 0.15


def test_correlated_features_whiten_to_identity(rng):
    M = rng.standard_normal((5, 5))
    X = rng.standard_normal((500, 5)) @ M + 3.0
    Z = pca_whiten_apply(pca_whiten_fit(X, 5), X)
    np.testing.assert_allclose(sample_cov(Z), np.eye(5), atol=1e-10)


def test_rewhitening_keeps_identity_covariance(rng):
    X = rng.standard_normal((800, 4)) * [1, 5, 0.2, 3]
    Z = pca_whiten_apply(pca_whiten_fit(X, 4), X)
    Z2 = pca_whiten_apply(pca_whiten_fit(Z, 4), Z)
    assert np.linalg.norm(sample_cov(Z2) - np.eye(4)) < 1e-9


def test_rank_one_data_gives_one_unit_variance_coordinate(rng):
    s = rng.standard_normal(300)
    X = np.column_stack([2.0 * s, -1.0 * s]) + [1.0, 4.0]
    Z = pca_whiten_apply(pca_whiten_fit(X, 1), X)
    assert Z.shape == (300, 1)
    assert np.var(Z[:, 0], ddof=1) == pytest.approx(1.0, abs=1e-10)


def test_eigenvalue_floor_prevents_division_by_zero(rng):
    s = rng.standard_normal(50)
    X = np.column_stack([s, s, s])  # rank 1, keep 3
    t = pca_whiten_fit(X, 2)
    assert np.all(np.isfinite(t.projection))
    assert np.max(np.abs(t.projection[1])) <= 1 / np.sqrt(EIGEN_FLOOR) * 1.0001


def test_projection_rows_are_scaled_eigenvectors_in_descending_order(rng):
    X = rng.standard_normal((400, 3)) * [3.0, 1.0, 2.0]
    t = pca_whiten_fit(X, 3)
    cov = sample_cov(X)
    norms = np.linalg.norm(t.projection, axis=1)
    evals = 1.0 / norms**2
    assert np.all(np.diff(evals) < 0)
    for row, lam in zip(t.projection, evals):
        u = row / np.linalg.norm(row)
        np.testing.assert_allclose(cov @ u, lam * u, atol=1e-10)


def test_mean_row_maps_to_zero(rng):
    X = rng.standard_normal((100, 4))
    t = pca_whiten_fit(X, 3)
    assert np.array_equal(pca_whiten_apply(t, np.tile(t.mean, (5, 1))), np.zeros((5, 3)))


def test_keeps_twenty_of_ninety_eight_shape_columns(rng):
    X = rng.standard_normal((300, 98))
    assert pca_whiten_apply(pca_whiten_fit(X, 20), X).shape == (300, 20)


def test_dimension_mismatch_rejected(rng):
    t = pca_whiten_fit(rng.standard_normal((20, 4)), 2)
    with pytest.raises(InvalidInputError):
        pca_whiten_apply(t, rng.standard_normal((3, 5)))


@pytest.mark.parametrize("n,d,k", [(1, 3, 1), (5, 3, 0), (5, 3, 4), (3, 6, 3)])
def test_infeasible_k_rejected(rng, n, d, k):
    with pytest.raises(InvalidInputError):
        pca_whiten_fit(rng.standard_normal((n, d)), k)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.integers(10, 60))
def test_whitened_fit_data_has_zero_mean(seed, d, n):
    X = np.random.default_rng(seed).standard_normal((n, d)) * 5 + 7
    k = min(d, n - 1)
    Z = pca_whiten_apply(pca_whiten_fit(X, k), X)
    assert np.max(np.abs(Z.mean(axis=0))) < 1e-9
