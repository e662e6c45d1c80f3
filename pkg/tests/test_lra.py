import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone

from xbarcompress import lra
from xbarcompress.exceptions import NumericError, ShapeError, UsageError

finite = st.floats(-10, 10, allow_nan=False, width=64)


def matrices(max_side=16):
    shapes = st.tuples(st.integers(1, max_side), st.integers(1, max_side))
    return shapes.flatmap(lambda s: arrays(np.float64, s, elements=finite))


@given(matrices())
def test_error_matches_direct_residual_for_every_rank(W):
    spec = lra.spectrum(W)
    total = np.sum(W * W)
    for K in range(1, W.shape[1] + 1):
        pair = lra.pca_factorize(W, K, spec=spec)
        direct = np.sum((W - pair.reconstruct()) ** 2) / total if total > 0 else 0.0
        assert abs(lra.reconstruction_error(spec, K) - direct) < 1e-8


@given(matrices())
def test_eigenvalues_are_scaled_squared_singular_values(W):
    lam = lra.spectrum(W).eigenvalues
    s = np.linalg.svd(W, compute_uv=False)
    oracle = np.zeros(W.shape[1])
    oracle[:len(s)] = s ** 2 / max(W.shape[0] - 1, 1)
    np.testing.assert_allclose(lam, oracle, atol=1e-8 * max(1.0, oracle.max()))


@given(matrices())
def test_errors_vector_is_monotone_and_bounded(W):
    e = lra.reconstruction_errors(lra.spectrum(W))
    assert e[-1] == 0.0
    assert np.all(np.diff(e) <= 1e-15)
    assert np.all((0 <= e) & (e <= 1))


@given(matrices(), st.floats(0, 1))
def test_min_rank_is_smallest_rank_meeting_tolerance(W, eps):
    spec = lra.spectrum(W)
    K = lra.min_rank(spec, eps)
    ok = [k for k in range(1, W.shape[1] + 1) if lra.reconstruction_error(spec, k) <= eps]
    assert K == (ok[0] if ok else W.shape[1])
    assert K >= 1


def test_pca_basis_is_orthonormal_with_positive_leading_entry(rng):
    W = rng.normal(size=(30, 12))
    V = lra.pca_factorize(W, 5).V
    np.testing.assert_allclose(V.T @ V, np.eye(5), atol=1e-12)
    for col in V.T:
        assert col[np.flatnonzero(np.abs(col) > 1e-12)[0]] > 0


def test_pca_and_svd_agree_on_reconstruction(rng):
    W = rng.normal(size=(40, 10)) @ np.diag(np.arange(10, 0, -1.0))
    for K in (1, 4, 10):
        np.testing.assert_allclose(lra.pca_factorize(W, K).reconstruct(), lra.svd_factorize(W, K).reconstruct(),
                                   atol=1e-9)


def test_exact_low_rank_matrix_has_zero_tail(rng):
    W = rng.normal(size=(20, 3)) @ rng.normal(size=(3, 8))
    spec = lra.spectrum(W)
    assert lra.reconstruction_error(spec, 3) < 1e-12
    assert lra.min_rank(spec, 1e-9) == 3


def test_zero_matrix_has_zero_error():
    spec = lra.spectrum(np.zeros((4, 3)))
    assert lra.reconstruction_error(spec, 1) == 0.0
    assert lra.min_rank(spec, 0.0) == 1


def test_centered_mode_reconstructs_with_mean(rng):
    W = rng.normal(size=(25, 6)) + 5.0
    pair = lra.pca_factorize(W, 6, mode="centered")
    np.testing.assert_allclose(pair.reconstruct(), W, atol=1e-10)
    assert pair.mean is not None


def test_area_beneficial():
    assert lra.area_beneficial(800, 500, 36)
    assert not lra.area_beneficial(25, 20, 12)
    # K (N + M) == N M is not a saving
    assert not lra.area_beneficial(2, 2, 1)
    with pytest.raises(UsageError):
        lra.area_beneficial(0, 3, 1)


@pytest.mark.parametrize("bad, exc", [
    (np.ones(3), ShapeError),
    (np.array([[1.0, np.nan]]), NumericError),
])
def test_bad_matrices_rejected(bad, exc):
    with pytest.raises(exc):
        lra.spectrum(bad)


def test_rank_out_of_range(rng):
    W = rng.normal(size=(5, 4))
    with pytest.raises(UsageError):
        lra.pca_factorize(W, 0)
    with pytest.raises(UsageError):
        lra.pca_factorize(W, 5)
    with pytest.raises(UsageError):
        lra.spectrum(W, "sideways")


def test_estimator_api(rng):
    X = rng.normal(size=(50, 3)) @ rng.normal(size=(3, 9)) + 1e-4 * rng.normal(size=(50, 9))
    est = lra.LowRankApproximation(epsilon=1e-3)
    assert clone(est).get_params() == est.get_params()
    Z = est.fit_transform(X)
    assert est.rank_ == 3 and Z.shape == (50, 3)
    assert est.reconstruction_error_ <= 1e-3
    np.testing.assert_allclose(est.inverse_transform(Z), X, atol=1e-2)
    svd = lra.LowRankApproximation(n_components=3, method="svd").fit(X)
    np.testing.assert_allclose(svd.inverse_transform(svd.transform(X)), est.inverse_transform(Z), atol=1e-9)
