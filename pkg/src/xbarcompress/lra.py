"""Low-rank approximation of weight matrices.

A matrix ``W`` (N x M) is replaced by ``U @ V.T`` with ``U`` (N x K) and
``V`` (M x K). PCA takes ``V`` from the top eigenvectors of the M x M
Gram (or covariance) matrix and projects ``U = W @ V``. The relative
squared residual of that projection equals the tail share of the
eigenvalues, which is what :func:`reconstruction_error` reports.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import UsageError
from .validation import check_fraction, check_matrix, check_rank

MODES = ("uncentered", "centered")


@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    mode: str
    mean: np.ndarray = None

    @property
    def size(self):
        return len(self.eigenvalues)


@dataclass
class LowRankPair:
    """Factors with ``W ~= U @ V.T (+ 1 mean.T in centered mode)``."""

    U: np.ndarray
    V: np.ndarray
    mean: np.ndarray = None

    @property
    def rank(self):
        return self.U.shape[1]

    def reconstruct(self):
        W = self.U @ self.V.T
        if self.mean is not None:
            W = W + self.mean
        return W

    def copy(self):
        return LowRankPair(self.U.copy(), self.V.copy(), None if self.mean is None else self.mean.copy())


def _fix_signs(vectors):
    # first nonzero component of every eigenvector made positive
    out = vectors.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if len(nz) and col[nz[0]] < 0:
            out[:, j] = -col
    return out


def spectrum(W, mode="uncentered"):
    """Eigen-decomposition of ``W_c.T @ W_c / (N - 1)``, largest eigenvalue first.

    ``W_c`` is ``W`` with its row mean removed in centered mode and ``W``
    itself otherwise. For N == 1 the divisor is taken as 1.
    """
    W = check_matrix(W)
    if mode not in MODES:
        raise UsageError(f"mode must be one of {MODES}, got {mode!r}")
    N = W.shape[0]
    mean = None
    if mode == "centered":
        mean = W.mean(axis=0)
        W = W - mean
    C = W.T @ W / max(N - 1, 1)
    C = (C + C.T) / 2
    lam, vecs = np.linalg.eigh(C)
    order = np.argsort(-lam, kind="stable")
    lam = lam[order]
    lam[lam < 0] = 0.0
    return SpectrumResult(lam, _fix_signs(vecs[:, order]), mode, mean)


def reconstruction_error(spec, K):
    """Tail share ``sum(lam[K:]) / sum(lam)`` of the spectrum; 0 when all eigenvalues vanish."""
    lam = spec.eigenvalues if isinstance(spec, SpectrumResult) else np.asarray(spec, dtype=np.float64)
    K = check_rank(K, len(lam), lower=0)
    total = lam.sum()
    if total <= 0:
        return 0.0
    return float(min(1.0, lam[K:].sum() / total))


def reconstruction_errors(spec):
    """``e_K`` for every K in 0..M at once."""
    lam = spec.eigenvalues if isinstance(spec, SpectrumResult) else np.asarray(spec, dtype=np.float64)
    total = lam.sum()
    if total <= 0:
        return np.zeros(len(lam) + 1)
    tails = np.concatenate([np.cumsum(lam[::-1])[::-1], [0.0]])
    return np.minimum(tails / total, 1.0)


def pca_factorize(W, K, mode="uncentered", spec=None):
    """Rank-K PCA factors of ``W``: ``V`` = top-K eigenvectors, ``U = W_c @ V``."""
    W = check_matrix(W)
    K = check_rank(K, W.shape[1])
    if spec is None:
        spec = spectrum(W, mode)
    V = spec.eigenvectors[:, :K].copy()
    if spec.mode == "centered":
        return LowRankPair((W - spec.mean) @ V, V, spec.mean.copy())
    return LowRankPair(W @ V, V)


def svd_factorize(W, K):
    """Truncated SVD factors: ``U = left singular vectors * singular values``, ``V`` = right singular vectors."""
    W = check_matrix(W)
    K = check_rank(K, min(W.shape))
    left, s, right_t = np.linalg.svd(W, full_matrices=False)
    V = _fix_signs(right_t[:K].T)
    signs = np.sign(np.sum(V * right_t[:K].T, axis=0))
    U = left[:, :K] * (s[:K] * signs)
    return LowRankPair(U, V)


def svd_spectrum(W):
    """Spectrum equivalent for the SVD route: squared singular values / (N - 1)."""
    W = check_matrix(W)
    _, s, right_t = np.linalg.svd(W, full_matrices=True)
    lam = np.zeros(W.shape[1])
    lam[:len(s)] = s ** 2 / max(W.shape[0] - 1, 1)
    return SpectrumResult(lam, _fix_signs(right_t.T), "uncentered")


def min_rank(spec, epsilon):
    """Smallest K >= 1 whose reconstruction error is at most ``epsilon``."""
    epsilon = check_fraction(epsilon, "epsilon")
    errors = reconstruction_errors(spec)
    ok = np.flatnonzero(errors[1:] <= epsilon)
    return int(ok[0]) + 1 if len(ok) else len(errors) - 1


def area_beneficial(N, M, K):
    """True when two crossbars of N x K and K x M cells use fewer cells than one N x M."""
    if min(N, M, K) < 1:
        raise UsageError("N, M and K must be >= 1")
    return K * (N + M) < N * M


def factorize(W, K, method="pca"):
    if method == "pca":
        return pca_factorize(W, K)
    if method == "svd":
        return svd_factorize(W, K)
    raise UsageError(f"unknown LRA method {method!r}")


class LowRankApproximation(TransformerMixin, BaseEstimator):
    """Fit a rank-K basis to the rows of a matrix, in the style of sklearn's PCA.

    Parameters
    ----------
    n_components : int or None
        Rank K. If None, the smallest rank meeting ``epsilon`` is used.
    epsilon : float
        Tolerable reconstruction error used when ``n_components`` is None.
    method : {"pca", "svd"}
    centered : bool
        Remove the row mean before the decomposition (PCA only).

    Attributes
    ----------
    components_ : ndarray (n_features, K)
        The basis ``V``.
    eigenvalues_ : ndarray (n_features,)
    mean_ : ndarray or None
    reconstruction_error_ : float
    """

    def __init__(self, n_components=None, epsilon=0.01, method="pca", centered=False):
        self.n_components = n_components
        self.epsilon = epsilon
        self.method = method
        self.centered = centered

    def fit(self, X, y=None):
        X = check_matrix(X, "X")
        if self.method == "svd":
            if self.centered:
                raise UsageError("centered mode is only defined for PCA")
            spec = svd_spectrum(X)
        elif self.method == "pca":
            spec = spectrum(X, "centered" if self.centered else "uncentered")
        else:
            raise UsageError(f"unknown LRA method {self.method!r}")
        K = self.n_components if self.n_components is not None else min_rank(spec, self.epsilon)
        K = check_rank(K, X.shape[1] if self.method == "pca" else min(X.shape), "n_components")
        if self.method == "pca":
            pair = pca_factorize(X, K, spec=spec)
        else:
            pair = svd_factorize(X, K)
        self.n_features_in_ = X.shape[1]
        self.components_ = pair.V
        self.mean_ = pair.mean
        self.eigenvalues_ = spec.eigenvalues
        self.rank_ = K
        self.reconstruction_error_ = reconstruction_error(spec, K)
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_matrix(X, "X")
        if self.mean_ is not None:
            X = X - self.mean_
        return X @ self.components_

    def inverse_transform(self, U):
        check_is_fitted(self, "components_")
        W = np.asarray(U) @ self.components_.T
        return W + self.mean_ if self.mean_ is not None else W
