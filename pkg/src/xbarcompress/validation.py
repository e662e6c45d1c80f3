"""Input validation helpers shared by the estimators and the functional API."""

import numbers

import numpy as np
from sklearn.utils import check_array

from .exceptions import NumericError, ShapeError, UsageError


def check_matrix(W, name="W"):
    """Return ``W`` as a finite 2-D float64 array.

    Raises ShapeError for anything that is not 2-D and NumericError for
    NaN or infinite entries.
    """
    W = np.asarray(W)
    if W.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise NumericError(f"{name} contains non-finite entries")
    return check_array(W, dtype=np.float64, ensure_all_finite=False, ensure_min_samples=1, ensure_min_features=1)


def check_rank(K, upper, name="K", lower=1):
    if not isinstance(K, numbers.Integral) or isinstance(K, bool):
        raise UsageError(f"{name} must be an integer, got {K!r}")
    if not lower <= K <= upper:
        raise UsageError(f"{name}={K} outside [{lower}, {upper}]")
    return int(K)


def check_fraction(x, name, lo=0.0, hi=1.0):
    if not isinstance(x, numbers.Real) or not lo <= x <= hi:
        raise UsageError(f"{name} must lie in [{lo}, {hi}], got {x!r}")
    return float(x)


def check_positive_int(x, name):
    if not isinstance(x, numbers.Integral) or isinstance(x, bool) or x < 1:
        raise UsageError(f"{name} must be a positive integer, got {x!r}")
    return int(x)


def check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")
    return arr


def as_images(X, input_shape=None):
    """Coerce samples to the (count, C, H, W) layout used by the network.

    2-D input (count, d) becomes (count, 1, 1, d); 3-D (count, H, W) gets a
    channel axis. When ``input_shape`` is given the result must match it.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X.reshape(len(X), 1, 1, X.shape[1])
    elif X.ndim == 3:
        X = X[:, None]
    elif X.ndim != 4:
        raise ShapeError(f"cannot interpret samples of shape {X.shape}")
    if input_shape is not None and X.shape[1:] != tuple(input_shape):
        X = X.reshape((len(X),) + tuple(input_shape)) if X[0].size == int(np.prod(input_shape)) else X
        if X.shape[1:] != tuple(input_shape):
            raise ShapeError(f"samples of shape {X.shape[1:]} do not match network input {tuple(input_shape)}")
    check_finite(X, "input samples")
    return X
