"""Input validation helpers shared by the library core and the sklearn-style wrappers."""

from __future__ import annotations

import numpy as np

from .errors import InputError


def as_matrix(X, name: str = "X") -> np.ndarray:
    """Coerce to a 2D float64 C-contiguous matrix with finite entries."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise InputError(f"{name} must be a nonempty 2D array")
    if not np.all(np.isfinite(X)):
        raise InputError(f"{name} contains non-finite values")
    return X


def as_labels(y, n: int, k: int, name: str = "y") -> np.ndarray:
    """Coerce labels to int64 and check range: {-1,+1} when k == 2, else [0, k)."""
    y = np.ascontiguousarray(y, dtype=np.int64)
    if y.ndim != 1 or y.shape[0] != n:
        raise InputError(f"{name} must be a vector of length {n}")
    if k == 2:
        if not np.all(np.abs(y) == 1):
            raise InputError(f"{name} must take values in {{-1, +1}} for binary tasks")
    else:
        if y.min() < 0 or y.max() >= k:
            raise InputError(f"{name} must take values in [0, {k})")
    return y


def check_same_examples(n_a: int, n_b: int, what: str = "datasets"):
    if n_a != n_b:
        raise InputError(f"{what} must have the same number of examples ({n_a} vs {n_b})")
