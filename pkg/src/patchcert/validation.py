"""Input validation helpers shared by the estimator-facing API."""

from __future__ import annotations

import numpy as np


def as_image_stack(X) -> np.ndarray:
    """Coerce input to a float64 (N, H, W, C) stack with values in [0, 1]."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[..., None]
    if X.ndim != 4:
        raise ValueError(
            f"expected images shaped (N, H, W) or (N, H, W, C), got {X.shape}"
        )
    if X.size and (X.min() < 0.0 or X.max() > 1.0):
        raise ValueError("pixel values must lie in [0, 1]")
    return X


def as_labels(y, n: int) -> np.ndarray:
    """Coerce labels to a 1-D int64 array of length ``n``."""
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n:
        raise ValueError(f"expected {n} labels in a 1-D array, got shape {y.shape}")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        rounded = np.rint(y)
        if not np.array_equal(rounded, y):
            raise ValueError("labels must be integers")
        y = rounded
    y = y.astype(np.int64)
    if y.size and y.min() < 0:
        raise ValueError("labels must be non-negative")
    return y
