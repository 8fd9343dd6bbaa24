"""Input validation helpers for the estimator layer."""

from __future__ import annotations

import numpy as np

__all__ = ["as_images", "as_labels"]


def as_images(X, input_shape: tuple[int, int, int]) -> np.ndarray:
    """Coerce X to float64 [N, C, H, W] in [0, 1].

    Accepts image stacks directly or flat [N, C*H*W] matrices (the usual
    estimator calling convention), which are reshaped to `input_shape`.
    """
    X = np.asarray(X, dtype=np.float64)
    c, h, w = input_shape
    if X.ndim == 2:
        if X.shape[1] != c * h * w:
            raise ValueError(f"flat input has {X.shape[1]} features, expected {c * h * w}")
        X = X.reshape(len(X), c, h, w)
    if X.ndim != 4 or X.shape[1:] != (c, h, w):
        raise ValueError(f"input shape {X.shape} does not match {(c, h, w)}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite values in input images")
    if X.size and (X.min() < 0 or X.max() > 1):
        raise ValueError("image values must lie in [0, 1]")
    return X


def as_labels(y, num_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        rounded = np.rint(np.asarray(y, dtype=np.float64))
        if np.any(rounded != y):
            raise ValueError("labels must be integers")
        y = rounded
    y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return y
