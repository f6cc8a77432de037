"""Input validation for array-facing entry points."""

import numpy as np
from sklearn.utils.validation import check_array

from .errors import ShapeError


def validate_image_batch(X, size: int = None) -> np.ndarray:
    """Coerce to a finite (n, 3, H, W) float64 batch in [0, 1]."""
    X = check_array(X, allow_nd=True, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1] != 3:
        raise ShapeError(f"images must be (n, 3, H, W), got {X.shape}")
    if size is not None and X.shape[2:] != (size, size):
        raise ShapeError(f"images must be {size}x{size}, got {X.shape[2]}x{X.shape[3]}")
    if X.min() < 0 or X.max() > 1:
        raise ShapeError(f"image values must lie in [0, 1], got range [{X.min()}, {X.max()}]")
    return X


def validate_mask_batch(y, n: int, hw: tuple) -> np.ndarray:
    """Coerce to a binary (n, H, W) float64 batch matching the images."""
    y = check_array(y, allow_nd=True, dtype=np.float64)
    if y.ndim == 2:
        y = y[None]
    if y.ndim == 4 and y.shape[1] == 1:
        y = y[:, 0]
    if y.ndim != 3:
        raise ShapeError(f"masks must be (n, H, W), got {y.shape}")
    if y.shape[0] != n or y.shape[1:] != hw:
        raise ShapeError(f"masks {y.shape} do not match images ({n}, 3, {hw[0]}, {hw[1]})")
    if not np.all(np.isin(np.unique(y), (0.0, 1.0))):
        raise ShapeError("masks must be binary {0, 1}")
    return y
