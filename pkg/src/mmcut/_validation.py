"""Input checking helpers shared by the public functions."""

import numpy as np

from .exceptions import EmptyShape


def check_image(image):
    """Return ``image`` as a 2-D float array with values in [0, 1]."""
    arr = np.asarray(image, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D grayscale image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite intensities")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image intensities must lie in [0, 1]")
    return arr


def check_mask(mask, shape=None):
    """Return ``mask`` as a 2-D boolean array, optionally checking its shape."""
    arr = np.asarray(mask)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"expected a non-empty 2-D mask, got shape {arr.shape}")
    if arr.dtype != bool:
        values = np.unique(arr)
        if not np.all(np.isin(values, (0, 1))):
            raise ValueError("mask labels must be 0 or 1")
        arr = arr.astype(bool)
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"mask shape {arr.shape} does not match image shape {tuple(shape)}")
    return arr


def check_nondegenerate(mask, what="mask"):
    if not mask.any() or mask.all():
        raise EmptyShape(f"{what} must contain both foreground and background pixels")
    return mask
