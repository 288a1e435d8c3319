"""Dense H x W x C float64 image grid: creation and elementwise helpers.

Every array in this package is a C-contiguous float64 ndarray whose last
three axes are (height, width, channels); the flat layout is therefore
row-major (y, then x, then channel).  Operations return new arrays, so
tensors can be shared read-only between workers.
"""

import numpy as np

# (height, width, channels)
Shape = tuple[int, int, int]


def tensor_create(shape: Shape, fill: float = 0.0) -> np.ndarray:
    """Allocate an (H, W, C) tensor with every entry equal to `fill`."""
    h, w, c = shape
    if h <= 0 or w <= 0 or c <= 0:
        raise ValueError(f"invalid shape {shape!r}: all dimensions must be strictly positive")
    return np.full((h, w, c), float(fill), dtype=np.float64)


def tensor_map(t: np.ndarray, f) -> np.ndarray:
    """Elementwise image of a scalar function; shape preserved."""
    return np.vectorize(f, otypes=[np.float64])(t)


def tensor_reduce_mean(t: np.ndarray) -> float:
    """Arithmetic mean over all entries."""
    return float(np.mean(t))


def flat_index(shape: Shape, y: int, x: int, c: int) -> int:
    """Flat offset of (y, x, c) in the fixed row-major layout."""
    _, width, channels = shape
    return (y * width + x) * channels + c
