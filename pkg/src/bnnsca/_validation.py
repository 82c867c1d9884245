"""Input validation helpers shared across the package."""

import numpy as np

IMAGE_SHAPE = (28, 28)
TRACE_LEN = IMAGE_SHAPE[0] * IMAGE_SHAPE[1]


def as_pixel_array(image):
    """Coerce an Image or array-like into a validated (28, 28) uint8 array."""
    pixels = getattr(image, "pixels", image)
    arr = np.asarray(pixels)
    if arr.shape != IMAGE_SHAPE:
        raise ValueError(f"expected a {IMAGE_SHAPE} image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if np.any((arr < 0) | (arr > 255)):
            raise ValueError("pixel values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def check_grid(grid, name="grid"):
    """Validate a (28, 28) real-valued grid with entries in [0, 255]."""
    arr = np.asarray(grid, dtype=float)
    if arr.shape != IMAGE_SHAPE:
        raise ValueError(f"{name} must have shape {IMAGE_SHAPE}, got {arr.shape}")
    if np.any((arr < 0) | (arr > 255)):
        raise ValueError(f"{name} values must lie in [0, 255]")
    return arr


def check_kernel(kernel):
    """Validate a 3x3 kernel with entries in {-1, +1}; returns int8 array."""
    arr = np.asarray(kernel)
    if arr.shape != (3, 3):
        raise ValueError(f"kernel must be 3x3, got {arr.shape}")
    if not np.all(np.isin(arr, (-1, 1))):
        raise ValueError("kernel weights must be -1 or +1")
    return arr.astype(np.int8)


def check_binary_pm1(arr, name="feature map"):
    """Validate that all entries are -1 or +1."""
    arr = np.asarray(arr)
    if not np.all(np.isin(arr, (-1, 1))):
        raise ValueError(f"{name} must contain only -1/+1 values")
    return arr.astype(np.int8)


def check_trace_matrix(X):
    """Coerce trace input into a (n_runs, 784) float matrix.

    Accepts a single trace (length 784), a 2D array, or a list of
    TdcTrace-like objects exposing ``.hamming_weights``.
    """
    if isinstance(X, (list, tuple)) and X and hasattr(X[0], "hamming_weights"):
        X = [t.hamming_weights for t in X]
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2 or arr.shape[1] != TRACE_LEN:
        raise ValueError(f"expected traces of length {TRACE_LEN}, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError("at least one trace is required")
    if not np.all(np.isfinite(arr)):
        raise ValueError("traces must be finite")
    return arr
