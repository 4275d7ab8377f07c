"""Small input-validation helpers shared across the package."""

import numpy as np


def check_complex_vector(values, name="values"):
    """Coerce to a 1-D complex ndarray and reject non-finite entries."""
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    arr = arr.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(arr.real)) or not np.all(np.isfinite(arr.imag)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_complex_matrix(values, name="values"):
    """Coerce to a 2-D complex ndarray (rows = observations)."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    arr = arr.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(arr.real)) or not np.all(np.isfinite(arr.imag)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_subchannels(subchannels, n_subchannels, name="subchannels"):
    """Validate a strictly increasing integer sub-channel index set."""
    arr = np.asarray(subchannels)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D index list")
    if not np.issubdtype(arr.dtype, np.integer):
        cast = arr.astype(np.int64)
        if not np.array_equal(cast, arr):
            raise ValueError(f"{name} must be integers")
        arr = cast
    arr = arr.astype(np.int64, copy=False)
    if np.any(np.diff(arr) <= 0):
        raise ValueError(f"{name} must be strictly increasing")
    lo, hi = -(n_subchannels // 2), n_subchannels // 2 - 1
    if arr[0] < lo or arr[-1] > hi:
        raise ValueError(
            f"{name} out of range [{lo}, {hi}] for {n_subchannels} sub-channels"
        )
    return arr


def check_positive(value, name):
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be positive and finite, got {value!r}")
    return float(value)
