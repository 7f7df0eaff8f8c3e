"""Input validation helpers shared by the estimators."""

import numpy as np


def check_counts(x, name="counts"):
    """Return ``x`` as a 1-d int64 array of non-negative integers."""
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contain non-finite values")
    if arr.size and np.any(arr != np.round(arr)):
        raise ValueError(f"{name} must be integers")
    arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise ValueError(f"{name} must be non-negative")
    return arr


def check_scales(m, length, name="scale factors"):
    arr = np.asarray(m, dtype=float)
    if arr.ndim == 0:
        arr = np.full(length, float(arr))
    if arr.shape != (length,):
        raise ValueError(f"{name} must have length {length}, got shape {arr.shape}")
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError(f"{name} must be finite and non-negative")
    return arr


def check_flow_tensor(X):
    """Validate a ``(T, I+1, I+1)`` count tensor."""
    arr = np.asarray(X)
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2] or arr.shape[1] < 2:
        raise ValueError(f"flow tensor must have shape (T, I+1, I+1), got {arr.shape}")
    if np.any(arr < 0):
        raise ValueError("flow counts must be non-negative")
    return arr.astype(np.int64)


def check_positive_draws(phi, name="rate draws"):
    arr = np.asarray(phi, dtype=float)
    if np.any(~(arr > 0)) or np.any(~np.isfinite(arr)):
        raise ValueError(f"{name} must be finite and strictly positive")
    return arr
