"""Input validation helpers shared across the toolkit."""

from __future__ import annotations

import numpy as np


def as_float_array(pixels, name: str = "pixels") -> np.ndarray:
    """Return a C-contiguous float64 copy of array-like input."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    return np.ascontiguousarray(arr)


def check_unit_interval(arr: np.ndarray, name: str = "pixels") -> None:
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    lo, hi = float(arr.min()), float(arr.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"{name} must lie in [0, 1], found range [{lo}, {hi}]")


def as_bool_mask(pixels, name: str = "mask") -> np.ndarray:
    """Coerce 0/1, 0/255, or boolean input to a 2D boolean array."""
    arr = np.asarray(pixels)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2D, got shape {arr.shape}")
    if arr.dtype == bool:
        return np.ascontiguousarray(arr)
    values = np.unique(arr)
    allowed = {0, 1} if arr.dtype.kind in "iu" and arr.max(initial=0) <= 1 else {0, 255}
    for v in values:
        if int(v) not in allowed:
            raise ValueError(f"{name} contains value {v!r}; expected binary values")
    return np.ascontiguousarray(arr > 0)


def check_positive_int(value: int, name: str) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value <= 0:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_same_shape(a: np.ndarray, b: np.ndarray, names: str = "arrays") -> None:
    if a.shape != b.shape:
        raise ValueError(f"{names} must share a shape, got {a.shape} vs {b.shape}")


def freeze(arr: np.ndarray) -> np.ndarray:
    """Mark an array read-only so wrapper types stay immutable."""
    arr.setflags(write=False)
    return arr
