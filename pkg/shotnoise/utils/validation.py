"""Argument checks shared by the services."""

import math
from typing import Optional

import numpy as np

from shotnoise.errors import InvalidArgumentError

MAX_SEED = 2**64


def require_positive(value: float, name: str) -> float:
    """Check that value is a finite number > 0"""
    if not isinstance(value, (int, float, np.number)) or not math.isfinite(value) or value <= 0:
        raise InvalidArgumentError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def require_nonnegative(value: float, name: str) -> float:
    """Check that value is a finite number >= 0"""
    if not isinstance(value, (int, float, np.number)) or not math.isfinite(value) or value < 0:
        raise InvalidArgumentError(f"{name} must be a nonnegative finite number, got {value!r}")
    return float(value)


def require_seed(seed: int) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or not 0 <= int(seed) < MAX_SEED:
        raise InvalidArgumentError(f"seed must be an integer in [0, 2^64), got {seed!r}")
    return int(seed)


def require_state(x, dimension: Optional[int], name: str = 'x') -> np.ndarray:
    """Coerce to a float vector, check its length and that it is finite and >= 0"""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or (dimension is not None and arr.shape[0] != dimension):
        raise InvalidArgumentError(f"{name} must be a vector of length {dimension}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise InvalidArgumentError(f"{name} must be finite and coordinate-wise nonnegative")
    return arr


def require_increasing_grid(grid, lower: float, upper: float, name: str = 'grid') -> np.ndarray:
    """Check a strictly increasing 1-d time grid contained in [lower, upper]"""
    arr = np.asarray(grid, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidArgumentError(f"{name} must be a non-empty 1-d array")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} must be finite")
    if np.any(np.diff(arr) <= 0):
        raise InvalidArgumentError(f"{name} must be strictly increasing")
    if arr[0] < lower or arr[-1] > upper:
        raise InvalidArgumentError(f"{name} must lie in [{lower}, {upper}]")
    return arr
