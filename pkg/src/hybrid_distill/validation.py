"""Input validation helpers.

Small ``check_*`` functions in the spirit of ``sklearn.utils.validation``:
each takes raw user input, returns a cleaned float64 array (or value) and
raises one of the package exceptions on failure.
"""
from __future__ import annotations

import numbers

import numpy as np

from .exceptions import ConfigError, InputDomainError, ShapeError


def check_logits(z, name: str = "logits") -> np.ndarray:
    """Return ``z`` as a 1-D float64 array of finite values with length >= 2."""
    arr = np.asarray(z, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise ShapeError(f"{name} must have length >= 2, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InputDomainError(f"{name} contains non-finite entries")
    return arr


def check_probs(p, name: str = "probabilities", atol: float = 1e-12) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 2:
        raise ShapeError(f"{name} must be 1-D with length >= 2, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise InputDomainError(f"{name} must be finite and nonnegative")
    if abs(arr.sum() - 1.0) > atol:
        raise InputDomainError(f"{name} must sum to 1 (sum={arr.sum()!r})")
    return arr


def check_same_length(a: np.ndarray, b: np.ndarray, names=("a", "b")) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{names[0]} has shape {a.shape} but {names[1]} has shape {b.shape}")


def check_scalar(x, name: str, *, lo=None, hi=None, lo_open=False, hi_open=False,
                 integer=False, exc=InputDomainError):
    """Validate a real (or integer) scalar against an interval, return it converted."""
    if isinstance(x, bool) or not isinstance(x, numbers.Real):
        raise exc(f"{name} must be a real number, got {x!r}")
    if integer:
        if not float(x).is_integer():
            raise exc(f"{name} must be an integer, got {x!r}")
        x = int(x)
    else:
        x = float(x)
    if not np.isfinite(x):
        raise exc(f"{name} must be finite, got {x!r}")
    if lo is not None and (x < lo or (lo_open and x == lo)):
        raise exc(f"{name}={x!r} is below the allowed range")
    if hi is not None and (x > hi or (hi_open and x == hi)):
        raise exc(f"{name}={x!r} is above the allowed range")
    return x


def check_weights(weights, n: int, name: str = "weights") -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.shape[0] != n:
        raise ConfigError(f"{name} has {w.shape[0]} entries but {n} are required")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ConfigError(f"{name} must be finite and nonnegative")
    return w
