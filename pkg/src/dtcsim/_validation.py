"""Small input validation helpers shared by the public operations."""
import numbers

import numpy as np

from .exceptions import InvalidInputError


def as_point(p, name="point"):
    """Return ``p`` as a finite float array of shape (3,)."""
    arr = np.asarray(p, dtype=float)
    if arr.shape != (3,):
        raise InvalidInputError(f"{name} must have 3 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} must be finite, got {arr}")
    return arr


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise InvalidInputError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise InvalidInputError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise InvalidInputError(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_count(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise InvalidInputError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise InvalidInputError(f"{name} must be >= {minimum}, got {value!r}")
    return int(value)


def check_same_shape(a, b, names=("estimate", "truth")):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise InvalidInputError(
            f"{names[0]} and {names[1]} must have equal shapes, got {a.shape} and {b.shape}"
        )
    return a, b
