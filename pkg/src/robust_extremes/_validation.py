"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

import math

import numpy as np


def check_angles(X, min_size: int = 1) -> np.ndarray:
    """Return angles as a 1-d float array in [0, 1].

    Accepts a 1-d array, an ``(n, 1)`` column or an object with an
    ``angles`` attribute.
    """
    a = np.asarray(getattr(X, "angles", X), dtype=float)
    if a.ndim == 2 and a.shape[1] == 1:
        a = a[:, 0]
    if a.ndim != 1:
        raise ValueError(f"expected a 1-d array of angles, got shape {a.shape}")
    if a.size < min_size:
        raise ValueError(f"need at least {min_size} angles, got {a.size}")
    if not np.all(np.isfinite(a)) or np.any((a < 0) | (a > 1)):
        raise ValueError("angles must be finite and lie in [0, 1]")
    return a


def check_bivariate(X) -> np.ndarray:
    """Return an ``(n, 2)`` array of nonnegative finite coordinates."""
    z = np.asarray(getattr(X, "data", X), dtype=float)
    if z.ndim != 2 or z.shape[1] != 2:
        raise ValueError(f"expected shape (n, 2), got {z.shape}")
    if not np.all(np.isfinite(z)) or np.any(z < 0):
        raise ValueError("coordinates must be finite and nonnegative")
    return z


def check_delta(delta, allow_zero: bool = True) -> float:
    d = float(delta)
    if math.isnan(d) or d < 0 or (d == 0 and not allow_zero):
        raise ValueError(f"delta must be {'nonnegative' if allow_zero else 'positive'}, got {delta}")
    return d


def check_direction(direction) -> str:
    if direction not in ("upper", "lower"):
        raise ValueError("direction must be 'upper' or 'lower'")
    return direction


def check_z(z, open_interval: bool = False) -> np.ndarray:
    zz = np.atleast_1d(np.asarray(z, dtype=float))
    bad = (zz <= 0) | (zz >= 1) if open_interval else (zz < 0) | (zz > 1)
    if np.any(bad) or not np.all(np.isfinite(zz)):
        raise ValueError("z must lie in " + ("(0, 1)" if open_interval else "[0, 1]"))
    return zz


def parse_grid(text: str) -> np.ndarray:
    """``"a:b:n"`` gives n evenly spaced points from a to b."""
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ValueError(f"grid must look like a:b:n, got {text!r}")
    a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
    if n < 1:
        raise ValueError("grid needs at least one point")
    return np.linspace(a, b, n)
