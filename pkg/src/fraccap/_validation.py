"""Input validation helpers shared by the estimators and functional API."""

from __future__ import annotations

import numbers

import numpy as np


class NotConvergedWarning(UserWarning):
    """A quadrature or iterative routine stopped before reaching its tolerance."""


class NoBracketError(ValueError):
    """Root scan found no sign change to bracket."""


class IdentityViolation(AssertionError):
    """An exact regrouping identity failed beyond rounding."""


def check_scalar(x, name, *, lo=None, hi=None, lo_inclusive=False, hi_inclusive=False,
                 integer=False):
    if integer:
        if isinstance(x, bool) or not isinstance(x, numbers.Integral):
            raise ValueError(f"{name} must be an integer, got {x!r}")
        x = int(x)
    else:
        if isinstance(x, bool) or not isinstance(x, numbers.Real):
            raise ValueError(f"{name} must be a real number, got {x!r}")
        x = float(x)
        if not np.isfinite(x):
            raise ValueError(f"{name} must be finite, got {x!r}")
    if lo is not None:
        if (x < lo) if lo_inclusive else (x <= lo):
            op = ">=" if lo_inclusive else ">"
            raise ValueError(f"{name} must be {op} {lo}, got {x}")
    if hi is not None:
        if (x > hi) if hi_inclusive else (x >= hi):
            op = "<=" if hi_inclusive else "<"
            raise ValueError(f"{name} must be {op} {hi}, got {x}")
    return x


def check_order(s):
    return check_scalar(s, "s", lo=0.0, hi=1.0)


def check_sigma(sigma):
    return check_scalar(sigma, "sigma", lo=-1.0, hi=1.0)


def check_window(window, n=None):
    """Return a ``(n, 2)`` float array of ``[lo, hi]`` rows."""
    w = np.asarray(window, dtype=float)
    if w.ndim != 2 or w.shape[1] != 2:
        raise ValueError(f"window must be a sequence of (lo, hi) pairs, got shape {w.shape}")
    if n is not None and w.shape[0] != n:
        raise ValueError(f"window has dimension {w.shape[0]}, expected {n}")
    if not np.all(np.isfinite(w)) or np.any(w[:, 1] <= w[:, 0]):
        raise ValueError(f"degenerate window {w.tolist()}")
    return w


def check_resolution(resolution, n):
    res = np.broadcast_to(np.asarray(resolution), (n,))
    out = []
    for r in res:
        r = check_scalar(r.item() if hasattr(r, "item") else r, "resolution", integer=True)
        if r < 2:
            raise ValueError(f"resolution must be >= 2, got {r}")
        out.append(r)
    return tuple(out)


def check_points(points, n):
    p = np.asarray(points, dtype=float)
    if p.shape[-1] != n:
        raise ValueError(f"points must have trailing dimension {n}, got {p.shape}")
    return p
