"""Shared finite-difference oracle for gradient tests."""

import numpy as np


def central_diff(f, x, h=1e-5):
    """Central finite differences of a scalar function over a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        grad[i] = (f(xp) - f(xm)) / (2.0 * h)
    return grad


def max_rel_err(a, b, floor=1e-3):
    """Worst relative discrepancy with a magnitude floor.

    The floor turns the check into an absolute one (floor * rel tolerance)
    for entries whose magnitude is below it, where finite-difference
    round-off would otherwise dominate a pure ratio.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = np.maximum.reduce([np.abs(a), np.abs(b), np.full_like(a, floor)])
    return float((np.abs(a - b) / denom).max())
