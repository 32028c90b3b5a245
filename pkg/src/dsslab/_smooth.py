"""C-infinity shape functions shared by cutoffs, basis bumps, and test functions."""

import numpy as np


def _psi(u):
    # exp(-1/u) on u > 0, exactly 0 elsewhere; safe against overflow warnings
    out = np.zeros_like(u, dtype=np.float64)
    pos = u > 0
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def smoothstep(u):
    """C^inf step: 0 for u <= 0, 1 for u >= 1, strictly increasing between."""
    u = np.asarray(u, dtype=np.float64)
    a = _psi(u)
    b = _psi(1.0 - u)
    with np.errstate(invalid="ignore"):
        s = np.where(a + b > 0, a / np.where(a + b > 0, a + b, 1.0), 0.0)
    s = np.where(u >= 1.0, 1.0, s)
    s = np.where(u <= 0.0, 0.0, s)
    return s


def plateau(r, r0, r1):
    """Radial C^inf step rising from 0 at r <= r0 to 1 at r >= r1."""
    return smoothstep((np.asarray(r, dtype=np.float64) - r0) / (r1 - r0))


def radial_bump(r, radius):
    """C^inf bump supported on r < radius, equal to 1 at r = 0."""
    r = np.asarray(r, dtype=np.float64)
    u = (r / radius) ** 2
    out = np.zeros_like(u)
    inside = u < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside]))
    return out


def cutoff_step(x_over_r0):
    """The fixed plateau shape: 0 on |x| < 1, 1 on |x| > 2 (argument is |x|/R0)."""
    return plateau(x_over_r0, 1.0, 2.0)
