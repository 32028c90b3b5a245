"""Similarity change of variables between physical and profile coordinates.

Profile variables: y = x / sqrt(2t), s = log(sqrt(2t)).  A field v(x, t) is
lambda-DSS exactly when its profile u(y, s) = sqrt(2t) v(x, t) is periodic in s
with period T = log(lambda); lambda = 1 denotes the self-similar (stationary
profile) limit.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SimilarityMap:
    """Scaling factor lambda and the induced profile period T = log(lambda)."""

    lam: float = 2.0

    def __post_init__(self):
        if self.lam < 1.0:
            raise ValueError(f"scaling factor must be >= 1, got {self.lam}")

    @property
    def period(self):
        return float(np.log(self.lam))

    @property
    def self_similar(self):
        return self.lam == 1.0

    def phase(self, s):
        """Reduce s into the fundamental period [0, T); identity in the SS limit."""
        if self.self_similar:
            return np.zeros_like(np.asarray(s, dtype=np.float64))
        return np.mod(s, self.period)

    def map_to_profile(self, x, t):
        return map_to_profile(x, t)

    def map_to_physical(self, y, s):
        return map_to_physical(y, s)

    def scale_field_value(self, value, s, kind="velocity"):
        return scale_field_value(value, s, kind=kind)


def map_to_profile(x, t):
    """Physical (x, t) -> profile (y, s).  t must be positive."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0):
        raise ValueError("profile variables need t > 0")
    root = np.sqrt(2.0 * t)
    y = np.asarray(x, dtype=np.float64) / root
    s = np.log(root)
    return y, s


def map_to_physical(y, s):
    """Profile (y, s) -> physical (x, t)."""
    s = np.asarray(s, dtype=np.float64)
    root = np.exp(s)
    x = np.asarray(y, dtype=np.float64) * root
    t = 0.5 * root**2
    return x, t


def scale_field_value(value, s, kind="velocity"):
    """Profile value at slice s -> physical value.

    velocity and deformation columns scale like 1/sqrt(2t) = e^{-s}; the
    pressure scales like 1/(2t) = e^{-2s}.
    """
    s = np.asarray(s, dtype=np.float64)
    if kind in ("velocity", "deformation"):
        return np.asarray(value) * np.exp(-s)
    if kind == "pressure":
        return np.asarray(value) * np.exp(-2.0 * s)
    raise ValueError(f"unknown field kind {kind!r}")


def profile_to_physical_value(u_value, s, kind="velocity"):
    """Alias for scale_field_value with the argument order spelled out."""
    return scale_field_value(u_value, s, kind=kind)


def default_probes(t0=0.125, lam=2.0, n_times=4, n_points=24, seed=7):
    """Deterministic probe set: one dyad of log-spaced times x an annulus cloud."""
    rng = np.random.default_rng(seed)
    times = t0 * (lam**2) ** np.linspace(0.0, 1.0, n_times, endpoint=False)
    pts = rng.normal(size=(n_points, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    radii = np.exp(rng.uniform(np.log(0.5), np.log(2.0), size=(n_points, 1)))
    return times, pts * radii


def dss_defect(field_fn, lam, probes=None, kind="velocity"):
    """Sup over probes of |lam^p f(lam x, lam^2 t) - f(x, t)|.

    field_fn(points, t) evaluates the physical field at an (n, 3) point array
    and scalar time; p = 1 for velocity/deformation, 2 for pressure.  Returns 0
    exactly when the field is lambda-DSS on the probe set.
    """
    if probes is None:
        probes = default_probes(lam=lam)
    times, points = probes
    power = 2.0 if kind == "pressure" else 1.0
    worst = 0.0
    for t in np.atleast_1d(times):
        a = np.asarray(field_fn(points, float(t)), dtype=np.float64)
        b = np.asarray(field_fn(points * lam, float(lam**2 * t)), dtype=np.float64)
        worst = max(worst, float(np.max(np.abs(lam**power * b - a))))
    return worst
