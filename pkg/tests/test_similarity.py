"""Similarity transform round trips and scaling-defect detection."""

import numpy as np
import pytest

from dsslab.similarity import SimilarityMap, dss_defect, default_probes


def test_profile_physical_round_trip():
    sm = SimilarityMap(lam=2.0)
    rng = np.random.default_rng(11)
    x = rng.normal(size=(3, 40))
    t = 10.0 ** rng.uniform(-3, 2, size=40)
    y, s = sm.map_to_profile(x, t)
    x2, t2 = sm.map_to_physical(y, s)
    assert np.max(np.abs(x2 - x)) < 1e-13 * (1 + np.max(np.abs(x)))
    assert np.max(np.abs(t2 - t) / t) < 1e-13


def test_map_rejects_nonpositive_time():
    sm = SimilarityMap()
    with pytest.raises(ValueError):
        sm.map_to_profile(np.zeros(3), 0.0)


def test_period_and_phase():
    sm = SimilarityMap(lam=2.0)
    assert sm.period == pytest.approx(np.log(2.0), rel=1e-15)
    s = 0.3 + 5 * sm.period
    assert sm.phase(s) == pytest.approx(0.3, abs=1e-12)
    # the self-similar limit has zero period and zero phase everywhere
    ss = SimilarityMap(lam=1.0)
    assert ss.self_similar
    assert ss.phase(1.7) == 0.0


def test_value_scaling_kinds():
    sm = SimilarityMap()
    s = 0.9
    # velocity-type quantities carry one factor of the similarity scale,
    # pressure carries two
    assert sm.scale_field_value(1.0, s, "velocity") == pytest.approx(np.exp(-s))
    assert sm.scale_field_value(1.0, s, "deformation") == pytest.approx(np.exp(-s))
    assert sm.scale_field_value(1.0, s, "pressure") == pytest.approx(np.exp(-2 * s))
    with pytest.raises(ValueError):
        sm.scale_field_value(1.0, s, "vorticity")


def _exact_dss_solution(lam):
    """u(x,t) = V(x/sqrt(2t))/sqrt(2t) with V fixed: scaling-invariant for all lam."""

    def u(x, t):
        x = np.asarray(x, dtype=np.float64)
        root = np.sqrt(2.0 * t)
        y = x / root
        v = np.stack([-y[..., 1], y[..., 0], np.zeros_like(y[..., 0])], axis=-1)
        return v * np.exp(-np.sum(y**2, axis=-1))[..., None] / root

    return u


def test_dss_defect_vanishes_for_scaling_invariant_solution():
    u = _exact_dss_solution(2.0)
    assert dss_defect(u, 2.0) < 1e-14


def test_dss_defect_detects_broken_scaling():
    u = _exact_dss_solution(2.0)

    def bad(x, t):
        return u(x, t) * (1.0 + 0.1 * np.log(2 * t))

    assert dss_defect(bad, 2.0) > 1e-3


def test_default_probes_are_deterministic():
    a = default_probes(seed=7)
    b = default_probes(seed=7)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    times, points = a
    assert np.all(times > 0)
    radii = np.linalg.norm(points, axis=-1)
    assert radii.min() > 0.4 and radii.max() < 2.1
