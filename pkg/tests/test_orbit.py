"""Integrator oracles (matrix exponential), Poincare fixed points, trap audits."""

import numpy as np
import pytest
from scipy.linalg import expm

from dsslab.background import build_cutoff, heat_background
from dsslab.fields import Grid, dss_swirl_sampler, homogeneous_sampler
from dsslab.galerkin import CoeffTables, assemble_tables, build_basis, default_mollifier
from dsslab.orbit import (
    EnergyBudget,
    energy_audit,
    integrate_period,
    poincare_fixed_point,
    poincare_map,
)


@pytest.fixture(scope="module")
def grid():
    return Grid(4.0, 32)


@pytest.fixture(scope="module")
def basis(grid):
    return build_basis(grid, 6)


@pytest.fixture(scope="module")
def mhd_family(grid):
    vel = heat_background(homogeneous_sampler("swirl", amplitude=0.05), grid,
                          lam=1.0, pad=7.0)
    mag = heat_background(homogeneous_sampler("swirl_tilted", amplitude=0.03),
                          grid, lam=1.0, pad=7.0)
    return build_cutoff([vel, mag], delta=0.25)


@pytest.fixture(scope="module")
def mhd_tables(basis, mhd_family):
    return assemble_tables(basis, mhd_family, system="mhd",
                           mollifier=default_mollifier(basis.grid))


@pytest.fixture(scope="module")
def budget(mhd_family):
    return EnergyBudget.from_family(mhd_family, "mhd", period=np.log(2.0))


def linearized(tables):
    """Same tables with the advection tensors removed."""
    return CoeffTables(
        tables.system, tables.period, tables.phases, tables.stiffness,
        tables.drift, np.zeros_like(tables.advect), tables.bg_grad_vel,
        tables.bg_adv_vel, tables.bg_grad_aux, tables.bg_adv_aux,
        tables.force_vel, tables.force_aux,
    )


def test_rhs_splits_into_operator_and_forcing(mhd_tables):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(mhd_tables.dim)
    lin = linearized(mhd_tables)
    expected = lin.linear_operator() @ x + lin.forcing_vector()
    assert np.max(np.abs(lin.rhs(x) - expected)) < 1e-12


def test_rhs_jacobian_matches_finite_differences(mhd_tables):
    rng = np.random.default_rng(1)
    x = rng.standard_normal(mhd_tables.dim)
    jac = mhd_tables.rhs_jacobian(x)
    step = 1e-6
    for c in range(0, mhd_tables.dim, 5):
        xp = x.copy()
        xp[c] += step
        xm = x.copy()
        xm[c] -= step
        col = (mhd_tables.rhs(xp) - mhd_tables.rhs(xm)) / (2 * step)
        assert np.max(np.abs(jac[:, c] - col)) < 1e-6


def test_integrator_matches_matrix_exponential(mhd_tables):
    """For the linear system x' = L x + f the period map has the closed form
    e^{LT} x0 + L^{-1} (e^{LT} - 1) f, an oracle independent of the stepper."""
    lin = linearized(mhd_tables)
    L = lin.linear_operator()
    f = lin.forcing_vector()
    T = np.log(2.0)
    rng = np.random.default_rng(2)
    x0 = 0.1 * rng.standard_normal(lin.dim)
    orbit = integrate_period(lin, x0, period=T, steps=256)
    eLT = expm(T * L)
    exact = eLT @ x0 + np.linalg.solve(L, (eLT - np.eye(lin.dim)) @ f)
    assert np.max(np.abs(orbit.final - exact)) < 1e-8


def test_error_estimate_tracks_true_error(mhd_tables):
    rng = np.random.default_rng(3)
    x0 = 0.3 * rng.standard_normal(mhd_tables.dim)
    T = np.log(2.0)
    coarse = integrate_period(mhd_tables, x0, period=T, steps=32)
    ref = integrate_period(mhd_tables, x0, period=T, steps=512,
                           estimate_error=False)
    true_err = np.linalg.norm(coarse.final - ref.final)
    assert true_err < 10.0 * coarse.error_estimate
    assert coarse.error_estimate < 10.0 * max(true_err, 1e-15)


def test_linear_fixed_point_matches_resolvent(mhd_tables, budget):
    """The Poincare fixed point of the linear system equals the solve
    (I - M) x = Phi(0) with M the monodromy matrix."""
    lin = linearized(mhd_tables)
    T = np.log(2.0)
    res = poincare_fixed_point(lin, budget, period=T, steps=128, tol=1e-11)
    assert res.converged
    M = expm(T * lin.linear_operator())
    response = poincare_map(lin, np.zeros(lin.dim), period=T, steps=128)
    exact = np.linalg.solve(np.eye(lin.dim) - M, response)
    assert np.max(np.abs(res.state - exact)) < 1e-8


@pytest.fixture(scope="module")
def fixed_point(mhd_tables, budget):
    return poincare_fixed_point(mhd_tables, budget, period=np.log(2.0),
                                steps=128, tol=1e-10)


def test_full_fixed_point_converges_inside_ball(fixed_point, budget):
    assert fixed_point.converged
    assert fixed_point.residual < 2e-10
    assert fixed_point.projections == 0
    assert fixed_point.state @ fixed_point.state <= budget.rho


def test_reintegration_returns_to_fixed_point(mhd_tables, fixed_point):
    again = poincare_map(mhd_tables, fixed_point.state, period=np.log(2.0),
                         steps=128)
    assert np.linalg.norm(again - fixed_point.state) < 2e-10


def test_energy_identity_along_orbit(fixed_point, mhd_tables, budget):
    audit = energy_audit(fixed_point.orbit, mhd_tables, budget)
    assert audit["identity_ok"], (audit["identity_residual"],
                                  audit["identity_allowance"])


def test_differential_inequality_and_dissipation(fixed_point, mhd_tables, budget):
    audit = energy_audit(fixed_point.orbit, mhd_tables, budget)
    assert audit["inequality_margin"] < 0.0
    assert audit["dissipation_ok"]


def test_random_starts_stay_under_envelope(mhd_tables, budget):
    """Gronwall trap: from any start in the absorbing ball the energy trace
    stays below its envelope, and no ball projections are ever needed."""
    rng = np.random.default_rng(7)
    T = np.log(2.0)
    for _ in range(20):
        x0 = rng.standard_normal(mhd_tables.dim)
        x0 *= np.sqrt(budget.rho * rng.uniform(0.0, 1.0)) / np.linalg.norm(x0)
        orbit = integrate_period(mhd_tables, x0, period=T, steps=128,
                                 estimate_error=False)
        audit = energy_audit(orbit, mhd_tables, budget)
        assert audit["envelope_excess"] <= 1e-8 * max(1.0, budget.rho)


def test_visco_trap(basis, grid):
    """Same trap property for the four-component system (slower rate 1/64)."""
    vel = heat_background(homogeneous_sampler("swirl", amplitude=0.05), grid,
                          lam=1.0, pad=7.0)
    cols = [heat_background(homogeneous_sampler(p, amplitude=0.02), grid,
                            lam=1.0, pad=7.0)
            for p in ("swirl_tilted", "two_swirls", "radial_unit")]
    family = build_cutoff([vel] + cols, delta=0.125)
    tables = assemble_tables(basis, family, system="visco",
                             mollifier=default_mollifier(grid))
    budget = EnergyBudget.from_family(family, "visco", period=np.log(2.0))
    rng = np.random.default_rng(11)
    for _ in range(5):
        x0 = rng.standard_normal(tables.dim)
        x0 *= np.sqrt(budget.rho * rng.uniform(0.0, 1.0)) / np.linalg.norm(x0)
        orbit = integrate_period(tables, x0, period=np.log(2.0), steps=128,
                                 estimate_error=False)
        audit = energy_audit(orbit, tables, budget)
        assert audit["envelope_excess"] <= 1e-8 * max(1.0, budget.rho)
        assert audit["inequality_margin"] < 0.0


@pytest.fixture(scope="module")
def dss_tables(grid, basis):
    vel = heat_background(dss_swirl_sampler(lam=2.0, amplitude=0.05), grid,
                          lam=2.0, n_slices=4, pad=7.0)
    mag = heat_background(
        dss_swirl_sampler(lam=2.0, amplitude=0.03, modulation=0.4, phase=1.3),
        grid, lam=2.0, n_slices=4, pad=7.0)
    family = build_cutoff([vel, mag], delta=0.25)
    return family, assemble_tables(basis, family, system="mhd",
                                   mollifier=default_mollifier(grid))


def test_dss_fixed_point_and_audits(dss_tables):
    family, tables = dss_tables
    budget = EnergyBudget.from_family(family, "mhd")
    res = poincare_fixed_point(tables, budget, steps=128, tol=1e-10)
    assert res.converged
    assert res.projections == 0
    audit = energy_audit(res.orbit, tables, budget)
    assert audit["identity_ok"]
    assert audit["inequality_margin"] < 0.0
    assert audit["dissipation_ok"]


def test_orbit_csv_roundtrip(tmp_path, fixed_point):
    path = tmp_path / "orbit.csv"
    fixed_point.orbit.to_csv(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (129, 3)
    assert np.allclose(data[:, 1], fixed_point.orbit.energy, atol=1e-12)
