"""Stationary solve, sphere certificate, and the independent weak-form recheck."""

import numpy as np
import pytest

from dsslab.background import build_cutoff, heat_background
from dsslab.fields import Grid, homogeneous_sampler
from dsslab.galerkin import assemble_tables, build_basis, default_mollifier
from dsslab.orbit import EnergyBudget, integrate_period
from dsslab.stationary import (
    AlgebraicSystem,
    solve_stationary,
    sphere_certificate,
    weak_form_residual,
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
def mhd_system(basis, mhd_family):
    tables = assemble_tables(basis, mhd_family, system="mhd")
    budget = EnergyBudget.from_family(mhd_family, "mhd", period=0.0)
    return AlgebraicSystem(tables, budget.c2)


@pytest.fixture(scope="module")
def mhd_solution(mhd_system):
    return solve_stationary(mhd_system)


def test_newton_converges_to_machine_zero(mhd_system, mhd_solution):
    x, info = mhd_solution
    assert info["converged"]
    assert info["residual_norm"] < 1e-12
    assert info["iterations"] < 20
    assert np.linalg.norm(x) <= mhd_system.sphere_radius()


def test_solution_obeys_a_priori_energy_bound(mhd_system, mhd_solution):
    """At a zero of P the energy identity forces |x|^2 + 17 grad <= 32 C2."""
    x, _ = mhd_solution
    grad = mhd_system.tables.gradient_energy(x)
    assert x @ x + 17.0 * grad <= 32.0 * mhd_system.c2 + 1e-12


def test_sphere_certificate_is_inward(mhd_system):
    cert = sphere_certificate(mhd_system, samples=100, seed=3)
    assert cert["inward_everywhere"]
    assert cert["worst_margin"] < 0.0
    assert cert["radius"] == 8.0 * np.sqrt(mhd_system.c2)


def test_weak_form_recheck(basis, mhd_family, mhd_system, mhd_solution):
    """The converged state must satisfy the stationary equations as seen by an
    independent field-space quadrature (direct transport products, no
    antisymmetrization, no parts integration), up to aliasing level."""
    x, _ = mhd_solution
    report = weak_form_residual(basis, mhd_family, x, system="mhd")
    assert report["max_residual"] < 1e-5 * report["term_scale"]


def test_stationary_state_is_a_constant_orbit(mhd_system, mhd_solution):
    """Feeding the stationary tables to the period integrator must reproduce
    the fixed point as a constant trajectory for any chosen period."""
    x, _ = mhd_solution
    orbit = integrate_period(mhd_system.tables, x, period=np.log(2.0), steps=64)
    assert orbit.residual < 1e-12
    drift = np.max(np.linalg.norm(orbit.states - x, axis=1))
    assert drift < 1e-12


def test_mollified_or_phase_dependent_tables_are_rejected(basis, mhd_family):
    mollified = assemble_tables(basis, mhd_family, system="mhd",
                                mollifier=default_mollifier(basis.grid))
    with pytest.raises(ValueError):
        AlgebraicSystem(mollified, 0.1)


def test_visco_certificate_with_tighter_smallness(grid, basis):
    """The four-component system uses the smaller cutoff threshold and its
    own constants; the certificate must still point inward."""
    vel = heat_background(homogeneous_sampler("swirl", amplitude=0.05), grid,
                          lam=1.0, pad=7.0)
    cols = [heat_background(homogeneous_sampler(p, amplitude=0.02), grid,
                            lam=1.0, pad=7.0)
            for p in ("swirl_tilted", "two_swirls", "radial_unit")]
    family = build_cutoff([vel] + cols, delta=0.125)
    tables = assemble_tables(basis, family, system="visco")
    budget = EnergyBudget.from_family(family, "visco", period=0.0)
    system = AlgebraicSystem(tables, budget.c2)
    x, info = solve_stationary(system)
    assert info["converged"]
    assert np.linalg.norm(x) <= system.sphere_radius()
    cert = sphere_certificate(system, samples=60, seed=5)
    assert cert["inward_everywhere"]
    assert cert["worst_margin"] < 0.0
    report = weak_form_residual(basis, family, x, system="visco")
    assert report["max_residual"] < 1e-5 * report["term_scale"]
