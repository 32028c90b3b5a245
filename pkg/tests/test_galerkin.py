"""Basis certificates, table identities, and field-space quadrature oracles."""

import numpy as np
import pytest

from dsslab._spectral import upsample2
from dsslab.background import build_cutoff, heat_background
from dsslab.fields import Grid, dss_swirl_sampler, homogeneous_sampler
from dsslab.galerkin import (
    CoeffTables,
    Mollifier,
    assemble_tables,
    build_basis,
    default_mollifier,
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


def rand_state(tables, rng, scale=1.0):
    return scale * rng.standard_normal(tables.dim)


# ---------------------------------------------------------------------------
# basis certificates


def test_modes_are_orthonormal(basis):
    assert basis.gram_error() < 1e-10


def test_modes_are_divergence_free(basis):
    """The curl is taken with the grid's own derivative multipliers, so the
    spectral divergence must vanish at machine precision."""
    assert basis.max_divergence < 1e-10


def leak_outside_support(b):
    r = b.grid.radius()
    outside = r > b.support_extent() + 2 * b.grid.h
    worst = 0.0
    for m in b.modes:
        mags = np.sqrt(np.sum(m**2, axis=0))
        worst = max(worst, float(np.max(mags[outside]) / np.max(mags)))
    return worst


def test_modes_vanish_outside_support(basis):
    """The smoothed potentials confine each mode to its seed ball plus a
    few-cell halo; spillover beyond that (including the box faces, where
    periodic wrap-around would contaminate quadratures) is negligible."""
    assert leak_outside_support(basis) < 1e-4
    r = basis.grid.radius()
    faces = r > 0.85 * basis.grid.L
    for m in basis.modes:
        mags = np.sqrt(np.sum(m**2, axis=0))
        assert np.max(mags[faces]) < 1e-4 * np.max(mags)


def test_nominal_extent_inside_guard_band(basis, grid):
    """Seed supports stay where the background forcing is represented
    faithfully (inside the face-taper guard band)."""
    assert basis.nominal_extent() <= 0.55 * grid.L + 1e-12


def test_layouts_give_distinct_bases(grid):
    a = build_basis(grid, 4, layout="primal")
    b = build_basis(grid, 4, layout="offset")
    assert a.dropped == 0 and b.dropped == 0
    assert np.max(np.abs(a.modes[0] - b.modes[0])) > 1e-3


def test_requesting_too_many_modes_raises(grid):
    with pytest.raises(ValueError):
        build_basis(grid, 65)


# ---------------------------------------------------------------------------
# mollifier


def test_mollifier_has_unit_mass(grid):
    mol = default_mollifier(grid)
    assert abs(mol.kernel_integral() - 1.0) < 1e-13


def test_mollifier_preserves_constants_and_solenoidality(grid, basis):
    mol = default_mollifier(grid)
    const = np.full((grid.N,) * 3, 0.7)
    assert np.max(np.abs(mol.apply(const) - 0.7)) < 1e-13
    kit = grid.kit()
    smoothed = mol.apply(basis.modes[0])
    assert np.max(np.abs(kit.divergence(smoothed))) < 1e-10


def test_mollifier_is_an_approximate_identity(grid, basis):
    m = basis.modes[1]
    scale = np.max(np.abs(m))
    err2 = np.max(np.abs(Mollifier(grid, 2 * grid.h).apply(m) - m)) / scale
    err4 = np.max(np.abs(Mollifier(grid, 4 * grid.h).apply(m) - m)) / scale
    assert err2 < err4 < 0.6


def test_mollifier_width_validation(grid):
    with pytest.raises(ValueError):
        Mollifier(grid, 0.5 * grid.h)
    with pytest.raises(ValueError):
        Mollifier(grid, grid.L)


# ---------------------------------------------------------------------------
# table identities (zero background)


def test_drift_diagonal_identity(basis):
    """With zero background the velocity operator diagonal is
    -|grad h_i|^2 - 1/2: the box drift integral (y . grad h_i, h_i) is
    exactly -3/2 |h_i|^2 after integration by parts."""
    tables = assemble_tables(basis, system="mhd")
    kit = basis.grid.kit()
    for i in range(basis.k):
        grad_sq = kit.h1_seminorm(basis.modes[i]) ** 2
        diag = tables._op_vel_vel[0, i, i]
        assert abs(diag - (-grad_sq - 0.5)) < 1e-7


def test_advect_tensor_is_skew_in_advected_and_test(mhd_tables):
    swap = mhd_tables.advect + mhd_tables.advect.transpose(0, 2, 1)
    assert np.all(swap == 0.0)


def test_zero_background_means_zero_forcing(basis):
    tables = assemble_tables(basis, system="visco")
    assert not tables.force_vel.any()
    assert not tables.force_aux.any()
    assert not tables.bg_grad_vel.any()
    assert np.all(tables.rhs(np.zeros(tables.dim)) == 0.0)


def test_cubic_terms_cancel_in_energy(mhd_tables, basis):
    rng = np.random.default_rng(11)
    for tables in (mhd_tables, assemble_tables(basis, system="visco")):
        for _ in range(40):
            x = rand_state(tables, rng, scale=3.0)
            nrm = np.linalg.norm(x)
            assert abs(tables.cubic_energy(x)) < 1e-11 * nrm**3


def test_energy_decomposition_matches_rhs(mhd_tables):
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = rand_state(mhd_tables, rng)
        dec = mhd_tables.energy_decomposition(x)
        direct = 2.0 * float(x @ mhd_tables.rhs(x))
        scale = max(1.0, abs(dec["total"]), np.linalg.norm(x) ** 3)
        assert abs(dec["total"] - direct) < 1e-11 * scale
        assert dec["dissipation"] >= 0.0


# ---------------------------------------------------------------------------
# field-space quadrature oracle


def test_quadratic_part_matches_direct_field_quadrature():
    """The advection table contracted with random coefficients must equal the
    pairing -((eta*U) . grad U, h_j) computed directly from synthesized
    fields.  On the doubled grid the integrand is a trig polynomial below the
    Nyquist band, so both sides are exact quadratures of the same integral."""
    grid = Grid(4.0, 24)
    basis = build_basis(grid, 5)
    mol = default_mollifier(grid)
    rng = np.random.default_rng(3)
    kit = grid.kit()
    w2 = grid.weight / 8.0
    hu = np.stack([upsample2(m) for m in basis.modes])
    for tables, smooth in (
        (assemble_tables(basis, system="mhd", dealias=True), None),
        (assemble_tables(basis, system="mhd", mollifier=mol, dealias=True), mol),
    ):
        mu = rng.standard_normal(basis.k)
        from_tables = np.tensordot(mu, tables.advect, axes=(0, 0)).T @ mu
        u = basis.synthesize(mu)
        adv = u if smooth is None else smooth.apply(u)
        adv_u = upsample2(adv)
        jac_u = upsample2(kit.jacobian(u))
        conv = np.einsum("ax,abx->bx", adv_u.reshape(3, -1),
                         jac_u.reshape(3, 3, -1))
        direct = -w2 * np.einsum("bx,jbx->j", conv, hu.reshape(basis.k, 3, -1))
        scale = max(1.0, float(np.max(np.abs(direct))))
        assert np.max(np.abs(from_tables - direct)) < 1e-8 * scale


def test_aliased_tables_stay_close_to_dealiased(basis):
    """Native-grid assembly differs from the exact (doubled-grid) quadrature
    only by an aliasing error far below the table scale."""
    lo = assemble_tables(basis, system="mhd").advect
    hi = assemble_tables(basis, system="mhd", dealias=True).advect
    assert np.max(np.abs(lo - hi)) < 1e-3 * np.max(np.abs(hi))


# ---------------------------------------------------------------------------
# coupled-system structure


def test_velocity_only_background_keeps_aux_trivial(grid, basis):
    """With a zero auxiliary background and zero auxiliary coefficients the
    auxiliary block of the rhs vanishes identically."""
    vel = heat_background(homogeneous_sampler("swirl", amplitude=0.05), grid,
                          lam=1.0, pad=7.0)
    zero = heat_background(lambda pts: np.zeros_like(np.asarray(pts)), grid,
                           lam=1.0, pad=7.0)
    family = build_cutoff([vel, zero], delta=0.25)
    tables = assemble_tables(basis, family, system="mhd")
    rng = np.random.default_rng(2)
    x = np.zeros(tables.dim)
    x[: tables.k] = rng.standard_normal(tables.k)
    assert np.max(np.abs(tables.rhs(x)[tables.k:])) == 0.0


def test_visco_with_single_column_reduces_to_mhd(grid, basis, mhd_family,
                                                 mhd_tables):
    """Dropping two deformation columns to zero and loading the third with
    the magnetic background must reproduce the MHD tables exactly."""
    vel = mhd_family.backgrounds[0]
    mag = mhd_family.backgrounds[1]
    zero = heat_background(lambda pts: np.zeros_like(np.asarray(pts)), grid,
                           lam=1.0, pad=7.0)
    family4 = build_cutoff([vel, mag, zero, zero], delta=0.25)
    assert family4.r0 == mhd_family.r0
    tables4 = assemble_tables(basis, family4, system="visco",
                              mollifier=default_mollifier(grid))
    rng = np.random.default_rng(8)
    k = basis.k
    x2 = rng.standard_normal(2 * k)
    x4 = np.concatenate([x2, np.zeros(2 * k)])
    r2 = mhd_tables.rhs(x2)
    r4 = tables4.rhs(x4)
    assert np.max(np.abs(r4[: 2 * k] - r2)) < 1e-12
    assert np.max(np.abs(r4[2 * k:])) == 0.0


# ---------------------------------------------------------------------------
# phase slices and serialization


@pytest.fixture(scope="module")
def dss_tables(grid, basis):
    vel = heat_background(dss_swirl_sampler(lam=2.0, amplitude=0.05), grid,
                          lam=2.0, n_slices=4, pad=7.0)
    mag = heat_background(
        dss_swirl_sampler(lam=2.0, amplitude=0.03, modulation=0.4, phase=1.3),
        grid, lam=2.0, n_slices=4, pad=7.0)
    family = build_cutoff([vel, mag], delta=0.25)
    return assemble_tables(basis, family, system="mhd",
                           mollifier=default_mollifier(grid))


def test_slice_interpolation_hits_nodes_and_midpoints(dss_tables):
    t = dss_tables
    ds = t.period / t.n_slices
    assert np.all(t._at(t.force_vel, t.phases[2]) == t.force_vel[2])
    mid = t._at(t.force_vel, t.phases[1] + 0.5 * ds)
    assert np.allclose(mid, 0.5 * (t.force_vel[1] + t.force_vel[2]),
                       rtol=0, atol=1e-15)
    wrap = t._at(t.force_vel, t.phases[-1] + 0.5 * ds)
    assert np.allclose(wrap, 0.5 * (t.force_vel[-1] + t.force_vel[0]),
                       rtol=0, atol=1e-15)
    full = t._at(t.force_vel, t.period)
    assert np.all(full == t.force_vel[0])


def test_rhs_is_periodic_in_phase(dss_tables):
    rng = np.random.default_rng(4)
    x = rand_state(dss_tables, rng)
    a = dss_tables.rhs(x, 0.37)
    b = dss_tables.rhs(x, 0.37 + dss_tables.period)
    assert np.max(np.abs(a - b)) < 1e-13


def test_tables_roundtrip_through_file(tmp_path, dss_tables):
    path = tmp_path / "tables.npz"
    dss_tables.save(path)
    back = CoeffTables.load(path)
    assert back.system == dss_tables.system
    assert back.period == dss_tables.period
    assert np.all(back.advect == dss_tables.advect)
    assert np.all(back.force_aux == dss_tables.force_aux)
    rng = np.random.default_rng(9)
    x = rand_state(dss_tables, rng)
    assert np.all(back.rhs(x, 0.2) == dss_tables.rhs(x, 0.2))
