"""Divergence-free Galerkin modes and the coefficient tables of the profile ODE.

The basis is a set of compactly supported, exactly (spectrally) solenoidal
velocity modes: curls of bump potentials placed on a small deterministic
lattice of centers, orthonormalized by modified Gram-Schmidt.  Projecting the
perturbed profile equations onto the span yields a finite ODE system

    d/ds vel_j  = linear(vel, aux) + advect(vel, vel) - sum_n advect(aux_n, aux_n) + force
    d/ds aux_mj = linear(vel, aux_m) + cross(vel, aux_m) + force_m

whose coefficient tables this module assembles by spectral quadrature.  The
advection tensor is antisymmetrized over (advected, test) so the cubic terms
cancel exactly in the energy balance, and the drift matrix is pinned to its
analytic antisymmetric-plus-diagonal form; those identities are what the
trap/energy certificates downstream rely on.

Two physical systems share the structure and differ only in the number of
auxiliary fields coupled to the velocity: "mhd" carries one (the magnetic
profile), "visco" carries three (deformation columns).
"""

import json

import numpy as np
from scipy import fft as sfft

from ._smooth import radial_bump
from ._spectral import upsample2
from .background import forcing_slices

MAX_MODES = 64

# fractions of the box half-width L: lattice spacing, bump radius, offsets.
# Supports stay within 0.55 L so every mode lives where the background
# forcing is represented faithfully (inside the face-taper guard band).
_LAYOUTS = {
    "primal": {"spread": 0.28, "radius": 0.27, "shift": (0.0, 0.0, 0.0)},
    "offset": {"spread": 0.24, "radius": 0.23, "shift": (0.05, 0.04, -0.045)},
}


def _center_pattern():
    """Unit offsets: origin, 6 faces, 8 corners, 12 edges (27 sites)."""
    sites = [(0.0, 0.0, 0.0)]
    for a in range(3):
        for sgn in (1.0, -1.0):
            site = [0.0, 0.0, 0.0]
            site[a] = sgn
            sites.append(tuple(site))
    for sx in (1.0, -1.0):
        for sy in (1.0, -1.0):
            for sz in (1.0, -1.0):
                sites.append((sx / np.sqrt(3), sy / np.sqrt(3), sz / np.sqrt(3)))
    for a in range(3):
        b = (a + 1) % 3
        for sa in (1.0, -1.0):
            for sb in (1.0, -1.0):
                site = [0.0, 0.0, 0.0]
                site[a] = sa / np.sqrt(2)
                site[b] = sb / np.sqrt(2)
                sites.append(tuple(site))
    return np.array(sites)


class GalerkinBasis:
    """Orthonormal, essentially compactly supported, spectrally solenoidal modes."""

    def __init__(self, grid, modes, layout, seeds, dropped, sigma):
        self.grid = grid
        self.modes = modes  # (k, 3, N, N, N)
        self.layout = layout
        self.seeds = seeds  # list of (center, direction) that seeded each mode
        self.dropped = int(dropped)
        self.sigma = float(sigma)  # potential smoothing width
        self._grads = None
        flat = self.flat()
        self.gram = grid.weight * (flat.reshape(self.k, -1) @ flat.reshape(self.k, -1).T)
        kit = grid.kit()
        self.max_divergence = max(
            float(np.max(np.abs(kit.divergence(m)))) for m in modes
        )

    @property
    def k(self):
        return self.modes.shape[0]

    def flat(self):
        return self.modes.reshape(self.k, 3, -1)

    def gram_error(self):
        """Frobenius distance of the Gram matrix from the identity."""
        return float(np.linalg.norm(self.gram - np.eye(self.k)))

    def gradients(self):
        """All mode partials, cached: (k, 3, 3, N, N, N), [i, a, b] = d_a h_i[b]."""
        if self._grads is None:
            kit = self.grid.kit()
            n = self.grid.N
            out = np.empty((self.k, 3, 3, n, n, n))
            for i in range(self.k):
                out[i] = kit.jacobian(self.modes[i])
            self._grads = out
        return self._grads

    def synthesize(self, coeffs):
        """Linear combination sum_i c_i h_i -> (3, N, N, N)."""
        return np.tensordot(np.asarray(coeffs, dtype=np.float64), self.modes, axes=(0, 0))

    def project(self, values):
        """L2 coefficients of a (3, N, N, N) field against the modes."""
        flat = self.flat().reshape(self.k, -1)
        return self.grid.weight * (flat @ np.asarray(values).reshape(-1))

    def nominal_extent(self):
        """Radius of the ball containing every seed bump's analytic support."""
        geo = _LAYOUTS[self.layout]
        shift = np.linalg.norm(geo["shift"])
        return (geo["spread"] + shift + geo["radius"]) * self.grid.L

    def support_extent(self):
        """Nominal extent plus the halo of the potential smoothing."""
        return self.nominal_extent() + 4.0 * self.sigma


def build_basis(grid, k, layout="primal"):
    """Curl-of-bump modes on a deterministic center lattice, MGS-orthonormalized.

    Raw candidates are curl(phi e_d) with phi a smooth radial bump; the curl is
    taken with the grid's derivative multipliers, so every mode (and any linear
    combination) has machine-zero spectral divergence by construction.  The
    sampled bump is pre-smoothed by a one-cell Gaussian, which suppresses its
    band-limit ringing far below the hard-walled tail while adding only a
    few-cell halo to the support.  Each candidate is orthonormalized against
    the accepted modes twice; candidates that lose more than a factor 1e8 of
    their mass are rank-deficient against the span and are dropped.
    """
    if k < 1 or k > MAX_MODES:
        raise ValueError(f"k must be in [1, {MAX_MODES}]")
    if layout not in _LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}; options: {sorted(_LAYOUTS)}")
    geo = _LAYOUTS[layout]
    centers = geo["spread"] * grid.L * _center_pattern()
    centers = centers + grid.L * np.asarray(geo["shift"])
    rb = geo["radius"] * grid.L
    kit = grid.kit()
    mesh = grid.mesh()
    w = grid.weight
    sigma = 1.25 * grid.h
    damp = np.exp(-0.5 * sigma**2 * kit.k2)
    accepted = []
    seeds = []
    dropped = 0
    for c_idx in range(len(centers)):
        for d in range(3):
            if len(accepted) >= k:
                break
            center = centers[c_idx]
            rr = np.sqrt(np.sum((mesh - center.reshape(3, 1, 1, 1)) ** 2, axis=0))
            pot = np.zeros((3,) + rr.shape)
            pot[d] = kit.inv(damp * kit.fwd(radial_bump(rr, rb)))
            v = kit.curl(pot)
            v /= np.sqrt(w * np.sum(v * v))
            ok = True
            for _ in range(2):  # MGS twice for machine orthogonality
                for u in accepted:
                    v -= (w * np.sum(u * v)) * u
                nrm = np.sqrt(w * np.sum(v * v))
                if nrm < 1e-8:
                    dropped += 1
                    ok = False
                    break
                v /= nrm
            if ok:
                accepted.append(v)
                seeds.append((center.copy(), d))
        if len(accepted) >= k:
            break
    if len(accepted) < k:
        raise RuntimeError(
            f"center lattice exhausted at {len(accepted)} modes (requested {k})"
        )
    return GalerkinBasis(grid, np.stack(accepted), layout, seeds, dropped, sigma)


class Mollifier:
    """Smooth compactly supported averaging kernel applied by circular convolution.

    The kernel is a radial bump sampled on the grid's offset lattice and
    normalized so its discrete integral is exactly one; convolution is then a
    Fourier multiplier with unit DC gain, which commutes with all derivative
    operators and in particular preserves solenoidality to machine precision.
    """

    def __init__(self, grid, width):
        if width <= grid.h:
            raise ValueError("mollifier width must exceed one grid cell")
        if width > 0.5 * grid.L:
            raise ValueError("mollifier width too large for the box")
        self.grid = grid
        self.width = float(width)
        n = grid.N
        offs = ((np.arange(n) + n // 2) % n - n // 2) * grid.h
        rr = np.sqrt(
            offs[:, None, None] ** 2 + offs[None, :, None] ** 2 + offs[None, None, :] ** 2
        )
        kernel = radial_bump(rr, self.width)
        kernel /= kernel.sum() * grid.weight
        self.kernel = kernel
        self._multiplier = sfft.rfftn(kernel).real * grid.weight

    def kernel_integral(self):
        return float(self.kernel.sum() * self.grid.weight)

    def apply(self, values):
        """Convolve (..., N, N, N) samples with the kernel."""
        n = self.grid.N
        vh = sfft.rfftn(np.asarray(values, dtype=np.float64), axes=(-3, -2, -1))
        return sfft.irfftn(vh * self._multiplier, s=(n, n, n), axes=(-3, -2, -1))


def default_mollifier(grid, factor=2.0):
    return Mollifier(grid, factor * grid.h)


def _quad(tensor, x, y):
    """Contraction sum_{i,l} T[i, l, j] x_i y_l -> (k,)."""
    return np.tensordot(x, tensor, axes=(0, 0)).T @ y


_N_AUX = {"mhd": 1, "visco": 3}
TABLES_FORMAT_VERSION = 1


class CoeffTables:
    """Per-slice coefficient tables of the projected profile system.

    Holds the shared geometric blocks (stiffness, drift, advection tensors)
    and the background-dependent blocks per phase slice; a single slice with
    period zero is the autonomous (self-similar / stationary) case.  States
    are flat vectors of length (1 + n_aux) * k, velocity coefficients first.
    """

    def __init__(self, system, period, phases, stiffness, drift, advect,
                 bg_grad_vel, bg_adv_vel, bg_grad_aux, bg_adv_aux,
                 force_vel, force_aux, meta=None):
        self.system = system
        self.n_aux = _N_AUX[system]
        self.period = float(period)
        self.phases = np.asarray(phases, dtype=np.float64)
        self.stiffness = stiffness
        self.drift = drift
        self.advect = advect
        self.advect_cross = advect - advect.transpose(1, 0, 2)
        self.bg_grad_vel = bg_grad_vel    # (n_s, k, k)
        self.bg_adv_vel = bg_adv_vel      # (n_s, k, k), antisymmetric
        self.bg_grad_aux = bg_grad_aux    # (n_s, n_aux, k, k)
        self.bg_adv_aux = bg_adv_aux      # (n_s, n_aux, k, k), antisymmetric
        self.force_vel = force_vel        # (n_s, k)
        self.force_aux = force_aux        # (n_s, n_aux, k)
        self.meta = dict(meta or {})
        self.k = stiffness.shape[0]
        if self.n_slices > 1 and self.period <= 0:
            raise ValueError("multi-slice tables need a positive period")
        self._compose()

    @property
    def n_slices(self):
        return len(self.phases)

    @property
    def dim(self):
        return (1 + self.n_aux) * self.k

    def _compose(self):
        """Stack the linear operators so the rhs is plain matvecs.

        The assembled matrices pair (input mode i, test mode j); the operator
        acting on coefficient vectors is the transpose.
        """
        k, ns, na = self.k, self.n_slices, self.n_aux
        eye = np.eye(k)
        base = -self.stiffness + eye + self.drift
        self._op_vel_vel = np.empty((ns, k, k))
        self._op_aux_aux = np.empty((ns, k, k))
        self._op_aux_to_vel = np.empty((ns, na, k, k))
        self._op_vel_to_aux = np.empty((ns, na, k, k))
        for j in range(ns):
            self._op_vel_vel[j] = (base - self.bg_grad_vel[j] - self.bg_adv_vel[j]).T
            self._op_aux_aux[j] = (base + self.bg_grad_vel[j] - self.bg_adv_vel[j]).T
            for n in range(na):
                self._op_aux_to_vel[j, n] = (
                    self.bg_grad_aux[j, n] + self.bg_adv_aux[j, n]
                ).T
                self._op_vel_to_aux[j, n] = (
                    -self.bg_grad_aux[j, n] + self.bg_adv_aux[j, n]
                ).T

    def split(self, x):
        """Flat state -> (vel (k,), aux (n_aux, k))."""
        parts = np.asarray(x, dtype=np.float64).reshape(1 + self.n_aux, self.k)
        return parts[0], parts[1:]

    def _blend(self, s):
        """Slice indices and weight for linear interpolation at phase s."""
        if self.n_slices == 1:
            return 0, 0, 0.0
        ds = self.period / self.n_slices
        u = (s % self.period) / ds
        j0 = int(u) % self.n_slices
        return j0, (j0 + 1) % self.n_slices, u - int(u)

    def _at(self, stacked, s):
        j0, j1, t = self._blend(s)
        if t == 0.0:
            return stacked[j0]
        return (1.0 - t) * stacked[j0] + t * stacked[j1]

    def rhs(self, x, s=0.0):
        """Time derivative of the flat coefficient state at phase s."""
        vel, aux = self.split(x)
        lvv = self._at(self._op_vel_vel, s)
        laa = self._at(self._op_aux_aux, s)
        lav = self._at(self._op_aux_to_vel, s)
        lva = self._at(self._op_vel_to_aux, s)
        fv = self._at(self.force_vel, s)
        fa = self._at(self.force_aux, s)
        dvel = lvv @ vel + _quad(self.advect, vel, vel) + fv
        out = np.empty(self.dim)
        daux = out[self.k:].reshape(self.n_aux, self.k)
        for n in range(self.n_aux):
            dvel += lav[n] @ aux[n] - _quad(self.advect, aux[n], aux[n])
            daux[n] = (
                lva[n] @ vel + laa @ aux[n]
                + _quad(self.advect_cross, vel, aux[n]) + fa[n]
            )
        out[: self.k] = dvel
        return out

    def linear_operator(self, s=0.0):
        """Full (dim, dim) matrix of the linear part at phase s."""
        k, na = self.k, self.n_aux
        out = np.zeros((self.dim, self.dim))
        out[:k, :k] = self._at(self._op_vel_vel, s)
        laa = self._at(self._op_aux_aux, s)
        lav = self._at(self._op_aux_to_vel, s)
        lva = self._at(self._op_vel_to_aux, s)
        for n in range(na):
            lo = (1 + n) * k
            out[:k, lo:lo + k] = lav[n]
            out[lo:lo + k, :k] = lva[n]
            out[lo:lo + k, lo:lo + k] = laa
        return out

    def forcing_vector(self, s=0.0):
        """Flat inhomogeneous part of the rhs at phase s."""
        out = np.empty(self.dim)
        out[: self.k] = self._at(self.force_vel, s)
        out[self.k:] = self._at(self.force_aux, s).reshape(-1)
        return out

    def rhs_jacobian(self, x, s=0.0):
        """Exact derivative of rhs with respect to the state."""
        vel, aux = self.split(x)
        k = self.k
        jac = self.linear_operator(s)
        adv, cross = self.advect, self.advect_cross
        jac[:k, :k] += (
            np.einsum("mlj,l->jm", adv, vel) + np.einsum("imj,i->jm", adv, vel)
        )
        for n in range(self.n_aux):
            lo = (1 + n) * k
            jac[:k, lo:lo + k] -= (
                np.einsum("mlj,l->jm", adv, aux[n])
                + np.einsum("imj,i->jm", adv, aux[n])
            )
            jac[lo:lo + k, :k] += np.einsum("mlj,l->jm", cross, aux[n])
            jac[lo:lo + k, lo:lo + k] += np.einsum("imj,i->jm", cross, vel)
        return jac

    def cubic_energy(self, x):
        """Contribution of the advection tensors to d|x|^2/ds (cancels exactly)."""
        vel, aux = self.split(x)
        total = vel @ _quad(self.advect, vel, vel)
        for n in range(self.n_aux):
            total -= vel @ _quad(self.advect, aux[n], aux[n])
            total += aux[n] @ _quad(self.advect_cross, vel, aux[n])
        return 2.0 * total

    def gradient_energy(self, x):
        """Stiffness quadratic form: sum of squared H^1 seminorms."""
        vel, aux = self.split(x)
        total = vel @ self.stiffness @ vel
        for n in range(self.n_aux):
            total += aux[n] @ self.stiffness @ aux[n]
        return float(total)

    def energy_decomposition(self, x, s=0.0):
        """Named pieces of d|x|^2/ds; their sum equals 2 x . rhs(x, s).

        total = -energy - 2 dissipation - 2 exchange + 2 forcing + cubic
        """
        vel, aux = self.split(x)
        j0, j1, t = self._blend(s)

        def at(stacked):
            return stacked[j0] if t == 0.0 else (1 - t) * stacked[j0] + t * stacked[j1]

        mg = at(self.bg_grad_vel)
        ag = at(self.bg_grad_aux)
        fv = at(self.force_vel)
        fa = at(self.force_aux)
        energy = float(x @ x)
        dissipation = self.gradient_energy(x)
        exchange = float(vel @ mg @ vel)
        forcing = float(vel @ fv)
        for n in range(self.n_aux):
            exchange -= float(aux[n] @ ag[n] @ vel - vel @ ag[n] @ aux[n])
            exchange -= float(aux[n] @ mg @ aux[n])
            forcing += float(aux[n] @ fa[n])
        cubic = self.cubic_energy(x)
        total = -energy - 2.0 * dissipation - 2.0 * exchange + 2.0 * forcing + cubic
        return {
            "energy": energy,
            "dissipation": dissipation,
            "exchange": exchange,
            "forcing": forcing,
            "cubic": cubic,
            "total": total,
        }

    def save(self, path):
        meta = dict(self.meta)
        meta.update(
            system=self.system,
            period=self.period,
            version=TABLES_FORMAT_VERSION,
        )
        np.savez_compressed(
            path,
            meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
            phases=self.phases,
            stiffness=self.stiffness,
            drift=self.drift,
            advect=self.advect,
            bg_grad_vel=self.bg_grad_vel,
            bg_adv_vel=self.bg_adv_vel,
            bg_grad_aux=self.bg_grad_aux,
            bg_adv_aux=self.bg_adv_aux,
            force_vel=self.force_vel,
            force_aux=self.force_aux,
        )

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            if meta.get("version") != TABLES_FORMAT_VERSION:
                raise ValueError(f"unsupported tables file version: {meta.get('version')}")
            return cls(
                meta.pop("system"),
                meta.pop("period"),
                data["phases"],
                data["stiffness"],
                data["drift"],
                data["advect"],
                data["bg_grad_vel"],
                data["bg_adv_vel"],
                data["bg_grad_aux"],
                data["bg_adv_aux"],
                data["force_vel"],
                data["force_aux"],
                meta=meta,
            )


def _advect_tensor(basis, advecting, dealias):
    """Raw advection tensor raw[i, l, j] = -(b_i . grad h_l, h_j).

    With dealias=True the cubic products are integrated on the doubled grid,
    where they are trigonometric polynomials below the Nyquist band and the
    quadrature is exact; otherwise the native grid is used (cheaper, same
    antisymmetrized table up to an aliasing-level quadrature difference).
    """
    k = basis.k
    grads = basis.gradients()
    raw = np.empty((k, k, k))
    if dealias:
        w2 = basis.grid.weight / 8.0
        hu = np.stack([upsample2(m) for m in basis.modes])
        hu2 = hu.reshape(k, -1)
        if advecting is basis.modes:
            bu = hu
        else:
            bu = np.stack([upsample2(b) for b in advecting])
        for l in range(k):
            gu = upsample2(grads[l])
            v = np.einsum("iax,abx->ibx", bu.reshape(k, 3, -1),
                          gu.reshape(3, 3, -1))
            raw[:, l, :] = -w2 * (v.reshape(k, -1) @ hu2.T)
    else:
        w = basis.grid.weight
        h2 = basis.flat().reshape(k, -1)
        gflat = grads.reshape(k, 3, 3, -1)
        bflat = np.asarray(advecting).reshape(k, 3, -1)
        for i in range(k):
            v = np.einsum("ax,labx->lbx", bflat[i], gflat)
            raw[i] = -w * (v.reshape(k, -1) @ h2.T)
    return raw


def assemble_tables(basis, family=None, system="mhd", mollifier=None, dealias=False):
    """Project the perturbed profile equations onto the basis.

    family supplies the background component fields (velocity first, then the
    auxiliary components) and their forcing slices; None means zero
    backgrounds, which is the homogeneous system used by oracle tests.  The
    advecting velocity is mollified when a mollifier is given; the background
    and the linear terms never are.
    """
    if system not in _N_AUX:
        raise ValueError(f"unknown system {system!r}")
    n_aux = _N_AUX[system]
    grid = basis.grid
    kit = grid.kit()
    w = grid.weight
    k = basis.k
    h2 = basis.flat().reshape(k, -1)
    grads = basis.gradients()
    gflat = grads.reshape(k, 3, 3, -1)

    # shared geometric blocks
    g2 = grads.reshape(k, -1)
    stiffness = w * (g2 @ g2.T)
    stiffness = 0.5 * (stiffness + stiffness.T)
    mesh = grid.mesh().reshape(3, -1)
    yd = np.einsum("ax,iabx->ibx", mesh, gflat)
    drift_raw = w * (yd.reshape(k, -1) @ h2.T)
    # (y . grad h_i, h_j) + (y . grad h_j, h_i) = -3 (h_i, h_j) exactly, so the
    # symmetric part is pinned to its analytic value and only the
    # antisymmetric part is taken from quadrature
    drift = 0.5 * (drift_raw - drift_raw.T) - 1.5 * np.eye(k)

    advecting = mollifier.apply(basis.modes) if mollifier is not None else basis.modes
    raw = _advect_tensor(basis, advecting, dealias)
    advect = 0.5 * (raw - raw.transpose(0, 2, 1))

    if family is None:
        phases = np.zeros(1)
        period = 0.0
        shape = (1, n_aux, k)
        tables = CoeffTables(
            system, period, phases, stiffness, drift, advect,
            np.zeros((1, k, k)), np.zeros((1, k, k)),
            np.zeros((1,) + shape[1:] + (k,)), np.zeros((1,) + shape[1:] + (k,)),
            np.zeros((1, k)), np.zeros(shape),
            meta={"layout": basis.layout, "grid_L": grid.L, "grid_N": grid.N},
        )
        return tables

    if family.n_components != 1 + n_aux:
        raise ValueError(
            f"{system} needs {1 + n_aux} background components, "
            f"family has {family.n_components}"
        )
    if family.grid.N != grid.N or abs(family.grid.L - grid.L) > 1e-12 * grid.L:
        raise ValueError("family grid does not match basis grid")
    n_s = family.n_slices
    period = family.backgrounds[0].period
    phases = np.asarray(family.s_values, dtype=np.float64)

    comps = [family.values(c).reshape(n_s, 3, -1) for c in range(1 + n_aux)]
    forcings = [forcing_slices(family, c).reshape(n_s, 3, -1)
                for c in range(1 + n_aux)]

    def pair_grad(bg_vals):
        """(h_i . grad X, h_j) from the spectral jacobian of X."""
        jac = kit.jacobian(bg_vals.reshape(3, grid.N, grid.N, grid.N))
        t1 = np.einsum("iax,abx->ibx", basis.flat(), jac.reshape(3, 3, -1))
        return w * (t1.reshape(k, -1) @ h2.T)

    def pair_adv(bg_vals):
        """Antisymmetrized (X . grad h_i, h_j)."""
        t2 = np.einsum("ax,iabx->ibx", bg_vals, gflat)
        m = w * (t2.reshape(k, -1) @ h2.T)
        return 0.5 * (m - m.T)

    def adv_quad(xv, yv):
        """Vector of (X . grad h_j, Y) over test modes j."""
        t = np.einsum("ax,jabx->jbx", xv, gflat)
        return w * (t.reshape(k, -1) @ yv.reshape(-1))

    bg_grad_vel = np.empty((n_s, k, k))
    bg_adv_vel = np.empty((n_s, k, k))
    bg_grad_aux = np.empty((n_s, n_aux, k, k))
    bg_adv_aux = np.empty((n_s, n_aux, k, k))
    force_vel = np.empty((n_s, k))
    force_aux = np.empty((n_s, n_aux, k))
    for j in range(n_s):
        wv = comps[0][j]
        bg_grad_vel[j] = pair_grad(wv)
        bg_adv_vel[j] = pair_adv(wv)
        # forcing enters through its pairing with the test modes; the
        # quadratic background terms are integrated by parts onto the modes
        # so the background itself is never differentiated here
        fv = -w * (h2 @ forcings[0][j].reshape(-1)) + adv_quad(wv, wv)
        for n in range(n_aux):
            av = comps[1 + n][j]
            bg_grad_aux[j, n] = pair_grad(av)
            bg_adv_aux[j, n] = pair_adv(av)
            fv -= adv_quad(av, av)
            force_aux[j, n] = (
                -w * (h2 @ forcings[1 + n][j].reshape(-1))
                + adv_quad(wv, av) - adv_quad(av, wv)
            )
        force_vel[j] = fv

    return CoeffTables(
        system, period, phases, stiffness, drift, advect,
        bg_grad_vel, bg_adv_vel, bg_grad_aux, bg_adv_aux,
        force_vel, force_aux,
        meta={
            "layout": basis.layout,
            "grid_L": grid.L,
            "grid_N": grid.N,
            "mollifier_width": None if mollifier is None else mollifier.width,
            "r0": family.r0,
            "delta": family.delta,
        },
    )
