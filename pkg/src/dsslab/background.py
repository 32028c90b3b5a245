"""Heat-flow background profiles and their far-field cutoff.

The background of a profile solve is the heat evolution of the data, written in
similarity variables: U0(y, s) = (2 pi)^{-3/2} int exp(-|y-z|^2/2) e^s v0(e^s z) dz.
For (-1)-homogeneous data this is s-independent; for lambda-DSS data it is
periodic with period log(lambda), and the evolution operator
L = d_s - lap - 1 - y.grad annihilates it identically.

The solve itself perturbs around W = xi * U0, where xi vanishes inside a ball
of dyadic radius R0 and equals one outside 2 R0, with R0 chosen as the smallest
dyadic making sup_s ||W(., s)||_{L^q} small.  On the grid, W is represented
with a smooth taper to zero near the box faces plus a spectral solenoidal
corrector, so its discrete divergence vanishes identically; the far field is
carried by a tail descriptor instead of grid samples.
"""

import numpy as np
import scipy.fft as sfft

from ._smooth import cutoff_step, plateau
from ._spectral import kit_for
from .fields import (
    Grid,
    HomogeneousTail,
    LogPeriodicTail,
    VectorField,
    lq_norm,
    trilinear,
)


# ---------------------------------------------------------------------------
# heat smoothing


def _gaussian_smooth_extended(sampler, grid, pad):
    """Unit-variance Gaussian smoothing of sampler, returned on the core grid.

    Samples on an extended grid of the same spacing (pad extra length units on
    each side, rounded to whole cells), multiplies by the exact Gaussian symbol
    exp(-|k|^2/2) in Fourier space, and restricts back.  Periodic wrap and
    domain-truncation errors are exp(-pad^2/2)-small for bounded-by-1/r data.
    """
    h = grid.h
    n_pad = int(np.ceil(pad / h))
    n_ext = grid.N + 2 * n_pad
    L_ext = grid.L + n_pad * h
    ax = -L_ext + (np.arange(n_ext) + 0.5) * h
    mesh = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"))
    g = np.asarray(sampler(mesh), dtype=np.float64)
    k1 = 2.0 * np.pi * sfft.fftfreq(n_ext, d=h)
    kr = np.abs(k1[: n_ext // 2 + 1])
    k2 = (
        k1.reshape(-1, 1, 1) ** 2
        + k1.reshape(1, -1, 1) ** 2
        + kr.reshape(1, 1, -1) ** 2
    )
    symbol = np.exp(-0.5 * k2)
    out = np.empty((3, grid.N, grid.N, grid.N))
    core = slice(n_pad, n_pad + grid.N)
    for a in range(3):
        smooth = sfft.irfftn(symbol * sfft.rfftn(g[a]), s=(n_ext,) * 3)
        out[a] = smooth[core, core, core]
    return out


class HeatFlowBackground:
    """Slices of the similarity-variable heat evolution of the data.

    slices[j] holds U0(., s_j) on the core grid; the far field (|y| beyond the
    grid) falls back on the asymptote e^s v0(e^s y), which the smoothing
    approaches with an exp(-|y|^2/2)-small error.
    """

    def __init__(self, grid, s_values, slices, data_sampler, lam):
        self.grid = grid
        self.s_values = np.asarray(s_values, dtype=np.float64)
        self.slices = slices  # (n_s, 3, N, N, N)
        self.data_sampler = data_sampler
        self.lam = float(lam)
        self.period = float(np.log(lam)) if lam > 1.0 else 0.0

    @property
    def n_slices(self):
        return len(self.s_values)

    def asymptote(self, points, s):
        """Far field of the smoothing: e^s [v0 + lap(v0)/2](e^s y).

        The Gaussian convolution of a slowly varying field equals the field
        plus half its Laplacian plus O(grad^4); for 1/r data the correction
        is O(1/r^3), leaving a relative model error O(1/r^4).  The Laplacian
        is taken by central differences of the data sampler.
        """
        es = np.exp(s)
        pts = es * np.asarray(points, dtype=np.float64)
        base = np.asarray(self.data_sampler(pts), dtype=np.float64)
        r = np.sqrt(np.sum(pts**2, axis=0))
        eps = 1e-3 * np.maximum(r, 1.0)
        lap = -6.0 * base
        for a in range(3):
            shift = np.zeros((3,) + (1,) * (pts.ndim - 1))
            shift[a] = 1.0
            lap = lap + np.asarray(self.data_sampler(pts + eps * shift))
            lap = lap + np.asarray(self.data_sampler(pts - eps * shift))
        lap = lap / eps**2
        return es * (base + 0.5 * es**2 * lap)

    def slice_sampler(self, j, blend_radius=None):
        """Pointwise evaluator for slice j: grid interpolation inside,
        asymptote outside (switched at blend_radius, default 0.93 L)."""
        rb = 0.93 * self.grid.L if blend_radius is None else blend_radius
        s = self.s_values[j]
        vals = self.slices[j]

        def sample(points):
            pts = np.asarray(points, dtype=np.float64)
            r = np.sqrt(np.sum(pts**2, axis=0))
            near = trilinear(self.grid, vals, pts)
            far = self.asymptote(pts, s)
            return np.where(r <= rb, near, far)

        return sample

    def evaluate(self, points, s):
        """U0 at arbitrary points and s (slice interpolation in phase)."""
        if self.n_slices == 1:
            return self.slice_sampler(0)(points)
        phase = np.mod(s, self.period)
        ds = self.period / self.n_slices
        j0 = int(np.floor(phase / ds)) % self.n_slices
        j1 = (j0 + 1) % self.n_slices
        t = phase / ds - np.floor(phase / ds)
        # interpolate between the two neighbouring slice evaluators
        a = self.slice_sampler(j0)(points)
        b = self.slice_sampler(j1)(points)
        return (1.0 - t) * a + t * b

    def ds_slices(self):
        """d_s U0 per slice by centered differences around the period."""
        if self.n_slices == 1:
            return np.zeros_like(self.slices)
        ds = self.period / self.n_slices
        fwd = np.roll(self.slices, -1, axis=0)
        bwd = np.roll(self.slices, 1, axis=0)
        return (fwd - bwd) / (2.0 * ds)


def heat_background(data_sampler, grid, lam=1.0, n_slices=None, pad=8.0):
    """Compute the heat-flow background of data v0 on similarity slices.

    data_sampler(points) evaluates v0 at a (3, ...) point array.  lam = 1
    yields the single self-similar slice; lam > 1 yields n_slices (default 16)
    equispaced slices of the log(lambda)-periodic evolution.
    """
    if lam < 1.0:
        raise ValueError("scaling factor must be >= 1")
    if lam == 1.0:
        s_values = np.array([0.0])
    else:
        n = 16 if n_slices is None else int(n_slices)
        s_values = np.log(lam) * np.arange(n) / n
    slices = np.empty((len(s_values), 3, grid.N, grid.N, grid.N))
    for j, s in enumerate(s_values):
        es = float(np.exp(s))
        scaled = lambda pts, es=es: es * np.asarray(data_sampler(es * pts))
        slices[j] = _gaussian_smooth_extended(scaled, grid, pad)
    return HeatFlowBackground(grid, s_values, slices, data_sampler, lam)


# ---------------------------------------------------------------------------
# cutoff background


_TAPER_START = 0.82  # face taper, as fractions of L
_TAPER_END = 0.97


def _face_taper(grid):
    r = grid.radius()
    return 1.0 - plateau(r, _TAPER_START * grid.L, _TAPER_END * grid.L)


class CutoffFamily:
    """xi * U0 backgrounds sharing one cutoff radius R0.

    fields[c][j] is the grid representation of component c at slice j: the
    tapered product xi * chi * U0 plus a spectral solenoidal corrector, so
    the discrete divergence vanishes to machine precision.  Tail descriptors
    carry the true (untapered) far field xi * U0 ~ U0.
    """

    def __init__(self, backgrounds, r0, delta, q, fields, slice_norms):
        self.backgrounds = backgrounds
        self.r0 = float(r0)
        self.delta = float(delta)
        self.q = float(q)
        self.fields = fields  # list (component) of list (slice) of VectorField
        self.slice_norms = np.asarray(slice_norms)  # (n_comp, n_s)
        self.grid = backgrounds[0].grid
        self.s_values = backgrounds[0].s_values

    @property
    def n_components(self):
        return len(self.fields)

    @property
    def n_slices(self):
        return len(self.s_values)

    def sup_norm(self):
        """sup over components and slices of ||W||_{L^q}."""
        return float(np.max(self.slice_norms))

    def values(self, c):
        """Stacked grid values of component c, shape (n_s, 3, N, N, N)."""
        return np.stack([f.values for f in self.fields[c]])


def _cutoff_slice_field(bg, j, r0, grid, taper, kit):
    """Grid representation of xi * U0 at slice j, made divergence-free."""
    r = grid.radius()
    xi = cutoff_step(r / r0)
    raw = xi * taper * bg.slices[j]
    w, _ = kit.solenoidal_correction(raw)
    return raw + w, xi


def _slice_tail(bg, j, r0, grid):
    """Far-field descriptor of xi * U0 at slice j (hybrid grid/asymptote)."""
    sampler = bg.slice_sampler(j)

    def far(points):
        pts = np.asarray(points, dtype=np.float64)
        rr = np.sqrt(np.sum(pts**2, axis=0))
        return cutoff_step(rr / r0) * sampler(pts)

    r_anchor = 0.8 * grid.L
    if bg.lam > 1.0:
        return LogPeriodicTail.from_sampler(far, r_anchor=r_anchor, lam=bg.lam,
                                            valid_from=r_anchor)
    return HomogeneousTail.from_sampler(far, r_anchor=r_anchor,
                                        valid_from=r_anchor)


def build_cutoff(backgrounds, delta, q=10.0 / 3.0, r0_max=1024.0):
    """Choose the smallest dyadic R0 >= 1 with sup_s ||xi U0||_{L^q} <= delta.

    backgrounds: list of HeatFlowBackground (one per flow component), sharing
    one grid and slice set; the cutoff radius is common to all of them, and
    every component must pass the smallness test.  Tail contributions beyond
    the grid enter through the slice descriptors, so the norm is whole-space.
    """
    if not backgrounds:
        raise ValueError("need at least one background component")
    grid = backgrounds[0].grid
    for bg in backgrounds[1:]:
        if bg.grid != grid or bg.n_slices != backgrounds[0].n_slices:
            raise ValueError("cutoff components must share grid and slices")
    kit = grid.kit()
    taper = _face_taper(grid)
    split = 0.8 * grid.L
    r0 = 1.0
    norms = [[np.inf]]
    while r0 <= r0_max:
        if 2.0 * r0 > split:
            raise RuntimeError(
                f"cutoff radius {r0:g} needs its transition annulus inside "
                f"|y| <= {split:g}, but the grid only resolves that far; "
                "enlarge the domain or reduce the data amplitude "
                f"(smallest norm reached: {max(max(n) for n in norms):.4g} "
                f"> {delta})"
            )
        fields = []
        norms = []
        ok = True
        for bg in backgrounds:
            comp_fields = []
            comp_norms = []
            for j in range(bg.n_slices):
                vals, _ = _cutoff_slice_field(bg, j, r0, grid, taper, kit)
                tail = _slice_tail(bg, j, r0, grid)
                f = VectorField(grid, vals, tail=tail,
                                name=f"cutoff:r0={r0}:s{j}")
                comp_fields.append(f)
                comp_norms.append(lq_norm(f, q))
            fields.append(comp_fields)
            norms.append(comp_norms)
            if max(comp_norms) > delta:
                ok = False
                break
        if ok:
            return CutoffFamily(backgrounds, r0, delta, q, fields, norms)
        r0 *= 2.0
    raise RuntimeError(
        f"no dyadic cutoff radius up to {r0_max} brings the background "
        f"L^{q:g} norm under {delta}; largest attempt left "
        f"{max(max(n) for n in norms):.4g}"
    )


def tail_function(family, radii, q=None):
    """sup over components and slices of the L^q mass beyond each radius.

    Diagnostic for the cutoff search: monotone decreasing in R, and the value
    at R0 bounds what the grid part of the norm can miss.
    """
    q = family.q if q is None else q
    out = []
    for R in np.atleast_1d(radii):
        worst = 0.0
        for comp in family.fields:
            for f in comp:
                worst = max(worst, f.tail.lq_tail(max(R, f.tail.valid_from), q)
                            ** (1.0 / q))
        out.append(worst)
    return np.asarray(out)


# ---------------------------------------------------------------------------
# forcing of the perturbed system


def _multiplier_profile(grid, r0):
    """The radial factor m(r) = xi(r/r0) * chi(r) and two derivatives.

    chi is the face taper; derivatives come from central differences on the
    smooth radial profile (the shape functions are C-infinity), evaluated at
    every grid radius at once.
    """
    r = grid.radius()

    def mfun(rr):
        return cutoff_step(rr / r0) * (
            1.0 - plateau(rr, _TAPER_START * grid.L, _TAPER_END * grid.L)
        )

    e = 1e-5 * grid.L
    m = mfun(r)
    mp = (mfun(r + e) - mfun(r - e)) / (2 * e)
    mpp = (mfun(r + e) - 2 * m + mfun(r - e)) / e**2
    return m, mp, mpp


def forcing_slices(family, c):
    """L W per slice for component c: the forcing of the perturbed system.

    Because the evolution operator annihilates the heat background, the true
    forcing is the commutator of L with the radial multiplier m = xi * chi:

        L(m U0) = -(lap m) U0 - 2 (grad m . grad) U0 - (y . grad m) U0 + L w,

    with all multiplier derivatives analytic (radial) and grad U0 taken
    spectrally from the tapered product chi U0 (clean where chi is locally
    one).  A radial mask removes the face-taper part of the commutator, which
    is an artifact of the grid representation; the genuine commutator lives in
    the cutoff annulus R0 <= |y| <= 2 R0.  The corrector term L w is kept
    unmasked: w is a smooth periodic field, so its forcing is real everywhere.
    """
    grid = family.grid
    kit = grid.kit()
    mesh = grid.mesh()
    r = grid.radius()
    r_safe = np.where(r > 0, r, 1.0)
    xhat = mesh / r_safe
    m, mp, mpp = _multiplier_profile(grid, family.r0)
    mask_hi = max(2.5 * family.r0, 0.55 * grid.L)
    mask = 1.0 - plateau(r, mask_hi, _TAPER_START * grid.L)
    taper = _face_taper(grid)
    bg = family.backgrounds[c]
    stack_w = family.values(c) - m * bg.slices  # solenoidal corrector slices
    n_s = bg.n_slices
    if n_s == 1:
        ds_w = np.zeros_like(stack_w)
    else:
        dstep = bg.period / n_s
        ds_w = (np.roll(stack_w, -1, axis=0) - np.roll(stack_w, 1, axis=0)) / (
            2 * dstep
        )
    lap_m = mpp + 2.0 * mp / r_safe
    out = np.empty_like(bg.slices)
    for j in range(n_s):
        U = bg.slices[j]
        tapered = taper * U
        radial_grad = np.empty_like(U)
        for b in range(3):
            gb = kit.grad(tapered[b])
            radial_grad[b] = np.sum(xhat * gb, axis=0)
        # the d_s part of L(m U0) cancels inside m * (L U0) = 0
        commutator = -(lap_m + r * mp) * U - 2.0 * mp * radial_grad
        w = stack_w[j]
        lap_w = kit.laplacian(w)
        drift_w = np.stack(
            [np.sum(mesh * kit.grad(w[b]), axis=0) for b in range(3)]
        )
        lw = ds_w[j] - lap_w - w - drift_w
        out[j] = mask * commutator + lw
    return out


def forcing_hminus1(family, c):
    """Per-slice H^{-1} norms of the masked forcing (periodic surrogate)."""
    kit = family.grid.kit()
    return np.array([kit.hminus1_norm(F) for F in forcing_slices(family, c)])


def smallness_constant(family, rate_denominator):
    """The forcing/background constant driving the absorbing-ball estimate.

    C2 = prefactor * ( sum_c ||L W_c||_{H^-1}^2 + (sum_c ||W_c||_{L^4}^2)^2 )
    with prefactor 8 for the two-component (coupled field) system and 32 for
    the four-component (deformation) system; rate_denominator distinguishes
    them (16 -> prefactor 8, 64 -> prefactor 32).
    """
    prefactor = 8.0 if rate_denominator == 16 else 32.0
    h_part = 0.0
    l4_part = 0.0
    for c in range(family.n_components):
        h_part += float(np.max(forcing_hminus1(family, c)) ** 2)
        l4_part += float(
            np.max([lq_norm(f, 4.0) for f in family.fields[c]]) ** 2
        )
    c2 = prefactor * (h_part + l4_part**2)
    return {
        "prefactor": prefactor,
        "forcing_hminus1_sq": h_part,
        "l4_sq_sum": l4_part,
        "c2": c2,
    }


def absorbing_radius(c2, period, rate_denominator):
    """rho = C2 * T / (1 - exp(-T / rate_denominator)), the trap radius."""
    T = float(period)
    if T <= 0:
        # stationary limit: the balance C2 = rho / rate_denominator
        return float(c2 * rate_denominator)
    return float(c2 * T / (1.0 - np.exp(-T / rate_denominator)))


def energy_envelope(e0, c2, rate_denominator, s_values):
    """E(s) <= E(0) e^{-s/rd} + rd * C2 (1 - e^{-s/rd}) pointwise in s."""
    s = np.asarray(s_values, dtype=np.float64)
    decay = np.exp(-s / rate_denominator)
    return e0 * decay + rate_denominator * c2 * (1.0 - decay)
