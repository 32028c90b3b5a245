"""End-to-end pipeline and command line front end.

Subcommands:

    solve   run the full construction for one configuration, write the
            report and the cached artifacts into the output directory
    verify  re-evaluate the acceptance thresholds recorded in a report
    sweep   repeat solve over parameter grids and tabulate the outcomes
    export  regenerate plot-ready CSV tables from a finished run directory

The report is deterministic: given the same configuration and seeds two
runs produce byte-identical report.json files (no timestamps, sorted keys,
and the output directory itself is not part of the hashed configuration).
"""

import argparse
import csv
import hashlib
import itertools
import json
import os
import sys
from dataclasses import asdict, dataclass, fields as dataclass_fields, replace

import numpy as np

from .background import build_cutoff, heat_background
from .fields import Grid, dss_swirl_sampler, homogeneous_sampler
from .galerkin import Mollifier, assemble_tables, build_basis
from .orbit import (EnergyBudget, energy_audit, integrate_period,
                    poincare_fixed_point, poincare_map)
from .physical import (default_test_functions, distance_to_heat_flow,
                       initial_data_convergence,
                       local_energy_inequality_residual, local_energy_report,
                       reconstruct)
from .pressure import (interpolation_audit, poisson_residual,
                       pressure_bound_audit, quadratic_bracket)
from .stationary import (AlgebraicSystem, solve_stationary,
                         sphere_certificate, weak_form_residual)

CACHE_VERSION = 1

_SYSTEM_ALIASES = {"mhd": "mhd", "visco": "visco", "vnsed": "visco"}
_AUX_COUNT = {"mhd": 1, "visco": 3}
_AUX_PRESETS = ("swirl_tilted", "two_swirls", "curl_poly")
_AUX_PHASES = (1.3, 2.6, 0.7)
# reference period used to pose the return-map checks for a stationary
# profile (any fixed positive value works; the dyadic one keeps the
# stationary and lam = 2 reports directly comparable)
_SS_REFERENCE_PERIOD = float(np.log(2.0))


class ConfigError(ValueError):
    """Invalid run configuration (exit code 2)."""


class PipelineError(RuntimeError):
    """A pipeline stage failed (exit code 3)."""

    def __init__(self, stage, message):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
        self.message = message


@dataclass
class RunConfig:
    """Everything a run depends on, with None meaning 'derive a default'."""

    system: str = "mhd"          # mhd | visco (vnsed accepted as an alias)
    mode: str = "dss"            # dss | ss
    lam: float = None            # scaling factor; > 1 for dss, 1 for ss
    box: float = 4.0             # half-width of the profile box
    n: int = 48                  # grid points per axis
    k: int = 12                  # Galerkin modes per component
    layout: str = "primal"
    preset: str = "swirl"        # data preset (ss mode; dss uses the
                                 # log-periodic swirl family)
    amplitude: float = 0.05
    aux_amplitude: float = 0.03
    modulation: float = 0.4      # radial modulation depth of the dss data
    n_slices: int = 16           # background slices per period (dss)
    pad: float = 7.0             # Gaussian quadrature padding for backgrounds
    epsilon: float = None        # mollifier width (dss); default 2h
    delta: float = None          # cutoff smallness; default 0.25 mhd, 0.125 visco
    steps: int = 256             # RK4 steps per period
    newton_tol: float = 1e-12
    fixed_point_tol: float = None
    max_iters: int = 200
    pressure_pad: int = 2
    certificate_samples: int = 200
    lei_bumps: int = 5
    lei_quad: int = 17           # s-quadrature nodes for the inequality audit
    seed: int = 0
    outdir: str = "runs/out"
    # acceptance thresholds (all strictly positive)
    tol_gram: float = 1e-10
    tol_div: float = 1e-8
    tol_cubic: float = 1e-10
    tol_stationary: float = 1e-8
    tol_residual: float = 1e-6       # times max(1, rho)
    tol_reintegration: float = 2e-6  # times max(1, rho)
    tol_certificate: float = 1e-6    # times (1 + c2)
    tol_weak: float = 1e-5           # times the quadrature term scale
    tol_poisson: float = 1e-8        # times the bracket norm
    tol_scaling: float = 1e-2
    tol_lei: float = 1e-6            # times the inequality term scale


def canonical(config):
    """Validate a RunConfig and fill in derived defaults.

    Raises ConfigError on any violated invariant; returns a new RunConfig
    whose fields are all concrete (epsilon stays None for ss mode, where the
    stationary algebra is unmollified by construction).
    """
    cfg = replace(config)
    system = _SYSTEM_ALIASES.get(str(cfg.system).lower())
    if system is None:
        raise ConfigError(f"unknown system {cfg.system!r} (mhd, visco, vnsed)")
    cfg.system = system
    mode = str(cfg.mode).lower()
    if mode not in ("dss", "ss"):
        raise ConfigError(f"unknown mode {cfg.mode!r} (dss or ss)")
    cfg.mode = mode

    if cfg.lam is None:
        cfg.lam = 2.0 if mode == "dss" else 1.0
    cfg.lam = float(cfg.lam)
    if mode == "dss" and not cfg.lam > 1.0:
        raise ConfigError("dss mode needs a scaling factor lam > 1")
    if mode == "ss" and cfg.lam != 1.0:
        raise ConfigError("ss mode fixes lam = 1; drop the lam override")

    if cfg.delta is None:
        cfg.delta = 0.25 if system == "mhd" else 0.125
    cfg.delta = float(cfg.delta)
    if not 0.0 < cfg.delta < 1.0:
        raise ConfigError(f"delta must lie in (0, 1), got {cfg.delta}")

    cfg.box = float(cfg.box)
    cfg.n = int(cfg.n)
    cfg.k = int(cfg.k)
    if cfg.box <= 0.0:
        raise ConfigError("box half-width must be positive")
    if cfg.n < 8 or cfg.n % 2:
        raise ConfigError("grid size n must be even and at least 8")
    if cfg.k < 1:
        raise ConfigError("need at least one mode per component")
    if cfg.layout not in ("primal", "offset"):
        raise ConfigError(f"unknown mode layout {cfg.layout!r}")

    h = 2.0 * cfg.box / cfg.n
    if mode == "ss":
        if cfg.epsilon is not None:
            raise ConfigError("epsilon only applies to dss mode; the "
                              "stationary algebra is unmollified")
        cfg.n_slices = 1
    else:
        cfg.epsilon = 2.0 * h if cfg.epsilon is None else float(cfg.epsilon)
        if cfg.epsilon <= h:
            raise ConfigError(f"mollifier width {cfg.epsilon} must exceed the "
                              f"grid spacing {h:.4g}")
        cfg.n_slices = int(cfg.n_slices)
        if cfg.n_slices < 2:
            raise ConfigError("dss mode needs at least two background slices")

    cfg.steps = int(cfg.steps)
    if cfg.steps < 8 or cfg.steps % 2:
        raise ConfigError("steps must be even and at least 8")
    if cfg.pad <= 0:
        raise ConfigError("background quadrature pad must be positive")
    if int(cfg.pressure_pad) < 2:
        raise ConfigError("pressure pad factor must be at least 2")
    if cfg.amplitude < 0 or cfg.aux_amplitude < 0:
        raise ConfigError("amplitudes must be nonnegative")
    if cfg.certificate_samples < 1 or cfg.lei_bumps < 1 or cfg.lei_quad < 1:
        raise ConfigError("sample counts must be positive")
    if cfg.fixed_point_tol is not None and cfg.fixed_point_tol <= 0:
        raise ConfigError("fixed_point_tol must be positive")
    for f in dataclass_fields(cfg):
        if f.name.startswith("tol_") and getattr(cfg, f.name) <= 0:
            raise ConfigError(f"{f.name} must be strictly positive")
    cfg.seed = int(cfg.seed)
    return cfg


def config_dict(config):
    """Canonical configuration as a plain dict, without the output path."""
    d = asdict(canonical(config))
    d.pop("outdir")
    return d


def config_hash(config):
    payload = json.dumps(config_dict(config), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _compare(value, comparator, threshold):
    if comparator == "le":
        return bool(value <= threshold)
    if comparator == "ge":
        return bool(value >= threshold)
    if comparator == "true":
        return bool(value)
    raise ValueError(f"unknown comparator {comparator!r}")


def _criterion(report, stage, name, value, comparator, threshold,
               advisory=False):
    """Append one provenance row to the report's criteria table."""
    ok = _compare(value, comparator, threshold)
    report["criteria"].append({
        "name": name,
        "stage": stage,
        "value": _jsonable(value),
        "comparator": comparator,
        "threshold": _jsonable(threshold),
        "advisory": bool(advisory),
        "status": "pass" if ok else "fail",
    })
    return ok


def _data_samplers(cfg):
    """One divergence-free sampler per flow component."""
    n_aux = _AUX_COUNT[cfg.system]
    if cfg.mode == "dss":
        vel = dss_swirl_sampler(cfg.lam, cfg.amplitude,
                                modulation=cfg.modulation, phase=0.0)
        auxs = [dss_swirl_sampler(cfg.lam, cfg.aux_amplitude,
                                  modulation=cfg.modulation,
                                  phase=_AUX_PHASES[j])
                for j in range(n_aux)]
        names = ["dss_swirl"] + [f"dss_swirl:{_AUX_PHASES[j]}"
                                 for j in range(n_aux)]
    else:
        vel = homogeneous_sampler(cfg.preset, cfg.amplitude, seed=cfg.seed)
        auxs = [homogeneous_sampler(_AUX_PRESETS[j], cfg.aux_amplitude,
                                    seed=cfg.seed + 1 + j)
                for j in range(n_aux)]
        names = [cfg.preset] + list(_AUX_PRESETS[:n_aux])
    return [vel] + auxs, names


def run_pipeline(config, log=None):
    """Run every stage for one configuration and write the run directory.

    Returns the report dict (already written to <outdir>/report.json).
    Raises ConfigError for bad configurations and PipelineError when a
    stage cannot complete (non-convergence, impossible cutoff, ...).
    """
    say = (lambda msg: None) if log is None else log
    cfg = canonical(config)
    chash = config_hash(cfg)
    outdir = cfg.outdir
    cache_dir = os.path.join(outdir, "cache")
    os.makedirs(cache_dir, exist_ok=True)

    report = {
        "cache_version": CACHE_VERSION,
        "config": config_dict(cfg),
        "config_hash": chash,
        "stages": {},
        "criteria": [],
    }
    stages = report["stages"]
    n_aux = _AUX_COUNT[cfg.system]
    dss = cfg.mode == "dss"

    # -- data and heat-flow backgrounds --------------------------------
    say(f"[background] {cfg.system} {cfg.mode} lam={cfg.lam} "
        f"n={cfg.n} k={cfg.k}")
    try:
        samplers, sampler_names = _data_samplers(cfg)
        grid = Grid(cfg.box, cfg.n)
        backgrounds = [heat_background(f, grid, lam=cfg.lam,
                                       n_slices=cfg.n_slices, pad=cfg.pad)
                       for f in samplers]
    except (ConfigError, PipelineError):
        raise
    except Exception as exc:
        raise PipelineError("background", str(exc)) from exc
    stages["background"] = {
        "components": 1 + n_aux,
        "data": sampler_names,
        "n_slices": backgrounds[0].n_slices,
        "period": backgrounds[0].period,
    }

    # -- cutoff family and energy budget --------------------------------
    try:
        family = build_cutoff(backgrounds, delta=cfg.delta)
        period = backgrounds[0].period if dss else _SS_REFERENCE_PERIOD
        budget = EnergyBudget.from_family(family, cfg.system, period=period)
    except (ConfigError, PipelineError):
        raise
    except Exception as exc:
        raise PipelineError("family", str(exc)) from exc
    stages["family"] = {
        "r0": family.r0,
        "delta": family.delta,
        "q": family.q,
        "sup_norm": family.sup_norm(),
        "slice_norms": family.slice_norms,
    }
    stages["budget"] = {
        "c2": budget.c2,
        "rate_denominator": budget.rate_denominator,
        "period": budget.period,
        "rho": budget.rho,
    }
    _criterion(report, "family", "background_smallness", family.sup_norm(),
               "le", family.delta)
    say(f"[family] r0={family.r0:g} sup_norm={family.sup_norm():.4g} "
        f"c2={budget.c2:.4g} rho={budget.rho:.4g}")

    # -- basis and coefficient tables -----------------------------------
    try:
        basis = build_basis(grid, cfg.k, layout=cfg.layout)
        mollifier = Mollifier(grid, cfg.epsilon) if dss else None
        tables = assemble_tables(basis, family, system=cfg.system,
                                 mollifier=mollifier)
    except (ConfigError, PipelineError):
        raise
    except Exception as exc:
        raise PipelineError("tables", str(exc)) from exc
    tables.save(os.path.join(cache_dir, f"tables_{chash}.npz"))
    div_max = basis.max_divergence
    rng = np.random.default_rng(cfg.seed)
    cubic_ratio = 0.0
    for _ in range(20):
        x = rng.standard_normal(tables.dim)
        cubic_ratio = max(cubic_ratio, abs(tables.cubic_energy(x))
                          / np.linalg.norm(x) ** 3)
    stages["tables"] = {
        "modes": basis.k,
        "dim": tables.dim,
        "mollifier_width": cfg.epsilon,
        "gram_error": basis.gram_error(),
        "divergence_max": div_max,
        "cubic_identity": cubic_ratio,
    }
    _criterion(report, "tables", "gram_error", basis.gram_error(), "le",
               cfg.tol_gram)
    _criterion(report, "tables", "divergence_max", div_max, "le", cfg.tol_div)
    _criterion(report, "tables", "cubic_identity", cubic_ratio, "le",
               cfg.tol_cubic)
    say(f"[tables] dim={tables.dim} gram={basis.gram_error():.2e} "
        f"div={div_max:.2e}")

    # -- solve -----------------------------------------------------------
    rho_scale = max(1.0, budget.rho)
    if dss:
        try:
            result = poincare_fixed_point(tables, budget, steps=cfg.steps,
                                          tol=cfg.fixed_point_tol,
                                          max_iters=cfg.max_iters)
        except Exception as exc:
            raise PipelineError("solve", str(exc)) from exc
        if not result.converged:
            raise PipelineError(
                "solve", f"return-map iteration stalled at residual "
                f"{result.residual:.3e} after {result.iterations} steps")
        state = result.state
        orbit = result.orbit
        solve_info = {
            "method": result.method,
            "iterations": result.iterations,
            "residual": result.residual,
            "projections": result.projections,
            "state_norm": float(np.linalg.norm(state)),
        }
        _criterion(report, "solve", "projections_used",
                   result.projections == 0, "true", True)
        fixed_point_residual = result.residual
    else:
        try:
            algebra = AlgebraicSystem(tables, budget.c2)
            state, newton = solve_stationary(algebra, tol=cfg.newton_tol)
        except Exception as exc:
            raise PipelineError("solve", str(exc)) from exc
        if not newton["converged"]:
            raise PipelineError(
                "solve", f"Newton stalled at residual "
                f"{newton['residual_norm']:.3e}")
        certificate = sphere_certificate(algebra,
                                         samples=cfg.certificate_samples,
                                         seed=cfg.seed)
        weak = weak_form_residual(basis, family, state, system=cfg.system)
        orbit = integrate_period(tables, state, period=_SS_REFERENCE_PERIOD,
                                 steps=cfg.steps)
        solve_info = {
            "method": "newton",
            "iterations": newton["iterations"],
            "residual": newton["residual_norm"],
            "state_norm": float(np.linalg.norm(state)),
            "certificate": certificate,
            "weak_form": {k: weak[k] for k in
                          ("max_residual", "term_scale")},
        }
        _criterion(report, "solve", "stationary_residual",
                   newton["residual_norm"], "le", cfg.tol_stationary)
        _criterion(report, "solve", "certificate_margin",
                   certificate["worst_margin"], "le",
                   cfg.tol_certificate * (1.0 + budget.c2))
        _criterion(report, "solve", "certificate_inward",
                   certificate["inward_everywhere"], "true", True)
        _criterion(report, "solve", "weak_form_residual",
                   weak["max_residual"], "le",
                   cfg.tol_weak * weak["term_scale"])
        fixed_point_residual = orbit.residual
    try:
        refined = poincare_map(tables, state,
                               period=None if dss else _SS_REFERENCE_PERIOD,
                               steps=2 * cfg.steps)
    except Exception as exc:
        raise PipelineError("solve", str(exc)) from exc
    reintegration = float(np.linalg.norm(refined - state))
    audit = energy_audit(orbit, tables, budget)
    solve_info["reintegration"] = reintegration
    solve_info["energy_audit"] = audit
    stages["solve"] = solve_info
    _criterion(report, "solve", "fixed_point_residual", fixed_point_residual,
               "le", cfg.tol_residual * rho_scale)
    _criterion(report, "solve", "reintegration_drift", reintegration, "le",
               cfg.tol_reintegration * rho_scale)
    _criterion(report, "solve", "energy_identity",
               audit["identity_residual"], "le", audit["identity_allowance"])
    _criterion(report, "solve", "energy_envelope",
               audit["envelope_excess"], "le", 1e-9 * rho_scale)
    _criterion(report, "solve", "dissipation_budget",
               audit["dissipation_ok"], "true", True)
    orbit.to_csv(os.path.join(outdir, "orbit.csv"))
    np.savez_compressed(os.path.join(cache_dir, f"orbit_{chash}.npz"),
                        s_values=orbit.s_values, states=orbit.states,
                        energy=orbit.energy, grad_energy=orbit.grad_energy,
                        period=orbit.period)
    say(f"[solve] residual={fixed_point_residual:.3e} "
        f"reintegration={reintegration:.3e}")

    # -- candidate and pressure audits -----------------------------------
    try:
        candidate = reconstruct(orbit if dss else state, basis, family,
                                system=cfg.system, mollifier=mollifier,
                                pressure_pad=cfg.pressure_pad)
        phases = [float(s) for s in family.s_values]
        pressures = [candidate.profile_pressure(ph) for ph in phases]
        pert_stacks = []
        for c in range(1 + n_aux):
            stack = np.stack([
                basis.synthesize(
                    candidate.coefficients(ph).reshape(1 + n_aux, basis.k)[c])
                for ph in phases])
            pert_stacks.append(stack)
        audit_period = backgrounds[0].period if dss else 0.0
        bound = pressure_bound_audit(pressures, pert_stacks, family,
                                     audit_period)
        interp = interpolation_audit(pert_stacks[0], audit_period, grid)
        bracket = quadratic_bracket(
            grid, pert_stacks[0][0],
            auxs=[pert_stacks[1 + j][0] for j in range(n_aux)],
            bg_vel=family.fields[0][0].values,
            bg_auxs=[family.fields[1 + j][0].values for j in range(n_aux)],
            mollifier=mollifier)
        poisson = poisson_residual(bracket, pad_factor=cfg.pressure_pad)
    except (ConfigError, PipelineError):
        raise
    except Exception as exc:
        raise PipelineError("pressure", str(exc)) from exc
    poisson_ratio = poisson["residual"] / max(poisson["bracket_norm"], 1e-300)
    stages["pressure"] = {
        "bound": bound,
        "interpolation": interp,
        "poisson_residual": poisson["residual"],
        "poisson_bracket_norm": poisson["bracket_norm"],
        "poisson_ratio": poisson_ratio,
    }
    np.savez_compressed(os.path.join(cache_dir, f"pressure_{chash}.npz"),
                        phases=np.asarray(phases),
                        values=np.stack([p.values for p in pressures]))
    _criterion(report, "pressure", "poisson_recheck", poisson_ratio, "le",
               cfg.tol_poisson)
    _criterion(report, "pressure", "background_spacetime_norm",
               bound["w_ok"], "true", True)
    _criterion(report, "pressure", "interpolation_chain",
               interp["chain_ok"], "true", True)
    _criterion(report, "pressure", "pressure_ratio_recorded",
               bound["ratio"] >= 0.0, "true", True, advisory=True)
    say(f"[pressure] poisson={poisson_ratio:.2e} "
        f"l53/l103^2={bound['ratio']:.3g}")

    # -- physical-side audits ---------------------------------------------
    try:
        dist = distance_to_heat_flow(candidate)
        energy_rep = local_energy_report(candidate)
        initial = initial_data_convergence(candidate)
        bumps = default_test_functions(candidate, n=cfg.lei_bumps,
                                       seed=cfg.seed)
        lei_rows = []
        for bump in bumps:
            out = local_energy_inequality_residual(
                candidate, bump, form="profile", n_s_quad=cfg.lei_quad,
                details=True)
            lei_rows.append(out)
    except (ConfigError, PipelineError):
        raise
    except Exception as exc:
        raise PipelineError("physical", str(exc)) from exc
    ratios = np.asarray(dist["scaling_ratios"], dtype=np.float64)
    scaling_spread = float(np.max(np.abs(ratios - 1.0))) if ratios.size else 0.0
    per_dyad = np.asarray(dist["per_dyad_envelope"], dtype=np.float64)
    envelope_spread = float(np.ptp(per_dyad) / max(np.mean(per_dyad), 1e-300))
    lei_min = min(row["residual"] for row in lei_rows)
    lei_scale = max(row["term_scale"] for row in lei_rows)
    stages["physical"] = {
        "distance": {k: dist[k] for k in
                     ("t", "g", "envelope", "c0", "per_dyad_envelope",
                      "scaling_ratios", "tail_share_max", "lam")},
        "local_energy": energy_rep,
        "initial_data": initial,
        "inequality": {
            "bumps": len(lei_rows),
            "residuals": [row["residual"] for row in lei_rows],
            "term_scales": [row["term_scale"] for row in lei_rows],
            "min_residual": lei_min,
        },
    }
    _criterion(report, "physical", "distance_scaling", scaling_spread, "le",
               cfg.tol_scaling)
    _criterion(report, "physical", "distance_envelope", envelope_spread, "le",
               cfg.tol_scaling)
    _criterion(report, "physical", "local_energy_split",
               all(entry["split_ok"] for entry in energy_rep["radii"]),
               "true", True)
    _criterion(report, "physical", "spacetime_decay",
               energy_rep["decay_strictly_decreasing"], "true", True)
    _criterion(report, "physical", "initial_data_rate",
               initial["part1_below_bound"] and initial["part1_bound_decreasing"],
               "true", True)
    _criterion(report, "physical", "initial_data_heat",
               initial["part2_decreasing"], "true", True)
    # The sign of the local energy inequality for the Galerkin candidate is
    # a statement about the limit, not about any finite truncation, so the
    # measured margin is recorded but does not gate the run.
    _criterion(report, "physical", "local_energy_inequality", lei_min, "ge",
               -cfg.tol_lei * max(lei_scale, 1.0), advisory=True)
    _write_distance_csv(os.path.join(outdir, "distance.csv"), dist)
    say(f"[physical] c0={dist['c0']:.4g} scaling={scaling_spread:.2e} "
        f"lei_min={lei_min:.3e}")

    # -- summary and the report file --------------------------------------
    enforced = [c for c in report["criteria"] if not c["advisory"]]
    failures = [c["name"] for c in enforced if c["status"] == "fail"]
    advisory_failures = [c["name"] for c in report["criteria"]
                         if c["advisory"] and c["status"] == "fail"]
    report["summary"] = {
        "enforced": len(enforced),
        "passed": len(enforced) - len(failures),
        "failures": failures,
        "advisory_failures": advisory_failures,
    }
    report["status"] = "pass" if not failures else "fail"
    write_report(report, os.path.join(outdir, "report.json"))
    return report


def _write_distance_csv(path, dist):
    t = np.asarray(dist["t"])
    g = np.asarray(dist["g"])
    env = np.asarray(dist["envelope"])
    comps = np.asarray(dist["g_components"]) if "g_components" in dist else None
    cols = [t, g, env]
    header = "t,g,envelope"
    if comps is not None:
        for c in range(comps.shape[0]):
            cols.append(comps[c])
            header += f",g_component_{c}"
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=header,
               comments="")


def report_integrity(report):
    """Content hash over everything except the integrity field itself."""
    body = {k: v for k, v in report.items() if k != "integrity"}
    payload = json.dumps(_jsonable(body), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def write_report(report, path):
    report["integrity"] = report_integrity(report)
    with open(path, "w") as fh:
        json.dump(_jsonable(report), fh, sort_keys=True, indent=2)
        fh.write("\n")


def verify_report(report_path, config=None, out=None):
    """Re-evaluate every recorded threshold; return (ok, table rows).

    A tampered report fails the named criterion whose row no longer passes
    its own comparator (or whose stored status disagrees with the
    re-evaluation), and any edit at all breaks the integrity hash.
    """
    say = (lambda msg: None) if out is None else out
    try:
        with open(report_path) as fh:
            report = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report {report_path}: {exc}")

    rows = []
    ok = True
    version = report.get("cache_version")
    if version != CACHE_VERSION:
        say(f"warning: report uses cache version {version}, this build "
            f"expects {CACHE_VERSION}; cached artifacts may not load")
    if config is not None:
        want = config_hash(config)
        got = report.get("config_hash")
        match = want == got
        rows.append(("config_hash", got, f"== {want}", match, False))
        ok = ok and match

    stored = report.get("integrity")
    intact = stored == report_integrity(dict(report))
    rows.append(("integrity", "sha256", "content hash matches", intact, False))
    ok = ok and intact

    failures = []
    for crit in report.get("criteria", []):
        recomputed = _compare(crit["value"], crit["comparator"],
                              crit["threshold"])
        consistent = (crit["status"] == "pass") == recomputed
        passed = recomputed and consistent
        if crit["comparator"] == "true":
            requirement = "is true"
        else:
            label = {"le": "<=", "ge": ">="}[crit["comparator"]]
            requirement = f"{label} {crit['threshold']:.4g}"
        rows.append((crit["name"], crit["value"], requirement, passed,
                     crit["advisory"]))
        if not passed and not crit["advisory"]:
            failures.append(crit["name"])
            ok = False

    name_w = max(len(r[0]) for r in rows) + 2
    say(f"{'criterion':<{name_w}}{'value':>13}  {'requirement':<24}status")
    for name, value, requirement, passed, advisory in rows:
        if isinstance(value, float):
            value = f"{value:.4e}"
        status = "pass" if passed else "FAIL"
        if advisory:
            status += " (advisory)"
        say(f"{name:<{name_w}}{str(value):>13}  {requirement:<24}{status}")
    say(f"result: {'pass' if ok else 'FAIL'}"
        + (f" ({', '.join(failures)})" if failures else ""))
    return ok, rows


def run_sweep(base, lambdas=None, ks=None, epsilons=None, outdir=None,
              log=None):
    """Grid of solve runs over scaling factors, mode counts, and widths."""
    say = (lambda msg: None) if log is None else log
    root = outdir or base.outdir
    os.makedirs(root, exist_ok=True)
    lams = lambdas if lambdas else [base.lam]
    kays = ks if ks else [base.k]
    eps = epsilons if epsilons else [base.epsilon]
    summary = []
    worst = 0
    for i, (lam, k, epsilon) in enumerate(itertools.product(lams, kays, eps)):
        tag = f"run{i:03d}"
        cfg = replace(base, lam=lam, k=k, epsilon=epsilon,
                      outdir=os.path.join(root, tag))
        row = {"run": tag, "lam": lam if lam is not None else "",
               "k": k, "epsilon": epsilon if epsilon is not None else ""}
        say(f"--- {tag}: lam={row['lam']} k={k} epsilon={row['epsilon']}")
        try:
            report = run_pipeline(cfg, log=log)
        except ConfigError as exc:
            raise ConfigError(f"{tag}: {exc}")
        except PipelineError as exc:
            row.update(status=f"error:{exc.stage}", c2="", rho="",
                       residual="", reintegration="", c0="", lei_min="")
            summary.append(row)
            worst = max(worst, 3)
            say(f"{tag} failed: {exc}")
            continue
        stages = report["stages"]
        lei = stages["physical"]["inequality"]
        row.update(
            status=report["status"],
            c2=stages["budget"]["c2"],
            rho=stages["budget"]["rho"],
            residual=stages["solve"].get("residual"),
            reintegration=stages["solve"]["reintegration"],
            c0=stages["physical"]["distance"]["c0"],
            lei_min=lei["min_residual"],
        )
        summary.append(row)
        if report["status"] != "pass":
            worst = max(worst, 1)
    fieldnames = ["run", "lam", "k", "epsilon", "status", "c2", "rho",
                  "residual", "reintegration", "c0", "lei_min"]
    with open(os.path.join(root, "sweep.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in summary:
            writer.writerow(row)
    return summary, worst


def export_tables(outdir, out=None):
    """Write plot-ready CSV tables from a finished run directory."""
    say = (lambda msg: None) if out is None else out
    report_path = os.path.join(outdir, "report.json")
    if not os.path.exists(report_path):
        raise ConfigError(f"no report.json under {outdir}")
    with open(report_path) as fh:
        report = json.load(fh)
    written = []

    path = os.path.join(outdir, "criteria.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "stage", "value", "comparator", "threshold",
                         "advisory", "status"])
        for crit in report["criteria"]:
            writer.writerow([crit["name"], crit["stage"], crit["value"],
                             crit["comparator"], crit["threshold"],
                             crit["advisory"], crit["status"]])
    written.append(path)

    stages = report["stages"]
    path = os.path.join(outdir, "slice_norms.csv")
    norms = np.asarray(stages["family"]["slice_norms"], dtype=np.float64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["component", "slice", "l_q_norm"])
        for c in range(norms.shape[0]):
            for j in range(norms.shape[1]):
                writer.writerow([c, j, repr(norms[c, j])])
    written.append(path)

    decay = stages["physical"]["local_energy"].get("decay", None)
    if decay:
        path = os.path.join(outdir, "decay.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["center_distance", "spacetime_energy"])
            for entry in decay:
                writer.writerow([repr(entry["center_distance"]),
                                 repr(entry["spacetime_energy"])])
        written.append(path)

    chash = report["config_hash"]
    orbit_cache = os.path.join(outdir, "cache", f"orbit_{chash}.npz")
    if os.path.exists(orbit_cache):
        with np.load(orbit_cache) as data:
            path = os.path.join(outdir, "state_trace.csv")
            states = data["states"]
            header = "s," + ",".join(f"x{i}" for i in range(states.shape[1]))
            np.savetxt(path, np.column_stack([data["s_values"], states]),
                       delimiter=",", header=header, comments="")
            written.append(path)
    for name in written:
        say(f"wrote {name}")
    return written


# -- command line ---------------------------------------------------------

def _parse_value(text):
    low = text.strip().lower()
    if low in ("none", "null", "auto"):
        return None
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text.strip()


def _field_names():
    return {f.name for f in dataclass_fields(RunConfig)}


def load_config_file(path):
    """Read a key = value configuration file into a dict."""
    names = _field_names()
    values = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key == "lambda":
            key = "lam"
        if key not in names:
            raise ConfigError(f"{path}:{lineno}: unknown option {key!r}")
        values[key] = _parse_value(value)
    return values


def build_config(args):
    """Merge config file values and command line overrides."""
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for name in _field_names():
        if hasattr(args, name) and getattr(args, name) is not None:
            values[name] = getattr(args, name)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        key = key.strip().replace("-", "_")
        if key == "lambda":
            key = "lam"
        if key not in _field_names():
            raise ConfigError(f"--set: unknown option {key!r}")
        values[key] = _parse_value(value)
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc))


def _add_solve_flags(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--system", choices=["mhd", "visco", "vnsed"])
    p.add_argument("--mode", choices=["dss", "ss"])
    p.add_argument("--lam", "--lambda", dest="lam", type=float,
                   help="scaling factor (dss: > 1)")
    p.add_argument("--box", type=float, help="half-width of the profile box")
    p.add_argument("-n", "--n", dest="n", type=int, help="grid points per axis")
    p.add_argument("-k", "--k", dest="k", type=int, help="modes per component")
    p.add_argument("--preset", help="data preset for ss mode")
    p.add_argument("--amplitude", type=float)
    p.add_argument("--aux-amplitude", dest="aux_amplitude", type=float)
    p.add_argument("--n-slices", dest="n_slices", type=int)
    p.add_argument("--epsilon", type=float, help="mollifier width (dss)")
    p.add_argument("--delta", type=float, help="cutoff smallness target")
    p.add_argument("--steps", type=int, help="RK4 steps per period")
    p.add_argument("--seed", type=int)
    p.add_argument("--outdir", help="run directory (default runs/out)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any configuration field")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="dsslab",
        description="Construct and audit self-similar profile candidates.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run the pipeline once")
    _add_solve_flags(p_solve)
    p_solve.add_argument("--quiet", action="store_true")

    p_verify = sub.add_parser("verify", help="re-check a written report")
    p_verify.add_argument("report", help="report.json path or run directory")
    p_verify.add_argument("--config",
                          help="config file to check the hash against")

    p_sweep = sub.add_parser("sweep", help="grid of solve runs")
    _add_solve_flags(p_sweep)
    p_sweep.add_argument("--lambdas", help="comma list of scaling factors")
    p_sweep.add_argument("--ks", help="comma list of mode counts")
    p_sweep.add_argument("--epsilons",
                         help="comma list of mollifier widths ('auto' ok)")
    p_sweep.add_argument("--quiet", action="store_true")

    p_export = sub.add_parser("export", help="CSV tables from a run directory")
    p_export.add_argument("outdir")

    args = parser.parse_args(argv)
    echo = print

    try:
        if args.command == "solve":
            config = build_config(args)
            log = None if args.quiet else echo
            report = run_pipeline(config, log=log)
            ok, _ = verify_report(
                os.path.join(canonical(config).outdir, "report.json"),
                out=echo)
            return 0 if (ok and report["status"] == "pass") else 1

        if args.command == "verify":
            path = args.report
            if os.path.isdir(path):
                path = os.path.join(path, "report.json")
            config = None
            if args.config:
                config = RunConfig(**load_config_file(args.config))
            ok, _ = verify_report(path, config=config, out=echo)
            return 0 if ok else 1

        if args.command == "sweep":
            base = build_config(args)
            split = lambda txt: ([_parse_value(v) for v in txt.split(",")]
                                 if txt else None)
            log = None if args.quiet else echo
            _, worst = run_sweep(base, lambdas=split(args.lambdas),
                                 ks=split(args.ks),
                                 epsilons=split(args.epsilons),
                                 outdir=base.outdir, log=log)
            echo(f"sweep summary: {os.path.join(base.outdir, 'sweep.csv')}")
            return worst

        if args.command == "export":
            export_tables(args.outdir, out=echo)
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 3
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
