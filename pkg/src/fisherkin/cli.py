"""Command-line surface: kernel specs, run configuration, emitters.

Every output starts with the tool version, a hash of the run configuration
and the seed.  CSV outputs carry these as ``#`` comment lines; JSON outputs
use one envelope for every subcommand::

    {"tool", "version", "command", "config", "config_hash", "seed",
     "status", "result": {"columns", "rows", "summary"}}

Exit codes: 0 ok, 2 validation, 3 invariant breach, 4 IO.
"""

import argparse
import configparser
import hashlib
import io
import json
import os
import re
import sys
from dataclasses import asdict, dataclass, field
from math import pi
from typing import Optional

import numpy as np

from . import __version__
from .collision_kernels import (CollisionKernel, CollisionKernelError, kernels_table,
                                power_law_exponents)
from .gamma_calculus import (CriterionError, counterexample_family, criterion_ratio,
                             curvature_dimension_gap, gamma2_diffusive, gamma2_spectral,
                             mckean_identities, random_even_function, ratio_minimize)
from .info_functionals import DensityGrid
from .kinetic_solver import (PRESETS, BoltzmannState, KineticError, RadialGrid, RadialLandauState,
                             SERIES_COLUMNS, StepPolicy, linear_sphere_evolve, preset_grid, preset_radial,
                             simulate, sphere_series)
from .spectral import (AngularKernel, HeatWeight, SpectralError, kernel_ratio_table,
                       laplace_eigenvalue, legendre_derivatives, multiplicity, spectrum)
from .sphere_ops import (GeometryError, SphereFunction, build_grid, collision_sphere_identity,
                         propPsk_residuals)

EXIT_OK, EXIT_VALIDATION, EXIT_BREACH, EXIT_IO = 0, 2, 3, 4
THREADS_ENV = "FISHERKIN_THREADS"


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class KernelSpecError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Kernel specs

_SPEC_RE = re.compile(r"^\s*([A-Za-z][A-Za-z0-9_-]*)\s*\((.*)\)\s*$")


def _positive(x):
    return x > 0


def _dim_ok(x):
    return x == int(x) and x >= 2


def _theta_min_ok(x):
    return 0 <= x < pi


# name -> (kind, {param: (default, check, range text)}, summary)
FAMILIES = {
    "powerlaw": ("collision", {"s": (None, lambda x: x > 1, "s > 1"),
                               "d": (3, _dim_ok, "integer >= 2"),
                               "psi0": (0.25, _positive, "> 0"),
                               "theta_min": (0.0, _theta_min_ok, "[0, pi)")},
                 "inverse s-power force, psi = psi0 / r^(s-1)"),
    "rutherford": ("collision", {"d": (3, _dim_ok, "integer >= 2"),
                                 "theta_min": (0.0, _theta_min_ok, "[0, pi)")},
                   "Coulomb cross-section"),
    "hardsphere": ("collision", {"d": (3, _dim_ok, "integer >= 2"),
                                 "theta_min": (0.0, _theta_min_ok, "[0, pi)")},
                   "hard spheres, gamma = 1"),
    "screened": ("collision", {"lam": (None, _positive, "> 0"),
                               "theta_min": (0.0, _theta_min_ok, "[0, pi)")},
                 "screened Coulomb (d = 3)"),
    "maxwell": ("collision", {"d": (None, _dim_ok, "integer >= 2"),
                              "value": (1.0, _positive, "> 0"),
                              "theta_min": (0.0, _theta_min_ok, "[0, pi)")},
                "gamma = 0 with constant angular kernel"),
    "product": ("collision", {"gamma": (None, lambda x: -4 <= x <= 2, "[-4, 2]"),
                              "d": (None, _dim_ok, "integer >= 2"),
                              "value": (1.0, _positive, "> 0"),
                              "theta_min": (0.0, _theta_min_ok, "[0, pi)")},
                "|z|^gamma times a constant angular kernel"),
    "const": ("angular", {"d": (None, _dim_ok, "integer >= 2"),
                          "value": (1.0, _positive, "> 0")},
              "beta = value"),
    "heat": ("angular", {"t": (None, _positive, "> 0"),
                         "d": (None, _dim_ok, "integer >= 2")},
             "heat kernel on the sphere at time t"),
    "frac": ("angular", {"nu": (None, lambda x: 0 < x < 2, "(0, 2)"),
                         "d": (None, _dim_ok, "integer >= 2")},
             "kernel of the fractional Laplacian of order nu"),
    "atomic": ("angular", {"N": (None, lambda x: x == int(x) and x >= 1, "integer >= 1")},
               "atoms b0..bN >= 0 at angles i pi / N on the circle"),
}


def _default_text(name, default):
    if default is not None:
        return str(default)
    return "--dim or 3" if name == "d" else "required"


def kernel_families_help() -> str:
    lines = ["known kernel families:"]
    for name, (kind, params, text) in FAMILIES.items():
        plist = [f"{p}={_default_text(p, spec[0])} ({spec[2]})" for p, spec in params.items()]
        if name == "atomic":
            plist.append("b0..bN=0 (>= 0)")
        lines.append(f"  {name}({', '.join(plist)}): {kind}, {text}")
    return "\n".join(lines)


def _parse_value(name: str, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise KernelSpecError(f"parameter {name!r}: cannot parse {text!r} as a number") from None


def parse_kernel_spec(text: str, dim: Optional[int] = None):
    """Turn ``family(param=value,...)`` into a CollisionKernel or AngularKernel.

    ``dim`` fills a missing ``d``; without either, d = 3 (d = 2 for atomic).
    Errors list every known family with its parameters and ranges.
    """
    m = _SPEC_RE.match(text or "")
    if not m:
        raise KernelSpecError(f"cannot parse kernel spec {text!r}; expected family(param=value,...)\n"
                              + kernel_families_help())
    name, body = m.group(1).lower(), m.group(2).strip()
    if name not in FAMILIES:
        raise KernelSpecError(f"unknown kernel family {name!r}\n" + kernel_families_help())
    kind, params, _ = FAMILIES[name]
    given = {}
    for item in filter(None, (s.strip() for s in body.split(","))) if body else ():
        if "=" not in item:
            raise KernelSpecError(f"{name}: expected param=value, got {item!r}\n" + kernel_families_help())
        key, val = (s.strip() for s in item.split("=", 1))
        if key in given:
            raise KernelSpecError(f"{name}: parameter {key!r} given twice\n" + kernel_families_help())
        given[key] = _parse_value(key, val)
    atoms = {k: v for k, v in given.items() if name == "atomic" and re.fullmatch(r"b\d+", k)}
    unknown = sorted(set(given) - set(params) - set(atoms))
    if unknown:
        raise KernelSpecError(f"{name}: unknown parameter(s) {', '.join(unknown)}; allowed: "
                              f"{', '.join(params)}{', b0..bN' if name == 'atomic' else ''}\n"
                              + kernel_families_help())
    vals = {}
    for key, (default, check, rng) in params.items():
        if key in given:
            v = given[key]
        elif key == "d" and dim is not None:
            v = float(dim)
        elif key == "d" and default is None:
            v = 3.0
        elif default is None:
            raise KernelSpecError(f"{name}: missing required parameter {key!r} ({rng})\n"
                                  + kernel_families_help())
        else:
            v = float(default)
        if not check(v):
            raise KernelSpecError(f"{name}: parameter {key}={v:g} out of range, need {rng}\n"
                                  + kernel_families_help())
        vals[key] = v
    try:
        return _build_kernel(name, vals, atoms)
    except (CollisionKernelError, SpectralError) as exc:
        raise KernelSpecError(f"{name}: {exc}") from None


def _build_kernel(name: str, v: dict, atoms: dict):
    d = int(v.get("d", 3))
    tmin = v.get("theta_min", 0.0)
    if name == "powerlaw":
        return CollisionKernel.power_law(v["s"], d, psi0=v["psi0"], theta_min=tmin)
    if name == "rutherford":
        return CollisionKernel.rutherford(d, theta_min=tmin)
    if name == "hardsphere":
        return CollisionKernel.hard_sphere(d, theta_min=tmin)
    if name == "screened":
        return CollisionKernel.screened_coulomb(v["lam"], theta_min=tmin)
    if name == "maxwell":
        return CollisionKernel.maxwell(AngularKernel.constant(d, v["value"]), theta_min=tmin)
    if name == "product":
        return CollisionKernel.product(v["gamma"], AngularKernel.constant(d, v["value"]), theta_min=tmin)
    if name == "const":
        return AngularKernel.constant(d, v["value"])
    if name == "heat":
        return AngularKernel.heat(d, v["t"])
    if name == "frac":
        return AngularKernel.fractional(d, v["nu"])
    N = int(v["N"])
    masses = np.zeros(N + 1)
    for key, val in atoms.items():
        i = int(key[1:])
        if i > N:
            raise KernelSpecError(f"atomic: atom {key} beyond N={N}")
        if val < 0:
            raise KernelSpecError(f"atomic: atom {key}={val:g} must be >= 0")
        masses[i] = val
    if not masses.any():
        raise KernelSpecError("atomic: at least one atom b0..bN must be positive")
    return AngularKernel.atomic_rational(N, masses)


def angular_part(kernel) -> AngularKernel:
    """The angular kernel at |z| = 1 (the kernel itself when already angular)."""
    if isinstance(kernel, AngularKernel):
        return kernel
    return kernel.section(1.0)


# ---------------------------------------------------------------------------
# Run configuration


@dataclass
class RunConfig:
    subcommand: str
    kernel: Optional[str] = None
    dim: Optional[int] = None
    resolutions: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    seed: int = 0
    out: Optional[str] = None
    format: str = "csv"
    options: dict = field(default_factory=dict)
    threads: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        """Hash of everything that determines the numbers (not the output path)."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(_clean(d), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def root_rng(seed: int):
    """Splittable counter-based source: SeedSequence spawning Philox streams."""
    return np.random.SeedSequence(int(seed))


def stream(seq: np.random.SeedSequence, n: int = 1):
    return [np.random.Generator(np.random.Philox(s)) for s in seq.spawn(n)]


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else None
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return "" if not np.isfinite(x) else repr(float(x))
    return str(x)


@dataclass
class Result:
    columns: tuple
    rows: list
    summary: dict = field(default_factory=dict)
    breach: Optional[str] = None


def header_lines(cfg: RunConfig) -> list:
    return [f"fisherkin {__version__}", f"config_hash={cfg.hash()}", f"seed={cfg.seed}",
            f"command={cfg.subcommand}"]


def render(cfg: RunConfig, res: Result) -> str:
    if cfg.format == "json":
        env = {"tool": "fisherkin", "version": __version__, "command": cfg.subcommand,
               "config": cfg.to_dict(), "config_hash": cfg.hash(), "seed": cfg.seed,
               "status": "invariant-breach" if res.breach else "ok",
               "result": {"columns": list(res.columns), "rows": [list(r) for r in res.rows],
                          "summary": res.summary}}
        return json.dumps(_clean(env), sort_keys=True, indent=1) + "\n"
    buf = io.StringIO()
    for line in header_lines(cfg):
        buf.write(f"# {line}\n")
    buf.write(",".join(res.columns) + "\n")
    for r in res.rows:
        buf.write(",".join(_fmt(x) for x in r) + "\n")
    if res.summary:
        keys = list(res.summary)
        buf.write(f"# {','.join(keys)} = {','.join(_fmt(res.summary[k]) for k in keys)}\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Subcommands


def cmd_kernels_table(cfg: RunConfig) -> Result:
    o = cfg.options
    rows = kernels_table(o["s"], cfg.dim, cfg.resolutions["grid"])
    return Result(("theta", "b", "B_at_z1", "gamma", "nu"), rows)


def cmd_spectrum(cfg: RunConfig) -> Result:
    beta = angular_part(parse_kernel_spec(cfg.kernel, cfg.dim))
    lmax = cfg.resolutions["lmax"]
    sk = spectrum(beta, lmax)
    rows = [(l, laplace_eigenvalue(beta.dim, l), float(sk.nu[l]), multiplicity(beta.dim, l))
            for l in range(lmax + 1)]
    return Result(("l", "lambda_l", "nu_l", "N(d,l)"), rows, {"kernel": beta.label, "dim": beta.dim})


def reference_kernel(name: str, d: int, nu: float) -> AngularKernel:
    """Comparison kernels for power-law targets of singular order nu."""
    if name == "frac":
        return AngularKernel.fractional(d, nu)
    if name == "weighted":
        return AngularKernel.subordinated(d, HeatWeight.power(1 + nu / 2, 2 - nu), order=nu)
    if name == "weighted-scaled":
        return AngularKernel.subordinated(d, HeatWeight.power(1 + nu / 2, 2 - nu / 4), order=nu)
    raise CliError(EXIT_VALIDATION, f"unknown weight {name!r}; choose frac, weighted, weighted-scaled")


def cmd_ratio(cfg: RunConfig) -> Result:
    s, d = cfg.options["s"], cfg.dim
    try:
        K = CollisionKernel.power_law(s, d)
    except CollisionKernelError as exc:
        raise CliError(EXIT_VALIDATION, str(exc)) from None
    _, nu = power_law_exponents(s, d)
    if not 0 < nu < 2:
        raise CliError(EXIT_VALIDATION, f"need 0 < nu < 2 for a fractional reference, got nu={nu:g}")
    ref = reference_kernel(cfg.options["weight"], d, nu)
    th = np.linspace(1e-3, pi - 1e-3, cfg.resolutions["grid"])
    tab = kernel_ratio_table(K.angular, ref, th)
    rows = list(zip(tab.theta, tab.target, tab.ref, tab.ratio))
    return Result(("theta", "b_target", "b_ref", "ratio"), rows,
                  {"m": tab.m, "M": tab.M, "M/m": tab.M / tab.m})


CRITERION_COLUMNS = ("A", "lhs", "rhs", "ratio", "K_estimate", "infinite")


def _report_row(A, rep):
    return (A, rep.lhs, rep.rhs, rep.ratio, rep.K_estimate, rep.infinite)


def cmd_criterion(cfg: RunConfig, seq) -> Result:
    beta = angular_part(parse_kernel_spec(cfg.kernel, cfg.dim))
    mode = cfg.options["mode"]
    if mode == "counterexample":
        if beta.kind != "atomic" or beta.dim != 2:
            raise CliError(EXIT_VALIDATION, "counterexample mode needs an atomic(N=...) kernel")
        N = beta.masses.size - 1
        grid = build_grid(2, cfg.resolutions["grid"])
        rows = []
        for A in cfg.options["amplitudes"]:
            F = counterexample_family(N, beta.masses, A, grid)
            rows.append(_report_row(A, criterion_ratio(F, beta)))
        return Result(CRITERION_COLUMNS, rows, {"mode": mode, "drop": rows[0][3] / rows[-1][3]})
    grid = build_grid(beta.dim, cfg.resolutions["grid"])
    sym = beta.symmetrised()
    lmax = min(cfg.resolutions["lmax"], grid.lmax)
    (rng,) = stream(seq)
    if mode == "sample":
        rows = []
        for _ in range(cfg.options["samples"]):
            F = random_even_function(grid, rng, lmax=lmax, amplitude=cfg.options["amplitude"])
            rows.append(_report_row(None, criterion_ratio(F, sym)))
        ratios = np.array([r[3] for r in rows])
        return Result(CRITERION_COLUMNS, rows, {"mode": mode, "min_ratio": ratios.min(),
                                                "dim": beta.dim, "bound_4d": 4.0 * beta.dim})
    if mode == "minimize":
        seed = int(rng.integers(2 ** 31))
        rep = ratio_minimize(sym, grid, iterations=cfg.options["iterations"], seed=seed, lmax=lmax)
        return Result(CRITERION_COLUMNS, [_report_row(None, rep)],
                      {"mode": mode, "min_ratio": rep.ratio, "dim": beta.dim, "bound_4d": 4.0 * beta.dim})
    raise CliError(EXIT_VALIDATION, f"unknown mode {mode!r}; choose sample, minimize, counterexample")


SPHERE_PRESETS = {
    "bimodal": lambda x: np.exp(2.0 * x[:, 0] ** 2),
    "squashed-gaussian": lambda x: np.exp(-3.0 * x[:, -1] ** 2),
    "indicator-smoothed": lambda x: 0.05 + 1.0 / (1.0 + np.exp((np.abs(x[:, -1]) - 0.5) / 0.05)),
}


def sphere_preset(name: str, grid) -> SphereFunction:
    if name not in SPHERE_PRESETS:
        raise CliError(EXIT_VALIDATION, f"unknown preset {name!r}; choose {', '.join(SPHERE_PRESETS)}")
    v = SPHERE_PRESETS[name](grid.nodes)
    return SphereFunction(grid, v / grid.integrate(v), even=True)


def _read_numbers(path: str) -> np.ndarray:
    try:
        return np.loadtxt(path, comments="#", delimiter=None, ndmin=1)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from None
    except ValueError as exc:
        raise CliError(EXIT_VALIDATION, f"cannot parse {path}: {exc}") from None


def _initial_state(cfg: RunConfig, kernel):
    flow, f0 = cfg.options["flow"], cfg.options["f0"]
    n, R = cfg.resolutions["n"], cfg.resolutions["R"]
    if flow == "boltzmann2d":
        if isinstance(kernel, AngularKernel):
            kernel = CollisionKernel.maxwell(kernel)
        if f0 in PRESETS:
            f = preset_grid(f0, n, R)
        else:
            try:
                f = DensityGrid.load(f0)
            except OSError as exc:
                raise CliError(EXIT_IO, f"cannot read {f0}: {exc}") from None
        return BoltzmannState(f, kernel)
    if flow == "landau-radial":
        gamma = 0.0 if isinstance(kernel, AngularKernel) else kernel.gamma
        if kernel.dim != 3:
            raise CliError(EXIT_VALIDATION, "landau-radial runs in d = 3")
        if f0 in PRESETS:
            g, vals = preset_radial(f0, n, R)
        else:
            data = _read_numbers(f0)
            if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 8:
                raise CliError(EXIT_VALIDATION, f"{f0}: expected two columns r, f on >= 8 cell centres")
            r, vals = data[:, 0], data[:, 1]
            h = r[1] - r[0]
            g = RadialGrid(r.size, r[-1] + 0.5 * h)
            if np.abs(g.r - r).max() > 1e-9 * g.R:
                raise CliError(EXIT_VALIDATION, f"{f0}: r must be the cell centres (i + 1/2) h")
        return RadialLandauState(g, vals, gamma)
    raise CliError(EXIT_VALIDATION, f"unknown flow {flow!r}")


def cmd_simulate(cfg: RunConfig) -> Result:
    flow = cfg.options["flow"]
    kernel = parse_kernel_spec(cfg.kernel, cfg.dim)
    T = cfg.options["T"]
    if flow == "sphere":
        return _simulate_sphere(cfg, angular_part(kernel), T)
    state = _initial_state(cfg, kernel)
    pol = StepPolicy(scheme=cfg.options["scheme"], i_tol=cfg.tolerances["i_tol"],
                     record_every=cfg.options["record_every"])
    ts = simulate(state, T, pol)
    if cfg.out:
        try:
            ts.write_csv(cfg.out, header_lines(cfg))
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot write {cfg.out}: {exc}") from None
    I = ts.column("I")
    return Result(SERIES_COLUMNS, ts.rows,
                  {"steps": len(ts.rows) - 1, "soft_violations": len(ts.violations),
                   "I_monotone": bool(np.all(np.diff(I) <= ts.column("err_budget")[1:]))})


def _simulate_sphere(cfg: RunConfig, beta: AngularKernel, T: float) -> Result:
    d = beta.dim
    grid = build_grid(d, cfg.resolutions["n"])
    f0 = cfg.options["f0"]
    if f0 in SPHERE_PRESETS:
        F0 = sphere_preset(f0, grid)
    else:
        vals = _read_numbers(f0)
        if vals.shape != (grid.size,):
            raise CliError(EXIT_VALIDATION, f"{f0}: need {grid.size} nodal values, got {vals.shape}")
        F0 = SphereFunction(grid, vals)
    steps = cfg.resolutions["steps"]
    times = np.linspace(0.0, T, steps + 1)
    base = sphere_series(F0, beta, times)
    rows = []
    for t, l2sq, H, I in base:
        v = linear_sphere_evolve(F0, beta, t).values
        mass = grid.integrate(v)
        px, py = (grid.integrate(grid.nodes[:, i] * v) for i in (0, 1))
        rows.append((t, H, I, mass, px, py, np.nan, np.nan, np.nan, float(np.sqrt(l2sq)),
                     float(v.min()), 0.0, 0.0))
    H = np.array([r[1] for r in rows])
    mass = np.array([r[3] for r in rows])
    breach = None
    if np.any(np.diff(H) > 1e-10):
        breach = "entropy increased along a linear sphere flow"
    if np.abs(mass - mass[0]).max() > 1e-10 * abs(mass[0]):
        breach = "mass drift along a linear sphere flow"
    I = np.array([r[2] for r in rows])
    res = Result(SERIES_COLUMNS, rows, {"steps": steps, "I_monotone": bool(np.all(np.diff(I) <= 1e-12))}, breach)
    if cfg.out:
        try:
            with open(cfg.out, "w") as fh:
                fh.write(render(RunConfig(**{**cfg.to_dict(), "format": "csv"}), Result(res.columns, rows)))
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot write {cfg.out}: {exc}") from None
    return res


VERIFY_COLUMNS = ("suite", "check", "value", "tol", "pass")


def _unit(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def verify_identities(seq, n_geometry: int = 10_000) -> list:
    """Rows (suite, check, value, tol, pass) for the geometry, Legendre, McKean and Bochner suites."""
    rows = []
    g_rng, c_rng, m_rng, b_rng = stream(seq, 4)
    for d in (2, 3, 4, 6):
        k, s = _unit(g_rng, n_geometry, d), _unit(g_rng, n_geometry, d)
        x, y = g_rng.standard_normal((n_geometry, d)), g_rng.standard_normal((n_geometry, d))
        for key, val in propPsk_residuals(k, s, x, y).items():
            rows.append(("geometry", f"d={d}:{key}", val, 1e-12, val < 1e-12))
        v, vs = c_rng.standard_normal((n_geometry, d)), c_rng.standard_normal((n_geometry, d))
        lhs, rhs = collision_sphere_identity(v, vs, _unit(c_rng, n_geometry, d))
        err = float(np.abs(lhs - rhs).max())
        rows.append(("geometry", f"d={d}:collision_sphere", err, 1e-12, err < 1e-12))
    x = np.linspace(-1.0, 1.0, 2001)
    ell = np.arange(21)[:, None]
    for d in range(2, 7):
        P, D1, D2 = legendre_derivatives(d, 20, x)
        res = (1 - x ** 2) * D2 - (d - 1) * x * D1 + ell * (ell + d - 2) * P
        err = float(np.abs(res).max())
        rows.append(("legendre", f"d={d}:ode_l<=20", err, 1e-9, err < 1e-9))
    a = 2 * pi * np.arange(4096) / 4096
    for i in range(3):
        c = m_rng.standard_normal(4) / np.arange(1, 5)
        f = np.exp(0.5 * sum(c[j] * np.cos((j + 1) * a + j) for j in range(4)))
        rep = mckean_identities(f)
        for key in ("ipp_residual", "flogf2_residual", "ineqflogf2_residual"):
            val = abs(getattr(rep, key))
            rows.append(("mckean", f"sample{i}:{key}", val, 1e-8, val < 1e-8))
        rows.append(("mckean", f"sample{i}:optimal_margin", rep.optimal_margin, 0.0, rep.optimal_margin >= 0))
    for d, res_ in ((2, 64), (3, 16)):
        grid = build_grid(d, res_)
        for i in range(3):
            F = random_even_function(grid, b_rng, lmax=min(6, grid.lmax // 2), amplitude=1.0)
            G = F.with_values(np.log(F.values))
            scale = max(1.0, np.abs(gamma2_spectral(G)).max())
            err = float(np.abs(gamma2_diffusive(G) - gamma2_spectral(G)).max()) / scale
            rows.append(("bochner", f"d={d}:sample{i}:gamma2_routes", err, 1e-8, err < 1e-8))
            gap = float(curvature_dimension_gap(G).min()) / scale
            rows.append(("bochner", f"d={d}:sample{i}:cd_gap_min", gap, -1e-10, gap >= -1e-10))
    return rows


def cmd_verify(cfg: RunConfig, seq) -> Result:
    if cfg.options.get("suite") != "identities":
        raise CliError(EXIT_VALIDATION, "verify supports: identities")
    rows = verify_identities(seq, cfg.resolutions["n_geometry"])
    failed = [r[1] for r in rows if not r[4]]
    return Result(VERIFY_COLUMNS, rows, {"checks": len(rows), "failed": len(failed)},
                  f"failed checks: {', '.join(failed)}" if failed else None)


# ---------------------------------------------------------------------------
# Argument handling

DEFAULTS = {
    "kernels": {"s": 2.0, "dim": 3, "grid": 64},
    "spectrum": {"dim": 3, "lmax": 20, "kernel": "const()"},
    "ratio": {"dim": 3, "s": 3.0, "weight": "frac", "grid": 801},
    "criterion": {"dim": 2, "kernel": "const()", "mode": "sample", "grid": 128, "lmax": 8,
                  "samples": 10, "amplitude": 1.0, "iterations": 40, "format": "json"},
    "simulate": {"kernel": None, "f0": "bimodal", "T": 1.0, "i_tol": 2e-7, "scheme": "rk4",
                 "record_every": 1, "R": 6.0, "steps": 20},
    "verify": {"n_geometry": 10_000},
}
SIM_N = {"boltzmann2d": 24, "landau-radial": 160, "sphere": 64}
RESOLUTION_KEYS = ("grid", "lmax", "n", "R", "steps", "n_geometry")
TOLERANCE_KEYS = ("i_tol",)
OPTION_TYPES = {"s": float, "dim": int, "grid": int, "lmax": int, "samples": int, "amplitude": float,
                "iterations": int, "T": float, "i_tol": float, "record_every": int, "R": float,
                "steps": int, "n": int, "n_geometry": int, "seed": int, "threads": int}


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise CliError(EXIT_VALIDATION, f"{THREADS_ENV}={raw!r} is not an integer") from None
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fisherkin", description="Fisher information along kinetic flows.",
                                epilog=kernel_families_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"fisherkin {__version__}")

    def common(sp):
        sp.add_argument("--config", help="key = value file with sections by subcommand")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None, help=f"default: ${THREADS_ENV} or 1")
        sp.add_argument("--format", choices=("csv", "json"), default=None)
        sp.add_argument("--out", default=None, help="output path (default: stdout)")

    sub = p.add_subparsers(dest="command", required=True)
    kt = sub.add_parser("kernels", help="scattering kernel tables")
    kt.add_argument("what", choices=("table",))
    kt.add_argument("--s", type=float)
    kt.add_argument("--dim", type=int)
    kt.add_argument("--grid", type=int)
    common(kt)

    sp = sub.add_parser("spectrum", help="eigenvalues of L_beta")
    sp.add_argument("--dim", type=int)
    sp.add_argument("--kernel")
    sp.add_argument("--lmax", type=int)
    common(sp)

    rp = sub.add_parser("ratio", help="power-law kernel against a reference kernel")
    rp.add_argument("--dim", type=int)
    rp.add_argument("--s", type=float)
    rp.add_argument("--weight", choices=("frac", "weighted", "weighted-scaled"))
    rp.add_argument("--grid", type=int)
    common(rp)

    cp = sub.add_parser("criterion", help="curvature criterion ratio")
    cp.add_argument("--dim", type=int)
    cp.add_argument("--kernel")
    cp.add_argument("--mode", choices=("sample", "minimize", "counterexample"))
    cp.add_argument("--grid", type=int)
    cp.add_argument("--lmax", type=int)
    cp.add_argument("--samples", type=int)
    cp.add_argument("--amplitude", type=float)
    cp.add_argument("--iterations", type=int)
    common(cp)

    mp = sub.add_parser("simulate", help="run a flow and record diagnostics")
    mp.add_argument("flow", choices=("boltzmann2d", "landau-radial", "sphere"))
    mp.add_argument("--kernel")
    mp.add_argument("--dim", type=int)
    mp.add_argument("--f0", help=f"file or preset ({', '.join(PRESETS)})")
    mp.add_argument("--T", type=float)
    mp.add_argument("--n", type=int, help="grid size")
    mp.add_argument("--R", type=float, help="velocity box half-width / radius")
    mp.add_argument("--steps", type=int, help="output times for the sphere flow")
    mp.add_argument("--i-tol", dest="i_tol", type=float)
    mp.add_argument("--scheme", choices=("rk4", "euler"))
    mp.add_argument("--record-every", dest="record_every", type=int)
    common(mp)

    vp = sub.add_parser("verify", help="identity suites")
    vp.add_argument("suite", choices=("identities",))
    vp.add_argument("--n-geometry", dest="n_geometry", type=int)
    common(vp)
    return p


def _config_values(path: Optional[str], section: str) -> dict:
    if not path:
        return {}
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise CliError(EXIT_VALIDATION, f"bad config {path}: {exc}") from None
    out = dict(cp.defaults())
    if cp.has_section(section):
        out.update({k: v for k, v in cp.items(section)})
    conv = {}
    for k, v in out.items():
        key = k.replace("-", "_")
        try:
            conv[key] = OPTION_TYPES.get(key, str)(v)
        except ValueError:
            raise CliError(EXIT_VALIDATION, f"config {path}: {k} = {v!r} has the wrong type") from None
    return conv


def config_from_args(args) -> RunConfig:
    """Merge built-in defaults < config file section < command-line flags."""
    cmd = args.command
    merged = dict(DEFAULTS[cmd])
    if cmd == "simulate":
        merged["n"] = SIM_N[args.flow]
    explicit = _config_values(args.config, cmd)
    explicit.update({k: v for k, v in vars(args).items() if v is not None and k not in ("command", "config")})
    merged.update(explicit)
    if cmd == "criterion" and merged.get("mode") == "counterexample":
        merged["amplitudes"] = [1.0, 10.0, 100.0, 1000.0]
        if "grid" not in explicit:
            merged["grid"] = 4096
    seed = int(merged.pop("seed", 0))
    threads = merged.pop("threads", None)
    threads = _default_threads() if threads is None else int(threads)
    if threads < 1:
        raise CliError(EXIT_VALIDATION, f"threads must be >= 1, got {threads}")
    fmt = merged.pop("format", "csv")
    if fmt not in ("csv", "json"):
        raise CliError(EXIT_VALIDATION, f"format must be csv or json, got {fmt!r}")
    out = merged.pop("out", None)
    kernel = merged.pop("kernel", None)
    dim = merged.pop("dim", None)
    merged.pop("what", None)
    res = {k: merged.pop(k) for k in RESOLUTION_KEYS if k in merged}
    tol = {k: merged.pop(k) for k in TOLERANCE_KEYS if k in merged}
    for k, v in {**res, **tol}.items():
        if not v > 0:
            raise CliError(EXIT_VALIDATION, f"{k} must be positive, got {v}")
    if cmd == "simulate" and kernel is None:
        raise CliError(EXIT_VALIDATION, "simulate needs --kernel\n" + kernel_families_help())
    sub = {"simulate": f"simulate {merged.get('flow')}", "verify": f"verify {merged.get('suite')}",
           "kernels": "kernels table"}.get(cmd, cmd)
    return RunConfig(sub, kernel, dim, res, tol, seed, out, fmt, merged, threads)


def run(cfg: RunConfig) -> Result:
    seq = root_rng(cfg.seed)
    cmd = cfg.subcommand.split()[0]
    if cmd == "kernels":
        return cmd_kernels_table(cfg)
    if cmd == "spectrum":
        return cmd_spectrum(cfg)
    if cmd == "ratio":
        return cmd_ratio(cfg)
    if cmd == "criterion":
        return cmd_criterion(cfg, seq)
    if cmd == "simulate":
        return cmd_simulate(cfg)
    if cmd == "verify":
        return cmd_verify(cfg, seq)
    raise CliError(EXIT_VALIDATION, f"unknown subcommand {cmd!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        res = run(cfg)
        text = render(cfg, res)
        if cfg.out and cfg.subcommand.startswith("simulate"):
            # the series went to --out; stdout gets the summary (or the full envelope)
            if cfg.format == "csv":
                keys = list(res.summary)
                text = f"# {','.join(keys)} = {','.join(_fmt(res.summary[k]) for k in keys)}\n"
            sys.stdout.write(text)
        elif cfg.out:
            try:
                with open(cfg.out, "w") as fh:
                    fh.write(text)
            except OSError as exc:
                raise CliError(EXIT_IO, f"cannot write {cfg.out}: {exc}") from None
        else:
            sys.stdout.write(text)
        if res.breach:
            print(f"fisherkin: invariant breach: {res.breach}", file=sys.stderr)
            return EXIT_BREACH
        return EXIT_OK
    except CliError as exc:
        print(f"fisherkin: {exc}", file=sys.stderr)
        return exc.code
    except KernelSpecError as exc:
        print(f"fisherkin: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except KineticError as exc:
        print(f"fisherkin: {exc}", file=sys.stderr)
        return EXIT_BREACH if exc.code == "invariant-breach" else EXIT_VALIDATION
    except (CriterionError, SpectralError, GeometryError, CollisionKernelError) as exc:
        print(f"fisherkin: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"fisherkin: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
