"""Entropy and Fisher information of densities sampled on box grids, with the
heat and Fokker-Planck flows used for de Bruijn, Stam and decay checks.

Densities live on cell-centred regular grids: node ``i`` sits at
``origin + i * spacing`` and carries the cell volume ``prod(spacing)``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from math import ceil, log, pi
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.signal import fftconvolve

FLOOR = 1e-300
TAIL_WARN = 1e-8


class InfoError(ValueError):
    """Raised for invalid functional or flow requests; ``code`` is a short tag."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


class TailMassWarning(UserWarning):
    """Boundary cells hold more than the tolerated fraction of the mass."""


class DensityGrid:
    """Nonnegative density on a regular cell-centred grid in dimension 1-3."""

    def __init__(self, values, origin, spacing):
        values = np.array(values, dtype=float)
        dim = values.ndim
        if dim not in (1, 2, 3, 4, 6):
            raise InfoError("bad-dim", f"unsupported array rank {dim}")
        origin = np.broadcast_to(np.asarray(origin, dtype=float), (dim,)).copy()
        spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (dim,)).copy()
        if np.any(spacing <= 0):
            raise InfoError("bad-spacing", "spacing must be positive")
        if np.any(values < 0):
            raise InfoError("negative-density", f"min value {values.min():.3g}")
        self.values = values
        self.origin = origin
        self.spacing = spacing
        self._mass = float(values.sum() * self.cell_volume)

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def shape(self):
        return self.values.shape

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def mass(self) -> float:
        return self._mass

    def axes(self):
        return [o + h * np.arange(n) for o, h, n in zip(self.origin, self.spacing, self.shape)]

    def mesh(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def with_values(self, values) -> "DensityGrid":
        return DensityGrid(values, self.origin, self.spacing)

    def normalized(self) -> "DensityGrid":
        if self.mass <= 0:
            raise InfoError("empty-domain", "zero mass")
        return self.with_values(self.values / self.mass)

    def translated(self, shift) -> "DensityGrid":
        return DensityGrid(self.values, self.origin + np.asarray(shift, dtype=float), self.spacing)

    def moment(self, k: int) -> float:
        r2 = sum(x * x for x in self.mesh())
        return float(np.sum(self.values * r2 ** (k / 2.0)) * self.cell_volume)

    def mean(self) -> np.ndarray:
        return np.array([np.sum(self.values * x) * self.cell_volume for x in self.mesh()]) / self.mass

    def energy(self) -> float:
        return self.moment(2)

    # text format -------------------------------------------------------
    def save(self, path: str) -> None:
        head = [str(self.dim), *map(str, self.shape), *(repr(float(x)) for x in (*self.origin, *self.spacing))]
        with open(path, "w") as fh:
            fh.write(" ".join(head) + "\n")
            np.savetxt(fh, self.values.reshape(1, -1) if self.dim == 1 else self.values.reshape(self.shape[0], -1))

    @classmethod
    def load(cls, path: str) -> "DensityGrid":
        with open(path) as fh:
            head = fh.readline().split()
            body = fh.read().split()
        dim = int(head[0])
        shape = tuple(int(x) for x in head[1:1 + dim])
        origin = [float(x) for x in head[1 + dim:1 + 2 * dim]]
        spacing = [float(x) for x in head[1 + 2 * dim:1 + 3 * dim]]
        vals = np.array([float(x) for x in body])
        if vals.size != int(np.prod(shape)):
            raise InfoError("bad-file", f"expected {int(np.prod(shape))} values, got {vals.size}")
        return cls(vals.reshape(shape), origin, spacing)


@dataclass(frozen=True)
class GaussianSpec:
    """Isotropic Gaussian with mean ``mean`` and variance ``var`` per axis."""

    dim: int
    mean: tuple = None
    var: float = 1.0

    def __post_init__(self):
        if not self.var > 0:
            raise InfoError("bad-variance", f"variance must be positive, got {self.var}")
        if self.mean is None:
            object.__setattr__(self, "mean", tuple([0.0] * self.dim))
        if len(self.mean) != self.dim:
            raise InfoError("bad-dim", "mean has the wrong length")

    def log_density(self, mesh) -> np.ndarray:
        r2 = sum((x - m) ** 2 for x, m in zip(mesh, self.mean))
        return -r2 / (2.0 * self.var) - 0.5 * self.dim * log(2.0 * pi * self.var)

    def density(self, mesh) -> np.ndarray:
        return np.exp(self.log_density(mesh))


def box_grid(dim: int, n: int, half_width: float, values=None) -> DensityGrid:
    """Grid of n^dim cells centred on the box [-half_width, half_width]^dim."""
    h = 2.0 * half_width / n
    origin = -half_width + 0.5 * h
    shape = (n,) * dim
    return DensityGrid(np.zeros(shape) if values is None else values, [origin] * dim, [h] * dim)


def sample(fn, dim: int, n: int, half_width: float) -> DensityGrid:
    """Density with values fn(*mesh) on a centred box grid."""
    g = box_grid(dim, n, half_width)
    return g.with_values(np.asarray(fn(*g.mesh()), dtype=float))


def gaussian_grid(spec: GaussianSpec, n: int, half_width: float) -> DensityGrid:
    g = box_grid(spec.dim, n, half_width)
    return g.with_values(spec.density(g.mesh()))


def mixture_grid(dim: int, n: int, half_width: float, weights, means, variances) -> DensityGrid:
    """Sampled mixture of isotropic Gaussians."""
    g = box_grid(dim, n, half_width)
    mesh = g.mesh()
    vals = np.zeros(g.shape)
    for w, m, v in zip(weights, means, variances):
        vals += w * GaussianSpec(dim, tuple(np.broadcast_to(m, (dim,))), v).density(mesh)
    return g.with_values(vals)


def tail_mass(f: DensityGrid) -> float:
    """Fraction of mass in the outermost layer of cells."""
    inner = f.values[tuple(slice(1, -1) for _ in range(f.dim))]
    total = f.values.sum()
    return float((total - inner.sum()) / total) if total > 0 else 0.0


def _warn_tail(f: DensityGrid) -> None:
    tm = tail_mass(f)
    if tm > TAIL_WARN:
        warnings.warn(f"boundary cells hold {tm:.2e} of the mass", TailMassWarning, stacklevel=3)


def _require_mass(f: DensityGrid) -> None:
    if f.values.size == 0 or not f.mass > 0:
        raise InfoError("empty-domain", "density has no mass")


# ---------------------------------------------------------------------------
# Functionals


def entropy(f: DensityGrid) -> float:
    """H(f) = sum f log f * cell volume, with 0 log 0 = 0."""
    _require_mass(f)
    v = f.values
    pos = v > FLOOR
    return float(np.sum(v[pos] * np.log(v[pos])) * f.cell_volume)


def _grad_sqrt(f: DensityGrid):
    r = np.sqrt(np.where(f.values > FLOOR, f.values, 0.0))
    if f.dim == 1:
        return [np.gradient(r, f.spacing[0], edge_order=2)]
    return list(np.gradient(r, *f.spacing, edge_order=2))


def fisher_information(f: DensityGrid) -> float:
    """I(f) = 4 sum |grad sqrt f|^2 * cell volume with centred differences."""
    _require_mass(f)
    return float(4.0 * sum(np.sum(g * g) for g in _grad_sqrt(f)) * f.cell_volume)


def relative_entropy(f: DensityGrid, ref: GaussianSpec) -> float:
    """H(f | ref) = int f log(f / ref)."""
    _require_mass(f)
    if ref.dim != f.dim:
        raise InfoError("bad-dim", "reference dimension differs")
    v = f.values
    lr = ref.log_density(f.mesh())
    pos = v > FLOOR
    return float(np.sum(v[pos] * (np.log(v[pos]) - lr[pos])) * f.cell_volume)


def relative_fisher(f: DensityGrid, ref: GaussianSpec) -> float:
    """I(f | ref) = int f |grad log(f / ref)|^2 = 4 int |grad sqrt f + sqrt f (x - m)/(2 var)|^2."""
    _require_mass(f)
    if ref.dim != f.dim:
        raise InfoError("bad-dim", "reference dimension differs")
    r = np.sqrt(np.where(f.values > FLOOR, f.values, 0.0))
    tot = 0.0
    for g, x, m in zip(_grad_sqrt(f), f.mesh(), ref.mean):
        tot += np.sum((g + r * (x - m) / (2.0 * ref.var)) ** 2)
    return float(4.0 * tot * f.cell_volume)


def tensor_square(f: DensityGrid) -> DensityGrid:
    """(f tensor f)(v, v*) = f(v) f(v*) for a one-dimensional f."""
    if f.dim != 1:
        raise InfoError("bad-dim", "tensor_square is restricted to d = 1 inputs")
    return DensityGrid(np.outer(f.values, f.values), [f.origin[0]] * 2, [f.spacing[0]] * 2)


def tensor_product(f: DensityGrid, g: DensityGrid) -> DensityGrid:
    vals = np.multiply.outer(f.values, g.values)
    return DensityGrid(vals, np.concatenate([f.origin, g.origin]), np.concatenate([f.spacing, g.spacing]))


def rescale(f: DensityGrid, lam: float) -> DensityGrid:
    """f_lam(x) = lam^{-d} f(x / lam) resampled on the same grid (cubic interpolation)."""
    if lam == 1.0:
        return f
    mesh = f.mesh()
    coords = [(x / lam - o) / h for x, o, h in zip(mesh, f.origin, f.spacing)]
    vals = map_coordinates(f.values, coords, order=3, mode="constant", cval=0.0, prefilter=True)
    vals = np.maximum(vals, 0.0) / lam ** f.dim
    return f.with_values(vals)


def convolve_rescale(f: DensityGrid, g: DensityGrid, alpha: float) -> DensityGrid:
    """Q_alpha(f, g) = f_{sqrt(1-alpha)} * g_{sqrt(alpha)}, the density of sqrt(1-alpha) X + sqrt(alpha) Y.

    The result lives on the full convolution grid and is renormalized to
    mass(f) * mass(g).
    """
    if f.dim != g.dim:
        raise InfoError("bad-dim", "densities have different dimensions")
    if not np.allclose(f.spacing, g.spacing, rtol=1e-12, atol=0):
        raise InfoError("bad-grid", "densities need equal spacing")
    if not 0.0 <= alpha <= 1.0:
        raise InfoError("bad-alpha", "alpha must lie in [0, 1]")
    if alpha == 0.0:
        return f.with_values(f.values * g.mass)
    if alpha == 1.0:
        return g.with_values(g.values * f.mass)
    fa = rescale(f, np.sqrt(1.0 - alpha))
    ga = rescale(g, np.sqrt(alpha))
    vals = np.maximum(fftconvolve(fa.values, ga.values, mode="full"), 0.0) * f.cell_volume
    out = DensityGrid(vals, f.origin + g.origin, f.spacing)
    return out.with_values(out.values * (f.mass * g.mass / out.mass))


# ---------------------------------------------------------------------------
# Flows


def _stable_dt(f: DensityGrid, drift: bool) -> float:
    """Largest explicit step keeping the update a positive combination (times 0.9)."""
    if not drift:
        return 0.9 / (2.0 * np.sum(1.0 / f.spacing ** 2))
    rate = 0.0
    for fwd, bwd, h, _ in _fp_faces(f):
        out = np.zeros(fwd.size + 1)
        out[:-1] += fwd
        out[1:] += bwd
        rate += out.max() / h ** 2
    return 0.9 / rate


def _check_steps(f: DensityGrid, t: float, steps: Optional[int], drift: bool) -> int:
    if t < 0:
        raise InfoError("bad-time", "t must be >= 0")
    dt_max = _stable_dt(f, drift)
    need = max(1, ceil(t / dt_max))
    if steps is None:
        return need
    if t / steps > dt_max * (1 + 1e-12):
        raise InfoError("cfl-violation", f"{steps} steps too few for t = {t}; use at least {need}")
    return int(steps)


def _fp_faces(f: DensityGrid):
    """Face weights sqrt(M_i M_{i+1}) / h^2 / M_i for the symmetric Fokker-Planck flux."""
    out = []
    for ax, x in enumerate(f.axes()):
        h = f.spacing[ax]
        xm = 0.5 * (x[1:] + x[:-1])
        # sqrt(M_{i+1}/M_i) and its inverse along the axis, with M = exp(-x^2/2)
        fwd = np.exp(-0.5 * (x[1:] ** 2 - x[:-1] ** 2) / 2.0)
        out.append((fwd, 1.0 / fwd, h, xm))
    return out


def _divergence_step(vals: np.ndarray, fluxes) -> np.ndarray:
    new = vals.copy()
    for ax, (F, h) in enumerate(fluxes):
        pad = [(0, 0)] * vals.ndim
        pad[ax] = (1, 1)
        Fp = np.pad(F, pad)  # zero flux through the box boundary
        sl_hi = [slice(None)] * vals.ndim
        sl_lo = [slice(None)] * vals.ndim
        sl_hi[ax] = slice(1, None)
        sl_lo[ax] = slice(None, -1)
        new -= (Fp[tuple(sl_hi)] - Fp[tuple(sl_lo)]) / h
    return new


def heat_step(vals: np.ndarray, spacing, dt: float) -> np.ndarray:
    fluxes = []
    for ax, h in enumerate(spacing):
        fluxes.append((-dt * np.diff(vals, axis=ax) / h, h))
    return _divergence_step(vals, fluxes)


def fokker_planck_step(vals: np.ndarray, faces, dt: float) -> np.ndarray:
    """One explicit step of df/dt = div(grad f + f x) in the symmetric form
    flux = -sqrt(M_i M_j) (f_j/M_j - f_i/M_i) / h, which keeps M exactly stationary."""
    fluxes = []
    for ax, (fwd, bwd, h, _) in enumerate(faces):
        shape = [1] * vals.ndim
        shape[ax] = -1
        fw = fwd.reshape(shape)
        bw = bwd.reshape(shape)
        lo = [slice(None)] * vals.ndim
        hi = [slice(None)] * vals.ndim
        lo[ax] = slice(None, -1)
        hi[ax] = slice(1, None)
        fi, fj = vals[tuple(lo)], vals[tuple(hi)]
        # sqrt(M_i M_j)(f_j/M_j - f_i/M_i) = f_j sqrt(M_i/M_j) - f_i sqrt(M_j/M_i)
        fluxes.append((-dt * (fj * bw - fi * fw) / h, h))
    return _divergence_step(vals, fluxes)


def heat_evolve(f: DensityGrid, t: float, steps: Optional[int] = None) -> DensityGrid:
    """Explicit conservative scheme for df/dt = Laplacian f on the box (zero-flux walls)."""
    n = _check_steps(f, t, steps, drift=False)
    if t == 0:
        return f
    dt = t / n
    v = f.values
    for _ in range(n):
        v = heat_step(v, f.spacing, dt)
    _warn_tail(f.with_values(np.maximum(v, 0.0)))
    return f.with_values(np.maximum(v, 0.0))


def fokker_planck_evolve(f: DensityGrid, t: float, steps: Optional[int] = None) -> DensityGrid:
    """Explicit conservative scheme for df/dt = div(grad f + f v) (unit Gaussian equilibrium)."""
    n = _check_steps(f, t, steps, drift=True)
    if t == 0:
        return f
    dt = t / n
    faces = _fp_faces(f)
    v = f.values
    for _ in range(n):
        v = fokker_planck_step(v, faces, dt)
    return f.with_values(np.maximum(v, 0.0))


def de_bruijn_residual(f: DensityGrid, dt: Optional[float] = None) -> float:
    """|dH/dt + I| / I at t = 0 along the heat flow, by a second-order one-sided difference."""
    if dt is None:
        var = max(f.moment(2) / f.mass - float(np.sum(f.mean() ** 2)), 1e-12) / f.dim
        dt = 1e-3 * var / 2.0
    f1 = heat_evolve(f, dt)
    f2 = heat_evolve(f1, dt)
    dH = (-3.0 * entropy(f) + 4.0 * entropy(f1) - entropy(f2)) / (2.0 * dt)
    I = fisher_information(f)
    return abs(dH + I) / I


def fit_decay_rate(times, values) -> float:
    """Least-squares slope of -log(values) against time."""
    t = np.asarray(times, dtype=float)
    y = np.log(np.asarray(values, dtype=float))
    A = np.vstack([t, np.ones_like(t)]).T
    slope, _ = np.linalg.lstsq(A, y, rcond=None)[0]
    return float(-slope)


def fokker_planck_rate(f: DensityGrid, t0: float = 2.0, t1: float = 5.0, samples: int = 13) -> float:
    """Fitted exponential decay rate of H(f(t) | unit Gaussian) along the Fokker-Planck flow."""
    ref = GaussianSpec(f.dim)
    times = np.linspace(t0, t1, samples)
    cur = fokker_planck_evolve(f, t0)
    vals = [relative_entropy(cur, ref)]
    for a, b in zip(times[:-1], times[1:]):
        cur = fokker_planck_evolve(cur, b - a)
        vals.append(relative_entropy(cur, ref))
    return fit_decay_rate(times, vals)


def time_series(f: DensityGrid, flow: str, times: Sequence[float]):
    """Rows (t, H, I, mass, energy) along the heat or Fokker-Planck flow."""
    step = {"heat": heat_evolve, "fokker-planck": fokker_planck_evolve}.get(flow)
    if step is None:
        raise InfoError("bad-flow", f"unknown flow {flow!r}")
    rows, cur, last = [], f, 0.0
    for t in times:
        cur = step(cur, t - last)
        last = t
        rows.append((float(t), entropy(cur), fisher_information(cur), cur.mass, cur.energy()))
    return rows


def write_series_csv(path: str, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "H", "I", "mass", "energy"])
        w.writerows(rows)
