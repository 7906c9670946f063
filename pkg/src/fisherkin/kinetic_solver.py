"""Desk-scale kinetic flows and Fisher-information dissipation diagnostics.

* 2D spatially homogeneous Boltzmann: strong-form quadrature over
  (v_*, sigma) with log-spline interpolation at post-collisional points and an
  exact moment projection.
* Isotropic 3D Landau: conservative radial flux in entropic form
  J = f [A (log f)'(r) - r int K(r, rho) f (log f)'(rho) / rho drho].
* Linear flows on the sphere through spectral multipliers.
* The decomposition -I'(f) Q(f, f) = (I) + (II)_1 + (II)_2 + (II)_3 + (III),
  its grazing limits, and the Landau dissipation functionals.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from math import pi
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial.hermite import hermgauss
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline
from scipy.ndimage import map_coordinates, spline_filter

from .collision_kernels import CollisionKernel, grazing_family, momentum_transfer
from .gamma_calculus import kernel_multiplier, linear_evolve, sphere_fisher
from .info_functionals import DensityGrid, box_grid
from .spectral import AngularKernel, laplace_eigenvalue, sphere_area
from .sphere_ops import SphereFunction

LOG_FLOOR = 1e-300
H_TOL = 1e-8
DRIFT_TOL = 1e-6
LEAK_TOL = 1e-4


class KineticError(ValueError):
    """Raised for unsupported requests and invariant breaches.

    ``snapshot`` carries the state (or diagnostics) at the point of failure.
    """

    def __init__(self, code: str, message: str = "", snapshot=None):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
        self.snapshot = snapshot


class MonotonicityWarning(UserWarning):
    """I increased by more than the step's estimated discretization error."""


# ---------------------------------------------------------------------------
# Finite differences


def _d1_axis(a: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Fourth-order first derivative along ``axis`` (one-sided near the ends)."""
    a = np.moveaxis(a, axis, 0)
    out = np.empty_like(a)
    out[2:-2] = (a[:-4] - 8 * a[1:-3] + 8 * a[3:-1] - a[4:]) / (12 * h)
    for i in (0, 1):
        s = a[i:i + 5]
        c = [(-25, 48, -36, 16, -3), (-3, -10, 18, -6, 1)][i]
        out[i] = sum(cj * sj for cj, sj in zip(c, s)) / (12 * h)
        t = a[len(a) - 5 - i:len(a) - i][::-1]
        out[len(a) - 1 - i] = -sum(cj * tj for cj, tj in zip(c, t)) / (12 * h)
    return np.moveaxis(out, 0, axis)


def _safe_log(values: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(values, LOG_FLOOR))


def grid_fisher(values: np.ndarray, spacing) -> float:
    """I(f) = int f |grad log f|^2 with fourth-order differences of log f.

    Exact on sampled Gaussians, whose logarithm is quadratic.
    """
    lf = _safe_log(values)
    h = np.broadcast_to(np.asarray(spacing, dtype=float), (values.ndim,))
    tot = sum(_d1_axis(lf, h[a], a) ** 2 for a in range(values.ndim))
    return float(np.sum(np.where(values > 0, values, 0.0) * tot) * np.prod(h))


def grid_entropy(values: np.ndarray, spacing) -> float:
    h = np.broadcast_to(np.asarray(spacing, dtype=float), (values.ndim,))
    pos = values > LOG_FLOOR
    return float(np.sum(values[pos] * np.log(values[pos])) * np.prod(h))


# ---------------------------------------------------------------------------
# Initial data


PRESETS = ("bimodal", "squashed-gaussian", "indicator-smoothed")


def _gauss2(X, Y, mx, my, vx, vy):
    return np.exp(-(X - mx) ** 2 / (2 * vx) - (Y - my) ** 2 / (2 * vy)) / (2 * pi * np.sqrt(vx * vy))


def preset_grid(name: str, n: int = 32, R: float = 6.0) -> DensityGrid:
    """Unit-mass, zero-mean, unit-temperature 2D densities (int |v|^2 f = 2).

    ``bimodal``: Gaussians of variance 1/2 centred at (+-1, 0);
    ``squashed-gaussian``: covariance diag(1.8, 0.2);
    ``indicator-smoothed``: Fermi-smoothed disk, rescaled to unit temperature.
    """
    g = box_grid(2, n, R)
    X, Y = g.mesh()
    if name == "bimodal":
        vals = 0.5 * _gauss2(X, Y, -1.0, 0.0, 0.5, 0.5) + 0.5 * _gauss2(X, Y, 1.0, 0.0, 0.5, 0.5)
    elif name == "squashed-gaussian":
        vals = _gauss2(X, Y, 0.0, 0.0, 1.8, 0.2)
    elif name == "indicator-smoothed":
        vals = _fermi_profile(np.hypot(X, Y), 2, 2.0)
    else:
        raise KineticError("bad-preset", f"unknown preset {name!r}; choose from {PRESETS}")
    vals = vals / (vals.sum() * g.cell_volume)
    return g.with_values(vals)


def _fermi_profile(r, d: int, target_energy: float, width: float = 0.1):
    """Smoothed indicator of a ball, scaled so that int |v|^2 f = target_energy.

    For a unit ball with edge width ``width`` the energy is computed by
    quadrature and the radius rescaled.
    """
    rr = np.linspace(0.0, 3.0, 6001)
    shape = lambda x, a: 1.0 / (1.0 + np.exp(np.clip((x - a) / (width * a), -700, 700)))
    m = np.trapezoid(shape(rr, 1.0) * rr ** (d - 1), rr)
    e = np.trapezoid(shape(rr, 1.0) * rr ** (d + 1), rr)
    a = np.sqrt(target_energy * m / e)
    return shape(r, a)


# ---------------------------------------------------------------------------
# 2D Boltzmann


def _check_boltzmann_kernel(kernel: CollisionKernel) -> None:
    if kernel.dim != 2:
        raise KineticError("bad-dim", "boltzmann_collide_2d needs a kernel in dimension 2")
    if not kernel.is_product:
        raise KineticError("unsupported-kernel", "only |z|^gamma b(theta) kernels are supported in 2D")
    order = kernel.singular_order
    lo, _ = kernel.support
    if order is not None and order > 0 and lo <= 0.0:
        raise KineticError("needs-cutoff", f"angular order {order} > 0 requires theta_min > 0")
    gamma = _kernel_gamma(kernel)
    if gamma <= -2.0:
        raise KineticError("unsupported-kernel", "direct quadrature needs gamma > -2")


def _kernel_gamma(kernel: CollisionKernel) -> float:
    return float(kernel.base.gamma if kernel.family == "grazing" else kernel.gamma)


def _angular_rule(kernel: CollisionKernel, n_angle: int):
    """Deviation angles theta_j in [0, pi] and weights w_j with
    sum_j w_j g(theta_j) ~ int_0^pi g b(theta) sin^{d-2} dtheta at |z| = 1."""
    sec = kernel.section(1.0)
    lo, hi = kernel.support
    bounded = sec.kind == "density" and (sec.order is None or sec.order < 0)
    if bounded and lo == 0.0 and hi >= pi:
        th = (np.arange(n_angle) + 0.5) * pi / n_angle
        w = sec(th) * np.sin(th) ** (kernel.dim - 2) * pi / n_angle
        return th, w
    return sec.theta_measure(max(2, n_angle // 4))


def _signed_angles_2d(th, w):
    """Full-circle signed angles with weights (both orientations of sigma)."""
    th = np.asarray(th, dtype=float)
    return np.concatenate([th, -th]), np.concatenate([w, w])


class _LogSpline:
    """Cubic B-spline of log f on a cell-centred grid; zero outside the box."""

    def __init__(self, f: DensityGrid, values: Optional[np.ndarray] = None):
        vals = f.values if values is None else values
        self.origin = f.origin
        self.h = f.spacing
        self.shape = np.array(f.shape)
        self.coef = spline_filter(_safe_log(vals), order=3, mode="mirror")
        self.lo = f.origin - 0.5 * f.spacing
        self.hi = f.origin + (self.shape - 0.5) * f.spacing

    def inside(self, x: np.ndarray) -> np.ndarray:
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def __call__(self, x: np.ndarray, coef: Optional[np.ndarray] = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        shp = x.shape[:-1]
        idx = ((x.reshape(-1, x.shape[-1]) - self.origin) / self.h).T
        out = map_coordinates(self.coef if coef is None else coef, idx, order=3, mode="mirror",
                              prefilter=False)
        return out.reshape(shp)


def _hermite_nodes(n: int, mean, temperature: float, dim: int):
    """Tensor Gauss-Hermite nodes y and weights W with sum W g(y) ~ int g dy
    for g of Gaussian decay centred at ``mean`` with the given temperature."""
    x, w = hermgauss(n)
    s = np.sqrt(2.0 * temperature)
    w1 = s * w * np.exp(x * x)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    wg = np.meshgrid(*([w1] * dim), indexing="ij")
    y = np.stack([np.asarray(mean, dtype=float)[a] + s * grids[a].ravel() for a in range(dim)], axis=1)
    W = np.prod([g.ravel() for g in wg], axis=0)
    return y, W


def _moments_2d(values: np.ndarray, X, Y, dv: float):
    return np.array([values.sum(), (values * X).sum(), (values * Y).sum(),
                     (values * (X * X + Y * Y)).sum()]) * dv


def _project_conservative(Q: np.ndarray, f: np.ndarray, basis: Sequence[np.ndarray]) -> np.ndarray:
    """Remove from Q the f-weighted combination of ``basis`` carrying its moments.

    Solves for c with sum (Q - f sum_k c_k phi_k) phi_l = 0 for every l.
    """
    fw = np.maximum(f, 0.0)
    G = np.array([[np.sum(fw * a * b) for b in basis] for a in basis])
    rhs = np.array([np.sum(Q * a) for a in basis])
    c = np.linalg.solve(G, rhs)
    return Q - fw * sum(ck * phi for ck, phi in zip(c, basis))


class BoltzmannOperator:
    """Q(f, f) on a fixed 2D grid for a product kernel.

    The gain term is evaluated in strong form,
    Q^+(v) = sum_j W_j sum_m w_m |z|^gamma f(v') f(v'_*),
    with v_* on Gauss-Hermite nodes matched to the state's mean and
    temperature and f(v') from a cubic spline of log f.  The result is
    projected so that mass, momentum and energy moments vanish exactly.
    """

    def __init__(self, grid: DensityGrid, kernel: CollisionKernel, mean=(0.0, 0.0), temperature: float = 1.0,
                 n_hermite: int = 12, n_angle: int = 16, chunk: int = 2_000_000):
        _check_boltzmann_kernel(kernel)
        if grid.dim != 2:
            raise KineticError("bad-dim", "Boltzmann grids are two-dimensional")
        self.grid = grid
        self.kernel = kernel
        self.gamma = _kernel_gamma(kernel)
        th, w = _angular_rule(kernel, n_angle)
        self.alpha, self.walpha = _signed_angles_2d(th, w)
        # sigma -> -sigma swaps v' and v'_*: fold the gain sum onto [0, pi)
        self.total_rate = float(np.sum(self.walpha))
        fold, inv = np.unique(np.round(np.mod(self.alpha, pi), 14), return_inverse=True)
        self.fold = fold
        self.wfold = np.bincount(inv.ravel(), weights=self.walpha, minlength=len(fold))
        self.y, self.W = _hermite_nodes(n_hermite, mean, temperature, 2)
        X, Y = grid.mesh()
        self.X, self.Y = X, Y
        self.v = np.stack([X.ravel(), Y.ravel()], axis=1)
        self.basis = [np.ones_like(X), X, Y, X * X + Y * Y]
        self.chunk = chunk
        self.leakage = 0.0

    def collision_frequency(self, values: np.ndarray) -> float:
        """max_v sum_* W f_* |z|^gamma int b: the loss rate bound."""
        spl = _LogSpline(self.grid, values)
        fy = np.where(spl.inside(self.y), np.exp(spl(self.y)), 0.0)
        z = np.linalg.norm(self.v[:, None, :] - self.y[None, :, :], axis=-1)
        rate = (np.maximum(z, 1e-300) ** self.gamma) @ (self.W * fy) * self.total_rate
        return float(rate.max())

    def __call__(self, values: np.ndarray, project: bool = True) -> np.ndarray:
        spl = _LogSpline(self.grid, values)
        fy = np.where(spl.inside(self.y), np.exp(spl(self.y)), 0.0)
        Wf = self.W * fy
        nv, ny, na = len(self.v), len(self.y), len(self.fold)
        step = max(1, self.chunk // (ny * na))
        gain = np.empty(nv)
        loss = np.empty(nv)
        cosa, sina = np.cos(self.fold), np.sin(self.fold)
        lost, total = 0.0, 0.0
        for s in range(0, nv, step):
            v = self.v[s:s + step]
            z = v[:, None, :] - self.y[None, :, :]
            r = np.linalg.norm(z, axis=-1)
            rs = np.maximum(r, 1e-300)
            k = z / rs[..., None]
            kp = np.stack([-k[..., 1], k[..., 0]], axis=-1)
            mid = 0.5 * (v[:, None, :] + self.y[None, :, :])
            sig = cosa[:, None] * k[:, :, None, :] + sina[:, None] * kp[:, :, None, :]
            half = 0.5 * r[..., None, None] * sig
            p1 = mid[:, :, None, :] + half
            p2 = mid[:, :, None, :] - half
            ok = spl.inside(p1) & spl.inside(p2)
            lg = np.where(ok, spl(p1) + spl(p2), -np.inf)
            kern = rs ** self.gamma if self.gamma != 0 else np.ones_like(r)
            g = np.exp(lg) @ self.wfold
            gain[s:s + step] = (g * kern) @ self.W
            lw = (kern * Wf) * self.total_rate
            loss[s:s + step] = lw.sum(axis=1)
            # leakage: gain weight of pairs whose post-collisional points leave the box
            fv = values.ravel()[s:s + step]
            pw = (fv[:, None] * kern)[..., None] * self.wfold * (self.W * fy)[None, :, None]
            lost += float(np.sum(np.where(ok, 0.0, pw)))
            total += float(np.sum(pw))
        self.leakage = lost / total if total > 0 else 0.0
        Q = gain.reshape(self.grid.shape) - values * loss.reshape(self.grid.shape)
        if project:
            Q = _project_conservative(Q, values, self.basis)
        return Q


def _state_moments(f: DensityGrid):
    X, Y = f.mesh()
    m = _moments_2d(f.values, X, Y, f.cell_volume)
    mean = m[1:3] / m[0]
    temperature = (m[3] / m[0] - mean @ mean) / 2.0
    return m, mean, temperature


def boltzmann_collide_2d(f: DensityGrid, kernel: CollisionKernel, n_hermite: int = 12,
                         n_angle: int = 16, project: bool = True) -> DensityGrid:
    """Q(f, f) on the grid of ``f`` (see :class:`BoltzmannOperator`).

    The returned grid may hold negative values, so it is a plain array
    wrapped in a lightweight :class:`CollisionResult`.
    """
    _, mean, temp = _state_moments(f)
    op = BoltzmannOperator(f, kernel, mean, temp, n_hermite, n_angle)
    return CollisionResult(op(f.values, project=project), f.origin, f.spacing, op.leakage)


@dataclass
class CollisionResult:
    """Signed collision increment on a grid."""

    values: np.ndarray
    origin: np.ndarray
    spacing: np.ndarray
    leakage: float = 0.0

    def moments(self):
        X, Y = np.meshgrid(*[o + h * np.arange(n) for o, h, n in zip(self.origin, self.spacing, self.values.shape)],
                           indexing="ij")
        return _moments_2d(self.values, X, Y, float(np.prod(self.spacing)))


@dataclass
class BoltzmannState:
    """2D spatially homogeneous Boltzmann state."""

    f: DensityGrid
    kernel: CollisionKernel
    t: float = 0.0
    conserved: tuple = ()

    def __post_init__(self):
        if self.f.dim != 2:
            raise KineticError("bad-dim", "BoltzmannState holds a 2D density")
        _check_boltzmann_kernel(self.kernel)
        if not self.conserved:
            m, _, _ = _state_moments(self.f)
            self.conserved = (float(m[0]), (float(m[1]), float(m[2])), float(m[3]))

    @classmethod
    def preset(cls, name: str, kernel: CollisionKernel, n: int = 32, R: float = 6.0) -> "BoltzmannState":
        return cls(preset_grid(name, n, R), kernel)


# ---------------------------------------------------------------------------
# Isotropic 3D Landau


def _landau_kernel_mu(r, rho, gamma: float):
    """I_A(r, rho) = int_{-1}^1 |z|^gamma (1 - mu^2) dmu, |z|^2 = r^2 + rho^2 - 2 r rho mu.

    Closed form in u = |z|^2 (polynomial times u^{gamma/2}).
    """
    r, rho = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(rho, dtype=float))
    p = gamma / 2.0
    d1, d2 = (r - rho) ** 2, (r + rho) ** 2
    s, c = r * r + rho * rho, 2.0 * r * rho

    def P(k):
        e = p + k + 1.0
        if abs(e) < 1e-12:
            return np.log(d2 / d1)
        return (d2 ** e - d1 ** e) / e

    return (-d1 * d2 * P(0) + 2.0 * s * P(1) - P(2)) / c ** 3


def landau_kernel_A(r, rho, gamma: float):
    """K(r, rho) = rho^2 int_{S^2} e.a(r e - rho w) e dw with a = |z|^{gamma+2} Pi_{z perp}.

    A(r) = int K(r, rho) f(rho) drho is the radial-radial entry of a * f.
    """
    return 2.0 * pi * np.asarray(rho, dtype=float) ** 4 * _landau_kernel_mu(r, rho, gamma)


def landau_kernel_B(r, rho, gamma: float):
    """rho^2 int_{S^2} e.(div a)(r e - rho w) dw, with div a = -2 Psi z/|z|^2 in 3D."""
    r, rho = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(rho, dtype=float))
    p = gamma / 2.0
    d1, d2 = (r - rho) ** 2, (r + rho) ** 2
    c = 2.0 * r * rho

    def P(k):
        e = p + k + 1.0
        if abs(e) < 1e-12:
            return np.log(d2 / d1)
        return (d2 ** e - d1 ** e) / e

    IB = ((r * r - rho * rho) * P(0) + P(1)) / (2.0 * r * c)
    return -4.0 * pi * rho ** 2 * IB


def _radial_weights(eval_r: np.ndarray, edges: np.ndarray, gamma: float, n_gauss: int = 12) -> np.ndarray:
    """W[i, c] = int_{cell c} K(eval_r[i], rho) drho by Gauss-Legendre, splitting
    any cell that contains eval_r[i]."""
    x, w = leggauss(n_gauss)
    W = np.zeros((len(eval_r), len(edges) - 1))
    for c in range(len(edges) - 1):
        a, b = edges[c], edges[c + 1]
        rho = 0.5 * (b - a) * x + 0.5 * (a + b)
        W[:, c] = landau_kernel_A(eval_r[:, None], rho[None, :], gamma) @ (0.5 * (b - a) * w)
        inside = np.nonzero((eval_r > a) & (eval_r < b))[0]
        for i in inside:
            tot = 0.0
            for lo, hi in ((a, eval_r[i]), (eval_r[i], b)):
                rr = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
                tot += landau_kernel_A(eval_r[i], rr, gamma) @ (0.5 * (hi - lo) * w)
            W[i, c] = tot
    return W


class RadialGrid:
    """Cell-centred radial mesh on [0, R] with exact shell volumes."""

    def __init__(self, n: int, R: float):
        if n < 8:
            raise KineticError("bad-grid", "radial grids need at least 8 cells")
        self.n, self.R = int(n), float(R)
        self.h = R / n
        self.edges = self.h * np.arange(n + 1)
        self.r = 0.5 * (self.edges[:-1] + self.edges[1:])
        self.volume = 4.0 * pi * (self.edges[1:] ** 3 - self.edges[:-1] ** 3) / 3.0
        self.energy_weight = 4.0 * pi * (self.edges[1:] ** 5 - self.edges[:-1] ** 5) / 5.0
        self.area = 4.0 * pi * self.edges ** 2

    def moment(self, f: np.ndarray, s: float) -> float:
        if s == 2:
            return float(np.sum(f * self.energy_weight))
        return float(np.sum(f * self.r ** s * self.volume))


def preset_radial(name: str, n: int = 96, R: float = 6.0):
    """Unit-mass, unit-temperature radial densities on R^3 (int |v|^2 f = 3).

    ``indicator-smoothed``: Fermi-smoothed ball plus a 1e-10 Maxwellian floor;
    ``squashed-gaussian``: exp(-(r/a)^4) (flattened top);
    ``bimodal``: equal-weight Maxwellians of temperatures 0.4 and 1.6.
    """
    g = RadialGrid(n, R)
    r = g.r
    maxw = lambda T: np.exp(-r * r / (2 * T)) / (2 * pi * T) ** 1.5
    if name == "indicator-smoothed":
        vals = _fermi_profile(r, 3, 3.0)
        vals = vals / np.sum(vals * g.volume)
        vals = (1 - 1e-10) * vals + 1e-10 * maxw(1.0)
    elif name == "squashed-gaussian":
        a = 1.0
        shape = lambda x, a: np.exp(-(x / a) ** 4)
        rr = np.linspace(0, 4, 4001)
        m = np.trapezoid(shape(rr, 1) * rr ** 2, rr)
        e = np.trapezoid(shape(rr, 1) * rr ** 4, rr)
        a = np.sqrt(3.0 * m / e)
        vals = shape(r, a)
    elif name == "bimodal":
        vals = 0.5 * maxw(0.4) + 0.5 * maxw(1.6)
    else:
        raise KineticError("bad-preset", f"unknown preset {name!r}; choose from {PRESETS}")
    vals = vals / np.sum(vals * g.volume)
    return g, vals


@dataclass
class RadialLandauState:
    """Isotropic Landau state f(|v|) on R^3 with Psi(|z|) = |z|^{gamma+2}."""

    grid: RadialGrid
    f: np.ndarray
    gamma: float
    t: float = 0.0
    conserved: tuple = ()

    def __post_init__(self):
        if self.gamma < -4.0:
            raise KineticError("unsupported", f"gamma = {self.gamma} < -4 is not supported")
        self.f = np.asarray(self.f, dtype=float)
        if self.f.shape != self.grid.r.shape:
            raise KineticError("bad-grid", "profile length differs from the mesh")
        if np.any(self.f < 0):
            raise KineticError("negative-density", f"min value {self.f.min():.3g}")
        if not self.conserved:
            self.conserved = (float(np.sum(self.f * self.grid.volume)), self.grid.moment(self.f, 2))

    @classmethod
    def preset(cls, name: str, gamma: float = -3.0, n: int = 96, R: float = 6.0) -> "RadialLandauState":
        g, vals = preset_radial(name, n, R)
        return cls(g, vals, gamma)


class LandauOperator:
    """Radial Landau operator on a fixed mesh.

    Face fluxes J = f_face [A g_face - r sum_c W[face, c] f_c g_c / rho_c] with
    g = (log f)'; both sums share the weights W, so discrete Maxwellians
    (log f quadratic in r) are exact equilibria.
    """

    def __init__(self, grid: RadialGrid, gamma: float, n_gauss: int = 12):
        if gamma < -4.0:
            raise KineticError("unsupported", f"gamma = {gamma} < -4 is not supported")
        self.grid, self.gamma = grid, float(gamma)
        faces = grid.edges[1:-1]
        self.faces = faces
        self.Wf = _radial_weights(faces, grid.edges, gamma, n_gauss)
        self.basis = [np.ones(grid.n), grid.energy_weight / grid.volume]

    def log_slopes(self, f: np.ndarray):
        g = self.grid
        lf = _safe_log(f)
        gf = np.diff(lf) / g.h
        gc = np.empty_like(lf)
        gc[1:-1] = (lf[2:] - lf[:-2]) / (2 * g.h)
        gc[0] = (lf[1] - lf[0]) / (2 * g.h)  # mirror ghost: log f is even in r
        gc[-1] = (3 * lf[-1] - 4 * lf[-2] + lf[-3]) / (2 * g.h)
        return gf, gc

    def flux(self, f: np.ndarray) -> np.ndarray:
        g = self.grid
        gf, gc = self.log_slopes(f)
        A = self.Wf @ f
        Bterm = self.Wf @ (f * gc / g.r)
        ff = 0.5 * (f[:-1] + f[1:])
        return ff * (A * gf - self.faces * Bterm)

    def __call__(self, f: np.ndarray, project: bool = True) -> np.ndarray:
        g = self.grid
        J = self.flux(f)
        SJ = np.zeros(g.n + 1)
        SJ[1:-1] = g.area[1:-1] * J
        Q = np.diff(SJ) / g.volume
        if project:
            Q = _project_conservative(Q * g.volume, f * g.volume, self.basis) / g.volume
        return Q

    def diffusion_bound(self, f: np.ndarray) -> float:
        A = np.abs(self.Wf @ f)
        return float(self.grid.h ** 2 / (2.0 * max(A.max(), 1e-300)))


def landau_collide_isotropic(state: RadialLandauState, project: bool = True) -> np.ndarray:
    """Q_L(f, f) at the cell centres (divergence form)."""
    return LandauOperator(state.grid, state.gamma)(state.f, project=project)


def newton_potential(grid: RadialGrid, f: np.ndarray) -> np.ndarray:
    """(1/|z|) * f at the cell centres for radial f (shell theorem)."""
    r = grid.r
    inner = np.cumsum(f * grid.volume) - 0.5 * f * grid.volume
    shell = f * grid.volume / r
    outer = np.cumsum(shell[::-1])[::-1] - 0.5 * shell
    return inner / r + outer


def landau_coulomb_nondivergence(state: RadialLandauState) -> np.ndarray:
    """a_bar : grad^2 f + 8 pi f^2 for gamma = -3, at the cell centres.

    a_bar = A e(x)e + A_perp Pi_{e perp} with A_perp = (1/|z|) * f - A/2
    (trace of a is 2 Psi); grad^2 f = f'' e(x)e + (f'/r) Pi_{e perp}.
    """
    if state.gamma != -3.0:
        raise KineticError("bad-gamma", "the non-divergence form is specific to gamma = -3")
    g = state.grid
    f = state.f
    A = _radial_weights(g.r, g.edges, -3.0) @ f
    phi = newton_potential(g, f)
    Aperp = phi - 0.5 * A
    fe = np.concatenate([f[::-1], f])
    re = np.concatenate([-g.r[::-1], g.r])
    cs = CubicSpline(re, fe)
    d1 = cs(g.r, 1)
    d2 = cs(g.r, 2)
    return A * d2 + 2.0 * Aperp * d1 / g.r + 8.0 * pi * f * f


# ---------------------------------------------------------------------------
# Time stepping


@dataclass
class StepPolicy:
    """Explicit RK4 with step doubling.

    dt <= safety * (stability bound); the step is also shrunk until the
    step-doubling estimate |I(full) - I(two halves)| is below ``i_tol``.
    ``scheme='euler'`` switches to forward Euler with the same controller.
    """

    scheme: str = "rk4"
    safety: float = 0.25
    i_tol: float = 2e-7
    record_every: int = 1
    dt_max: Optional[float] = None


SERIES_COLUMNS = ("t", "H", "I", "mass", "px", "py", "energy", "M4", "M6", "L2", "minf", "leakage",
                  "err_budget")


@dataclass
class TimeSeries:
    """Diagnostics along a run; ``rows`` follow :data:`SERIES_COLUMNS`.

    ``lp`` holds the L^p norm with p = d/(d-2) at each row (the sup norm in 2D).
    """

    rows: list = field(default_factory=list)
    lp: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    final_state: object = None

    def column(self, name: str) -> np.ndarray:
        i = SERIES_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows])

    def write_csv(self, path: str, header: Sequence[str] = ()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(SERIES_COLUMNS)
            w.writerows(self.rows)


class _BoltzmannFlow:
    def __init__(self, state: BoltzmannState, n_hermite: int, n_angle: int):
        f = state.f
        _, mean, temp = _state_moments(f)
        self.state = state
        self.op = BoltzmannOperator(f, state.kernel, mean, temp, n_hermite, n_angle)
        self.h = f.spacing
        self.dv = f.cell_volume
        self.dim = 2
        X, Y = f.mesh()
        self.X, self.Y = X, Y
        self.r2 = X * X + Y * Y

    def rhs(self, y):
        return self.op(y)

    def bound(self, y):
        return 1.0 / self.op.collision_frequency(y)

    def H(self, y):
        return grid_entropy(y, self.h)

    def I(self, y):
        return grid_fisher(y, self.h)

    def diagnostics(self, y):
        m = _moments_2d(y, self.X, self.Y, self.dv)
        yp = np.maximum(y, 0.0)
        M4 = float(np.sum(yp * self.r2 ** 2) * self.dv)
        M6 = float(np.sum(yp * self.r2 ** 3) * self.dv)
        L2 = float(np.sqrt(np.sum(yp ** 2) * self.dv))
        # p = d/(d-2) is infinite in 2D: report the sup norm
        return m[0], m[1], m[2], m[3], M4, M6, L2, float(y.max()), float(y.min()), self.op.leakage

    def conserved(self, y):
        m = _moments_2d(y, self.X, self.Y, self.dv)
        return m[0], m[3]


class _LandauFlow:
    def __init__(self, state: RadialLandauState):
        self.state = state
        self.grid = state.grid
        self.op = LandauOperator(state.grid, state.gamma)
        self.dim = 3

    def rhs(self, y):
        return self.op(y)

    def bound(self, y):
        return self.op.diffusion_bound(y)

    def H(self, y):
        pos = y > LOG_FLOOR
        return float(np.sum(y[pos] * np.log(y[pos]) * self.grid.volume[pos]))

    def I(self, y):
        return radial_fisher(self.grid, y)

    def diagnostics(self, y):
        g = self.grid
        yp = np.maximum(y, 0.0)
        mass = float(np.sum(y * g.volume))
        energy = g.moment(y, 2)
        M4 = g.moment(yp, 4)
        M6 = g.moment(yp, 6)
        L2 = float(np.sqrt(np.sum(yp ** 2 * g.volume)))
        L3 = float(np.sum(yp ** 3 * g.volume) ** (1.0 / 3.0))
        return mass, 0.0, 0.0, energy, M4, M6, L2, L3, float(y.min()), 0.0

    def conserved(self, y):
        return float(np.sum(y * self.grid.volume)), self.grid.moment(y, 2)


def radial_fisher(grid: RadialGrid, f: np.ndarray) -> float:
    """I(f) = 4 int |grad sqrt f|^2 with face differences of sqrt f."""
    s = np.sqrt(np.maximum(f, 0.0))
    ds = np.diff(s) / grid.h
    return float(4.0 * np.sum(grid.area[1:-1] * ds ** 2) * grid.h)


def _rk4(rhs, y, dt, k1=None):
    k1 = rhs(y) if k1 is None else k1
    k2 = rhs(y + 0.5 * dt * k1)
    k3 = rhs(y + 0.5 * dt * k2)
    k4 = rhs(y + dt * k3)
    return y + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


def _euler(rhs, y, dt, k1=None):
    return y + dt * (rhs(y) if k1 is None else k1)


def simulate(state, T: float, dt_policy: Optional[StepPolicy] = None, n_hermite: int = 12,
             n_angle: int = 16, strict: bool = True) -> TimeSeries:
    """Run a Boltzmann (2D) or radial Landau flow up to time T.

    Each accepted step asserts H(t+dt) <= H(t) + 1e-8 and mass/energy drift
    below 1e-6 relative per unit time (``KineticError('invariant-breach')``
    with the state as snapshot).  An I increase larger than the step's
    error budget is a soft failure: warned and listed in ``violations``.
    """
    pol = dt_policy or StepPolicy()
    if isinstance(state, BoltzmannState):
        flow = _BoltzmannFlow(state, n_hermite, n_angle)
        y = state.f.values.copy()
    elif isinstance(state, RadialLandauState):
        flow = _LandauFlow(state)
        y = state.f.copy()
    else:
        raise KineticError("bad-state", f"cannot simulate {type(state).__name__}")
    stepper = {"rk4": _rk4, "euler": _euler}.get(pol.scheme)
    if stepper is None:
        raise KineticError("bad-policy", f"unknown scheme {pol.scheme!r}")
    order = 4 if pol.scheme == "rk4" else 1
    m0, e0 = flow.conserved(y)
    t = float(state.t)
    series = TimeSeries()
    H0, I0 = flow.H(y), flow.I(y)

    def record(y, t, H, I, err):
        mass, px, py, energy, M4, M6, L2, Lp, minf, leak = flow.diagnostics(y)
        series.rows.append((t, H, I, mass, px, py, energy, M4, M6, L2, minf, leak, err))
        series.lp.append(Lp)

    record(y, t, H0, I0, 0.0)
    dt_cap = pol.safety * flow.bound(y)
    if pol.dt_max is not None:
        dt_cap = min(dt_cap, pol.dt_max)
    dt = dt_cap
    nstep = 0
    while t < T - 1e-12:
        dt = min(dt, T - t, dt_cap)
        k1 = flow.rhs(y)
        while True:
            full = stepper(flow.rhs, y, dt, k1)
            halfs = stepper(flow.rhs, stepper(flow.rhs, y, 0.5 * dt, k1), 0.5 * dt)
            I_full, I_half = flow.I(full), flow.I(halfs)
            err = abs(I_full - I_half)
            if err <= pol.i_tol or dt < 1e-12:
                break
            dt *= 0.5
        ynew = halfs
        H1, I1 = flow.H(ynew), I_half
        m1, e1 = flow.conserved(ynew)
        tn = t + dt
        drift = max(abs(m1 - m0) / abs(m0), abs(e1 - e0) / abs(e0))
        if strict and drift > DRIFT_TOL * max(tn, 1.0):
            raise KineticError("invariant-breach", f"conservation drift {drift:.3e} at t={tn:.4g}",
                               snapshot={"t": tn, "f": ynew, "drift": drift})
        if strict and H1 > H0 + H_TOL:
            raise KineticError("invariant-breach", f"H increased by {H1 - H0:.3e} at t={tn:.4g}",
                               snapshot={"t": tn, "f": ynew, "dH": H1 - H0})
        if I1 > I0 + err:
            msg = f"I increased by {I1 - I0:.3e} > budget {err:.3e} at t={tn:.4g}"
            warnings.warn(msg, MonotonicityWarning, stacklevel=2)
            series.violations.append((tn, I1 - I0, err))
        y, t, H0, I0 = ynew, tn, H1, I1
        nstep += 1
        if nstep % pol.record_every == 0 or t >= T - 1e-12:
            record(y, t, H1, I1, err)
        # step-size update from the doubling estimate
        fac = 2.0 if err == 0 else min(2.0, 0.9 * (pol.i_tol / err) ** (1.0 / (order + 1)))
        dt = min(dt_cap, dt * max(fac, 0.5))
    if isinstance(state, BoltzmannState):
        series.final_state = BoltzmannState(state.f.with_values(np.maximum(y, 0.0)), state.kernel, t)
    else:
        series.final_state = RadialLandauState(state.grid, np.maximum(y, 0.0), state.gamma, t)
    return series


# ---------------------------------------------------------------------------
# Fields: log f, xi = -grad log f and A = -grad^2 log f at arbitrary points


class GridField:
    """Spline fields on a 2D grid; derivatives by fourth-order differences."""

    def __init__(self, f: DensityGrid):
        if f.dim != 2:
            raise KineticError("bad-dim", "grid fields are two-dimensional")
        self.f = f
        self.dim = 2
        self.spl = _LogSpline(f)
        lf = _safe_log(f.values)
        h = f.spacing
        xi = [-_d1_axis(lf, h[a], a) for a in range(2)]
        self.xi_coef = [spline_filter(x, order=3, mode="mirror") for x in xi]
        self.A_coef = [[spline_filter(_d1_axis(xi[a], h[b], b), order=3, mode="mirror") for b in range(2)]
                       for a in range(2)]

    def inside(self, x):
        return self.spl.inside(x)

    def logf(self, x):
        return self.spl(x)

    def xi(self, x):
        return np.stack([self.spl(x, c) for c in self.xi_coef], axis=-1)

    def hess(self, x):
        A = np.stack([np.stack([self.spl(x, self.A_coef[a][b]) for b in range(2)], axis=-1) for a in range(2)],
                     axis=-2)
        return 0.5 * (A + np.swapaxes(A, -1, -2))


class _RadialField:
    """Radial field from g(r) = log f(r) and its first two derivatives."""

    dim = 3

    def __init__(self, g: Callable, dg: Callable, d2g: Callable, R: float):
        self.g, self.dg, self.d2g, self.R = g, dg, d2g, R

    def inside(self, x):
        return np.linalg.norm(x, axis=-1) <= self.R

    def logf(self, x):
        return self.g(np.linalg.norm(x, axis=-1))

    def xi(self, x):
        r = np.linalg.norm(x, axis=-1)
        rs = np.maximum(r, 1e-12)
        return -(self.dg(r) / rs)[..., None] * x

    def hess(self, x):
        r = np.linalg.norm(x, axis=-1)
        rs = np.maximum(r, 1e-12)
        e = x / rs[..., None]
        g1 = np.where(r > 1e-8, self.dg(r) / rs, self.d2g(r))
        g2 = self.d2g(r)
        eye = np.eye(x.shape[-1])
        ee = e[..., :, None] * e[..., None, :]
        return -(g2[..., None, None] * ee + g1[..., None, None] * (eye - ee))


def radial_mixture_field(weights, temperatures, R: float = np.inf) -> _RadialField:
    """Exact field of f = sum_k w_k M_{T_k} (centred Maxwellians in R^3)."""
    w = np.asarray(weights, dtype=float)
    T = np.asarray(temperatures, dtype=float)

    def comps(r):
        r = np.asarray(r, dtype=float)[..., None]
        lc = np.log(w) - 1.5 * np.log(2 * pi * T) - r * r / (2 * T)
        top = lc.max(axis=-1, keepdims=True)
        p = np.exp(lc - top)
        s = p.sum(axis=-1, keepdims=True)
        return (top + np.log(s))[..., 0], p / s, r

    def g(r):
        return comps(r)[0]

    def dg(r):
        _, p, rr = comps(r)
        return np.sum(p * (-rr / T), axis=-1)

    def d2g(r):
        _, p, rr = comps(r)
        a = -rr / T
        m1 = np.sum(p * a, axis=-1)
        return np.sum(p * (a * a - 1.0 / T), axis=-1) - m1 * m1

    return _RadialField(g, dg, d2g, R)


def radial_profile_field(grid: RadialGrid, f: np.ndarray) -> _RadialField:
    """Spline field from a radial profile (even extension across r = 0)."""
    lf = _safe_log(f)
    cs = CubicSpline(np.concatenate([-grid.r[::-1], grid.r]), np.concatenate([lf[::-1], lf]))
    return _RadialField(lambda r: cs(r), lambda r: cs(r, 1), lambda r: cs(r, 2), grid.R)


# ---------------------------------------------------------------------------
# Pair quadrature for the dissipation terms


@dataclass
class Pairs:
    """Quadrature nodes (v, v_*) with weights for int int F(v, v_*) dv dv_*."""

    v: np.ndarray
    vs: np.ndarray
    w: np.ndarray


def grid_pairs(f: DensityGrid, n_hermite: int = 12, rel_cut: float = 1e-13) -> Pairs:
    """v on the grid nodes carrying f > rel_cut max f, v_* on Gauss-Hermite nodes."""
    _, mean, temp = _state_moments(f)
    X, Y = f.mesh()
    keep = f.values.ravel() > rel_cut * f.values.max()
    v = np.stack([X.ravel(), Y.ravel()], axis=1)[keep]
    y, W = _hermite_nodes(n_hermite, mean, temp, 2)
    V = np.repeat(v, len(y), axis=0)
    Vs = np.tile(y, (len(v), 1))
    w = np.tile(W, len(v)) * f.cell_volume
    return Pairs(V, Vs, w)


def radial_pairs(R: float, n_r: int = 24, n_s: int = 32, n_mu: int = 16) -> Pairs:
    """v = r e_3 and z = v - v_* in polar form: weights 4 pi r^2 . 2 pi s^2."""
    x, w = leggauss(n_r)
    r = 0.5 * R * (x + 1)
    wr = 0.5 * R * w * 4 * pi * r * r
    xs, ws = leggauss(n_s)
    s = R * (xs + 1)
    wsz = R * ws * s * s
    mu, wmu = leggauss(n_mu)
    Rg, Sg, Mg = np.meshgrid(r, s, mu, indexing="ij")
    W = (wr[:, None, None] * wsz[None, :, None] * (2 * pi * wmu)[None, None, :]).ravel()
    v = np.stack([np.zeros(Rg.size), np.zeros(Rg.size), Rg.ravel()], axis=1)
    om = np.stack([np.sqrt(1 - Mg.ravel() ** 2), np.zeros(Rg.size), Mg.ravel()], axis=1)
    vs = v - Sg.ravel()[:, None] * om
    return Pairs(v, vs, W)


def _perp_frame(k: np.ndarray):
    """Orthonormal vectors spanning k^perp, stacked on a new axis."""
    d = k.shape[-1]
    if d == 2:
        return np.stack([-k[..., 1], k[..., 0]], axis=-1)[..., None, :]
    a = np.where(np.abs(k[..., :1]) < 0.9, np.array([1.0, 0, 0]), np.array([0, 1.0, 0]))
    e1 = a - np.sum(a * k, axis=-1, keepdims=True) * k
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.cross(k, e1)
    return np.stack([e1, e2], axis=-2)


def _sigma_rule(kernel: CollisionKernel, n_theta: int, n_chi: int):
    """Directions phi in S^{d-2}_{k perp} (as cos/sin coefficients) and
    deviation-angle nodes; weights include b(theta) sin^{d-2} and dphi."""
    th, w = _angular_rule(kernel, n_theta)
    d = kernel.dim
    if d == 2:
        coef = np.array([[1.0], [-1.0]])
        wphi = np.array([1.0, 1.0])
    else:
        chi = 2 * pi * (np.arange(n_chi) + 0.5) / n_chi
        coef = np.stack([np.cos(chi), np.sin(chi)], axis=1)
        wphi = np.full(n_chi, 2 * pi / n_chi)
    return th, w, coef, wphi


def _psi_parts(kernel: CollisionKernel):
    """M_1 with M(|z|) = M_1 |z|^gamma for the (base) product kernel."""
    base = kernel.base if kernel.family == "grazing" else kernel
    if not base.is_product:
        raise KineticError("unsupported-kernel", "dissipation terms need a |z|^gamma b(theta) kernel")
    return momentum_transfer(kernel, 1.0), _kernel_gamma(kernel)


@dataclass
class DissipationBreakdown:
    """Terms of -I'(f) Q(f, f); ``sum`` = I + II1 + II2 + II3 + III."""

    term_I: float
    term_II1: float
    term_II2: float
    term_II3: float
    term_III: float
    sum: float
    fd_reference: Optional[float] = None
    term_II2_simplified: Optional[float] = None
    entropy_dissipation: Optional[float] = None
    term_III_direct: Optional[float] = None
    leakage: float = 0.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _pair_terms(field, pairs: Pairs, kernel: CollisionKernel, n_theta: int = 16, n_chi: int = 12,
                chunk: int = 400_000, landau: bool = True) -> dict:
    """Boltzmann terms (I), (II)_1, (II)_2, (II)_3, (III), D_B, (II)_2 by the
    simplified formula, and their grazing (Landau) limits on shared pairs."""
    d = field.dim
    if kernel.dim != d:
        raise KineticError("bad-dim", f"kernel dimension {kernel.dim} differs from the density's {d}")
    M1, gamma = _psi_parts(kernel)
    th, wth, coef, wphi = _sigma_rule(kernel, n_theta, n_chi)
    sec = kernel.section(1.0)
    th2, w2 = sec.theta_measure(32) if sec.kind != "atomic" else (th, wth)
    sphere_s = sphere_area(d - 1) if d > 2 else 2.0
    Sigma1 = float(sphere_s * np.sum(w2 * np.sin(th2) ** 2))
    cos_t, sin_t = np.cos(th), np.sin(th)
    acc = {k: 0.0 for k in ("I", "II1", "II2", "II3", "III", "DB", "II2s", "LI", "LII1", "LII2", "LII3",
                            "LIII", "DL", "DLg", "lost", "total", "III_direct", "LII1_printed", "LIII_printed")}
    nsig = len(th) * len(wphi)
    step = max(1, chunk // nsig)
    eye = np.eye(d)
    for s0 in range(0, len(pairs.w), step):
        V, Vs, W = pairs.v[s0:s0 + step], pairs.vs[s0:s0 + step], pairs.w[s0:s0 + step]
        inV = field.inside(V) & field.inside(Vs)
        lf, lfs = field.logf(V), field.logf(Vs)
        ff = np.where(inV, np.exp(np.where(inV, lf + lfs, -np.inf)), 0.0)
        use = ff > 0
        if not np.any(use):
            continue
        V, Vs, W, ff, lf, lfs = V[use], Vs[use], W[use], ff[use], lf[use], lfs[use]
        z = V - Vs
        r = np.linalg.norm(z, axis=-1)
        ok = r > 1e-12
        V, Vs, W, ff, lf, lfs, z, r = V[ok], Vs[ok], W[ok], ff[ok], lf[ok], lfs[ok], z[ok], r[ok]
        k = z / r[:, None]
        E = _perp_frame(k)  # (P, d-1, d)
        phi = np.einsum("mj,pjd->pmd", coef, E)  # (P, nphi, d)
        sig = cos_t[None, :, None, None] * k[:, None, None, :] + sin_t[None, :, None, None] * phi[:, None, :, :]
        mid = 0.5 * (V + Vs)
        half = 0.5 * r[:, None, None, None] * sig
        p1 = mid[:, None, None, :] + half
        p2 = mid[:, None, None, :] - half
        inside = field.inside(p1) & field.inside(p2)
        xi, xis = field.xi(V), field.xi(Vs)
        X = xi - xis
        S = xi + xis
        x1, x2 = field.xi(p1), field.xi(p2)
        Y = x1 - x2
        Sp = x1 + x2
        delta = field.logf(p1) + field.logf(p2) - (lf + lfs)[:, None, None]
        rg = r ** gamma
        wpair = W * ff
        wsig = wth[:, None] * wphi[None, :]
        wB = (wpair * rg)[:, None, None] * wsig[None]
        wB_in = np.where(inside, wB, 0.0)
        acc["lost"] += float(np.sum(wB) - np.sum(wB_in))
        acc["total"] += float(np.sum(wB))
        ks = cos_t[None, :, None]
        Xb = X[:, None, None, :]
        kb = k[:, None, None, :]
        Xk = np.sum(X * k, axis=-1)[:, None, None]
        Xs = np.sum(Xb * sig, axis=-1)
        PX = ks[..., None] * Xb + Xk[..., None] * sig - Xs[..., None] * kb
        PiX = X - Xk[:, 0, 0, None] * k
        PPiX = ks[..., None] * PiX[:, None, None, :] - np.sum(PiX[:, None, None, :] * sig, axis=-1)[..., None] * kb
        Ys = np.sum(Y * sig, axis=-1)
        PisY = Y - Ys[..., None] * sig
        acc["I"] += 0.25 * float(np.sum(wB_in * np.sum((Sp - S[:, None, None, :]) ** 2, axis=-1)))
        acc["II1"] += 0.25 * float(np.sum(wB_in * np.sum((PisY - PPiX) ** 2, axis=-1)))
        acc["II2"] += 0.25 * float(np.sum(wB * (np.sum(X * X, axis=-1)[:, None, None] - np.sum(PX * PX, axis=-1))))
        acc["II3"] += 0.25 * float(np.sum(wB_in * (Ys - Xk) ** 2))
        em1 = np.where(inside, np.expm1(np.where(inside, delta, 0.0)), 0.0)
        acc["DB"] += 0.25 * float(np.sum(wB_in * em1 * np.where(inside, delta, 0.0)))
        if gamma != 0.0:
            wdB = (wpair * gamma * r ** (gamma - 1.0))[:, None, None] * wsig[None]
            # symmetrised form 1/2 (f'f'_* - f f_*)[k.X - sigma.(xi' - xi'_*)] dB/d|z|: the same
            # integral, without the cancellation across v that the direct form relies on
            acc["III"] += 0.5 * float(np.sum(np.where(inside, wdB, 0.0) * em1 * (Xk - Ys)))
            acc["III_direct"] += float(np.sum(wdB * em1 * Xk))
        pix2 = np.sum(PiX * PiX, axis=-1)
        acc["II2s"] += 0.25 * (d - 2) / (d - 1) * float(np.sum(wpair * Sigma1 * rg * pix2))
        if landau:
            A, As = field.hess(V), field.hess(Vs)
            Psi = r * r * M1 * rg / (4.0 * (d - 1))
            dPsi = (gamma + 2.0) * Psi / r
            Pi = eye - k[:, :, None] * k[:, None, :]
            hs = lambda M: np.sum(np.einsum("pij,pjk->pik", M, Pi) ** 2, axis=(1, 2))
            ApA = A + As
            acc["LI"] += 0.5 * float(np.sum(wpair * Psi * hs(A - As)))
            C = ApA - 2.0 * (Xk[:, 0, 0] / r)[:, None, None] * eye
            PCP = np.einsum("pij,pjk,pkl->pil", Pi, C, Pi)
            # the leading term of Pi_{sigma perp}(xi'-xi'_*) - P Pi_{k perp} X is theta|z|/2 Pi C phi
            acc["LII1"] += 0.5 * float(np.sum(wpair * Psi * np.sum(PCP ** 2, axis=(1, 2))))
            acc["LII1_printed"] += 0.5 * float(np.sum(wpair * Psi * hs(C)))
            acc["LII2"] += 2.0 * (d - 2) * float(np.sum(wpair * Psi / r ** 2 * pix2))
            Zv = np.einsum("pij,pj->pi", ApA, k) + 2.0 * X / r[:, None]
            PiZ = Zv - np.sum(Zv * k, axis=-1)[:, None] * k
            acc["LII3"] += 0.5 * float(np.sum(wpair * Psi * np.sum(PiZ * PiZ, axis=-1)))
            lIII = float(np.sum(wpair * (dPsi - 2.0 * Psi / r) * np.sum(PiX * PiZ, axis=-1)))
            acc["LIII"] += lIII
            acc["LIII_printed"] -= lIII
            acc["DL"] += 0.5 * float(np.sum(wpair * Psi * pix2))
            acc["DLg"] += 0.5 * float(np.sum(wpair * rg * pix2))
    acc["leakage"] = acc["lost"] / acc["total"] if acc["total"] > 0 else 0.0
    return acc


def dissipation_decomposition(f, kernel: CollisionKernel, n_hermite: int = 12, n_theta: int = 16,
                              n_chi: int = 12, fd_eps: Optional[float] = 1e-5, pairs: Optional[Pairs] = None,
                              field=None) -> DissipationBreakdown:
    """Five-term decomposition of -I'(f) Q(f, f).

    ``f`` is a 2D :class:`DensityGrid` (with a finite-difference reference
    -dI/dt from the Boltzmann flow stepped by +-fd_eps) or a radial field for
    d = 3 with explicit ``pairs``.  Leakage above 1e-4 raises ``leakage``.
    """
    if isinstance(f, DensityGrid):
        field = GridField(f)
        pairs = pairs or grid_pairs(f, n_hermite)
    elif field is None:
        field = f
    if pairs is None:
        raise KineticError("bad-input", "radial fields need explicit quadrature pairs")
    acc = _pair_terms(field, pairs, kernel, n_theta, n_chi, landau=False)
    if acc["leakage"] > LEAK_TOL:
        raise KineticError("leakage", f"post-collisional leakage {acc['leakage']:.2e} exceeds {LEAK_TOL:g}")
    total = acc["I"] + acc["II1"] + acc["II2"] + acc["II3"] + acc["III"]
    fd = None
    if isinstance(f, DensityGrid) and fd_eps:
        fd = fd_dissipation(f, kernel, fd_eps, n_hermite)
    return DissipationBreakdown(acc["I"], acc["II1"], acc["II2"], acc["II3"], acc["III"], total, fd,
                                acc["II2s"], acc["DB"], acc["III_direct"], acc["leakage"])


def fd_dissipation(f: DensityGrid, kernel: CollisionKernel, eps: float = 1e-5, n_hermite: int = 12,
                   n_angle: int = 16) -> float:
    """-dI/dt by a centred difference of I along f +- eps Q(f, f)."""
    Q = boltzmann_collide_2d(f, kernel, n_hermite, n_angle).values
    h = f.spacing
    return -(grid_fisher(f.values + eps * Q, h) - grid_fisher(f.values - eps * Q, h)) / (2 * eps)


def landau_dissipations(field, gamma: float, pairs: Pairs):
    """(D_L, D_L^gamma) with Psi(|z|) = |z|^{gamma+2}.

    D_L = 1/2 int int f f_* Psi |Pi_{k perp}(grad log f - grad log f_*)|^2 and
    D_L^gamma the same with |z|^gamma in place of Psi.
    """
    dl = dlg = 0.0
    for s0 in range(0, len(pairs.w), 200_000):
        V, Vs, W = pairs.v[s0:s0 + 200_000], pairs.vs[s0:s0 + 200_000], pairs.w[s0:s0 + 200_000]
        inV = field.inside(V) & field.inside(Vs)
        ff = np.where(inV, np.exp(np.where(inV, field.logf(V) + field.logf(Vs), -np.inf)), 0.0)
        z = V - Vs
        r = np.linalg.norm(z, axis=-1)
        good = (ff > 0) & (r > 1e-12)
        z, r, ff, W = z[good], r[good], ff[good], W[good]
        k = z / r[:, None]
        X = field.xi(V[good]) - field.xi(Vs[good])
        PiX = X - np.sum(X * k, axis=-1)[:, None] * k
        p2 = np.sum(PiX * PiX, axis=-1)
        dl += 0.5 * float(np.sum(W * ff * r ** (gamma + 2.0) * p2))
        dlg += 0.5 * float(np.sum(W * ff * r ** gamma * p2))
    return dl, dlg


def landau_weak_form(field, gamma: float, pairs: Pairs, h_grad: Callable, h_hess: Callable) -> float:
    """int Q_L(f, f) h = int int f f_* Psi (Pi_{k perp} : grad^2 h - 2(d-1) z.grad h/|z|^2)."""
    d = field.dim
    tot = 0.0
    eye = np.eye(d)
    for s0 in range(0, len(pairs.w), 200_000):
        V, Vs, W = pairs.v[s0:s0 + 200_000], pairs.vs[s0:s0 + 200_000], pairs.w[s0:s0 + 200_000]
        inV = field.inside(V) & field.inside(Vs)
        ff = np.where(inV, np.exp(np.where(inV, field.logf(V) + field.logf(Vs), -np.inf)), 0.0)
        z = V - Vs
        r = np.linalg.norm(z, axis=-1)
        good = (ff > 0) & (r > 1e-12)
        V, z, r, ff, W = V[good], z[good], r[good], ff[good], W[good]
        k = z / r[:, None]
        Pi = eye - k[:, :, None] * k[:, None, :]
        term = np.sum(Pi * h_hess(V), axis=(1, 2)) - 2.0 * (d - 1) * np.sum(z * h_grad(V), axis=-1) / r ** 2
        tot += float(np.sum(W * ff * r ** (gamma + 2.0) * term))
    return tot


def agc_dissipation_terms(field, kernel: CollisionKernel, pairs: Pairs, ns: Sequence[int] = (10, 100, 1000),
                          n_theta: int = 16, n_chi: int = 12) -> list:
    """Boltzmann terms under grazing_family(kernel, n) against their Landau limits.

    Returns one dict per n with the Boltzmann values, the limits and the
    relative gaps |B - L| / |L| (absolute gap when the limit vanishes).
    The (II)_1 limit is 1/2 Psi ||Pi C Pi||^2_HS with
    C = (A + A_*) - 2 k.(xi - xi_*)/|z| I, and the (III) limit is
    + (Psi' - 2 Psi/|z|) <Pi X, Pi((A + A_*)k + 2X/|z|)>; the variants
    ||C Pi||^2_HS and the opposite sign are reported as ``limit_*_printed``.
    """
    rows = []
    names = [("I", "LI"), ("II1", "LII1"), ("II2", "LII2"), ("II3", "LII3"), ("III", "LIII"), ("DB", "DL")]
    for n in ns:
        kn = grazing_family(kernel, int(n))
        acc = _pair_terms(field, pairs, kn, n_theta, n_chi, landau=True)
        if acc["leakage"] > LEAK_TOL:
            raise KineticError("leakage", f"post-collisional leakage {acc['leakage']:.2e} at n={n}")
        row = {"n": int(n), "leakage": acc["leakage"]}
        for b, l in names:
            row[b] = acc[b]
            row["limit_" + b] = acc[l]
            scale = abs(acc[l])
            row["gap_" + b] = abs(acc[b] - acc[l]) / scale if scale > 1e-14 else abs(acc[b] - acc[l])
        row["II2_simplified"] = acc["II2s"]
        row["III_direct"] = acc["III_direct"]
        row["limit_II1_printed"] = acc["LII1_printed"]
        row["limit_III_printed"] = acc["LIII_printed"]
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Tensorisation cross-check


def fisher_first_variation(values: np.ndarray, spacing) -> np.ndarray:
    """w with I'(f) g = int g w, w = -|grad log f|^2 - 2 Laplacian log f.

    Follows from I'(f) g = int g |grad log f|^2 + 2 int f grad log f . grad(g/f)
    after integration by parts, using Delta f / f = Delta log f + |grad log f|^2.
    """
    lf = _safe_log(values)
    h = np.broadcast_to(np.asarray(spacing, dtype=float), (values.ndim,))
    w = np.zeros_like(lf)
    for a in range(values.ndim):
        d1 = _d1_axis(lf, h[a], a)
        w -= d1 * d1 + 2.0 * _d1_axis(d1, h[a], a)
    return w


def doubling_check(f: DensityGrid, kernel: CollisionKernel, n_angle: int = 16, n_hermite: int = 12) -> tuple:
    """(I'(f) Q(f,f), 1/2 I'(f (x) f) B(f (x) f)) for a 2D base density.

    The left side uses the Gauss-Hermite collision operator on the base grid;
    the right side lives on the 4D tensor grid, with
    B F(V) = int [F(V') - F(V)] B dsigma and F(V') = f(v') f(v'_*) from the log
    spline.  Both pair I' with its first variation (see
    :func:`fisher_first_variation`).  In dimension 1, sigma = +-k makes B(f (x) f)
    vanish identically, so the base density is two-dimensional.
    """
    if f.dim != 2:
        raise KineticError("bad-dim", "the tensor check uses a 2D base density")
    _check_boltzmann_kernel(kernel)
    h = f.spacing
    Q = boltzmann_collide_2d(f, kernel, n_hermite, n_angle, project=False).values
    lhs = float(np.sum(Q * fisher_first_variation(f.values, h)) * f.cell_volume)
    spl = _LogSpline(f)
    gamma = _kernel_gamma(kernel)
    th, w = _angular_rule(kernel, n_angle)
    alpha, walpha = _signed_angles_2d(th, w)
    X, Y = f.mesh()
    v = np.stack([X.ravel(), Y.ravel()], axis=1)
    fv = f.values.ravel()
    n = len(v)
    BF = np.empty((n, n))
    for i in range(n):
        z = v[i] - v
        r = np.linalg.norm(z, axis=-1)
        rs = np.maximum(r, 1e-300)
        k = z / rs[:, None]
        kp = np.stack([-k[:, 1], k[:, 0]], axis=-1)
        mid = 0.5 * (v[i] + v)
        sig = np.cos(alpha)[None, :, None] * k[:, None, :] + np.sin(alpha)[None, :, None] * kp[:, None, :]
        p1 = mid[:, None, :] + 0.5 * r[:, None, None] * sig
        p2 = mid[:, None, :] - 0.5 * r[:, None, None] * sig
        ok = spl.inside(p1) & spl.inside(p2)
        Fp = np.where(ok, np.exp(np.where(ok, spl(p1) + spl(p2), -np.inf)), 0.0)
        kern = rs ** gamma if gamma != 0 else np.ones_like(r)
        BF[i] = kern * ((Fp - (fv[i] * fv)[:, None]) @ walpha)
    F = np.outer(fv, fv).reshape(f.shape + f.shape)
    W4 = fisher_first_variation(F, np.concatenate([h, h]))
    rhs = 0.5 * float(np.sum(BF.reshape(F.shape) * W4) * f.cell_volume ** 2)
    return lhs, rhs


# ---------------------------------------------------------------------------
# Linear flows on the sphere


def linear_sphere_evolve(F0: SphereFunction, generator, t: float) -> SphereFunction:
    """e^{t L} F0 with L = Delta (``generator='laplace'``) or L_beta for an AngularKernel."""
    lmax = F0.grid.lmax
    if isinstance(generator, str):
        if generator not in ("laplace", "delta"):
            raise KineticError("bad-generator", f"unknown generator {generator!r}")
        nu = np.array([laplace_eigenvalue(F0.grid.dim, l) for l in range(lmax + 1)], dtype=float)
    elif isinstance(generator, AngularKernel):
        nu = kernel_multiplier(generator, lmax)
    else:
        raise KineticError("bad-generator", "generator must be 'laplace' or an AngularKernel")
    return linear_evolve(F0, nu, t)


def sphere_series(F0: SphereFunction, generator, times: Sequence[float]) -> list:
    """Rows (t, int F^2, int F log F, I(F)) along e^{tL}."""
    rows = []
    for t in times:
        F = linear_sphere_evolve(F0, generator, t)
        v = F.values
        if np.any(v <= 0):
            raise KineticError("invariant-breach", f"F lost positivity at t={t}")
        rows.append((float(t), F.grid.integrate(v * v), F.grid.integrate(v * np.log(v)), sphere_fisher(F)))
    return rows
