"""Legendre polynomials in dimension d, spectra of linear Boltzmann operators
on the sphere, heat kernels, subordination and kernel comparisons.

Conventions
-----------
An angular kernel ``beta`` is a function of ``cos(theta)`` on S^{d-1}.  All
sphere integrals are reduced to the polar form

    int g(k.sigma) beta(k.sigma) dsigma
        = |S^{d-2}| int_0^pi g(cos t) beta(cos t) sin^{d-2}(t) dt,

with |S^0| = 2 (the two points of S^0 are the rotations by +t and -t on the
circle).  Atomic kernels are given directly as a measure in t, i.e. the
masses m_i stand for ``beta sin^{d-2} dt = sum m_i delta_{t_i}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, lgamma, log, pi
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma as gamma_fn
from scipy.special import gammainc, gammaincc, roots_jacobi, roots_legendre


class SpectralError(ValueError):
    """Raised for invalid spectral requests; ``code`` is a short tag."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


def sphere_area(d: int) -> float:
    """Surface measure |S^{d-1}| of the unit sphere in R^d (d >= 1)."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    return 2.0 * pi ** (d / 2.0) / gamma_fn(d / 2.0)


# ---------------------------------------------------------------------------
# Legendre polynomials


def _check_dim(d: int) -> None:
    if int(d) != d or d < 2:
        raise SpectralError("bad-dim", f"dimension must be an integer >= 2, got {d}")


def legendre_all(d: int, lmax: int, x) -> np.ndarray:
    """Return P_0..P_lmax in dimension d at ``x`` as an array (lmax+1, *x.shape).

    Uses (l+d-2) P_{l+1} = (2l+d-2) x P_l - l P_{l-1}.  For l > 30 the
    recursion is carried in extended precision.
    """
    _check_dim(d)
    if lmax < 0:
        raise SpectralError("bad-degree", "degree must be >= 0")
    x = np.asarray(x, dtype=float)
    out = np.empty((lmax + 1,) + x.shape)
    out[0] = 1.0
    if lmax == 0:
        return out
    out[1] = x
    p0, p1 = np.ones_like(x), x.copy()
    for ell in range(1, lmax):
        if ell == 30:
            p0 = p0.astype(np.longdouble)
            p1 = p1.astype(np.longdouble)
            x = x.astype(np.longdouble)
        p2 = ((2 * ell + d - 2) * x * p1 - ell * p0) / (ell + d - 2)
        out[ell + 1] = p2
        p0, p1 = p1, p2
    return out


def legendre(d: int, ell: int, x):
    """Legendre polynomial P_ell in dimension d (P_ell(1) = 1)."""
    if ell < 0:
        raise SpectralError("bad-degree", "degree must be >= 0")
    val = legendre_all(d, ell, x)[ell]
    return float(val) if np.ndim(val) == 0 else val


def legendre_derivatives(d: int, lmax: int, x):
    """Return (P, P', P'') for degrees 0..lmax, each shaped (lmax+1, *x.shape).

    Obtained by differentiating the three-term recursion.
    """
    _check_dim(d)
    x = np.asarray(x, dtype=float)
    shape = (lmax + 1,) + x.shape
    P, D1, D2 = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    P[0] = 1.0
    if lmax >= 1:
        P[1] = x
        D1[1] = 1.0
    for ell in range(1, lmax):
        a, c = 2 * ell + d - 2, ell + d - 2
        P[ell + 1] = (a * x * P[ell] - ell * P[ell - 1]) / c
        D1[ell + 1] = (a * (P[ell] + x * D1[ell]) - ell * D1[ell - 1]) / c
        D2[ell + 1] = (a * (2 * D1[ell] + x * D2[ell]) - ell * D2[ell - 1]) / c
    return P, D1, D2


def zonal_series(d: int, coef, x, deriv: int = 0):
    """sum_l coef_l P_l^{(deriv)}(x) for deriv in {0, 1, 2}, streaming the recursion."""
    _check_dim(d)
    coef = np.asarray(coef, dtype=float)
    x = np.asarray(x, dtype=float)
    p0, p1 = np.ones_like(x), x.copy()
    d10, d11 = np.zeros_like(x), np.ones_like(x)
    d20, d21 = np.zeros_like(x), np.zeros_like(x)
    pick = lambda a, b, c: (a, b, c)[deriv]
    tot = coef[0] * pick(p0, d10, d20)
    if len(coef) > 1:
        tot = tot + coef[1] * pick(p1, d11, d21)
    for ell in range(1, len(coef) - 1):
        a, c = 2 * ell + d - 2, ell + d - 2
        p2 = (a * x * p1 - ell * p0) / c
        if deriv >= 1:
            d12 = (a * (p1 + x * d11) - ell * d10) / c
        if deriv == 2:
            d22 = (a * (2 * d11 + x * d21) - ell * d20) / c
            d20, d21 = d21, d22
        if deriv >= 1:
            d10, d11 = d11, d12
        p0, p1 = p1, p2
        tot = tot + coef[ell + 1] * pick(p2, d11, d21)
    return tot


def one_minus_legendre_all(d: int, lmax: int, theta) -> np.ndarray:
    """Return 1 - P_l(cos theta), l = 0..lmax, without cancellation near theta = 0.

    Runs the recursion on Q_l = 1 - P_l with 1 - cos(theta) = 2 sin^2(theta/2):
    (l+d-2) Q_{l+1} = (2l+d-2) [(1-x) + x Q_l] - l Q_{l-1}.
    """
    _check_dim(d)
    theta = np.asarray(theta, dtype=float)
    x = np.cos(theta)
    omx = 2.0 * np.sin(theta / 2.0) ** 2
    out = np.zeros((lmax + 1,) + theta.shape)
    if lmax >= 1:
        out[1] = omx
    for ell in range(1, lmax):
        out[ell + 1] = ((2 * ell + d - 2) * (omx + x * out[ell]) - ell * out[ell - 1]) / (ell + d - 2)
    return out


def laplace_eigenvalue(d: int, ell: int) -> int:
    """Eigenvalue lambda_l = l(l+d-2) of -Delta on S^{d-1}."""
    _check_dim(d)
    if ell < 0:
        raise SpectralError("bad-degree", "degree must be >= 0")
    return ell * (ell + d - 2)


def multiplicity(d: int, ell: int) -> int:
    """Dimension N(d, l) of the degree-l spherical harmonics on S^{d-1}."""
    _check_dim(d)
    if ell < 0:
        raise SpectralError("bad-degree", "degree must be >= 0")
    if ell == 0:
        return 1
    num = (2 * ell + d - 2) * comb(ell + d - 3, ell - 1)
    assert num % ell == 0
    return num // ell


def _one_minus_p_series(d: int, lam: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Small-angle expansion of 1 - P_l(cos theta) up to theta^4."""
    dp = lam / (d - 1.0)
    ddp = (lam - d + 1.0) * dp / (d + 1.0)
    th2 = theta ** 2
    return 0.5 * dp[:, None] * th2[None, :] - (dp / 24.0 + ddp / 8.0)[:, None] * th2[None, :] ** 2


# ---------------------------------------------------------------------------
# Heat weights (Bernstein measures discretised on log-spaced panels)


@dataclass(frozen=True)
class HeatWeight:
    """Discretised measure lambda(dt) = sum_j w_j delta_{t_j} plus analytic tails.

    ``tail_c, tail_a`` describe the behaviour c t^{-1-a} of the density on
    (0, t_nodes.min()); ``tail_mass`` is the mass beyond the last panel.
    The tails are optional (zero by default).
    """

    t: np.ndarray
    w: np.ndarray
    t_lo: float = 0.0
    tail_c: float = 0.0
    tail_a: float = 0.0
    tail_mass: float = 0.0
    label: str = "weight"

    def __post_init__(self):
        if np.any(np.asarray(self.w) < 0) or np.any(np.asarray(self.t) <= 0):
            raise SpectralError("bad-weight", "heat weights need t_j > 0 and w_j >= 0")

    @classmethod
    def single(cls, t: float, mass: float = 1.0) -> "HeatWeight":
        return cls(np.array([float(t)]), np.array([float(mass)]), label=f"dirac(t={t})")

    @classmethod
    def from_density(cls, density: Callable, tmin: float = 1e-6, tmax: float = 1e3,
                     panels: int = 400, tails: bool = True, label: str = "density") -> "HeatWeight":
        """Midpoint masses of ``density`` on ``panels`` log-spaced panels.

        With ``tails`` the density below ``tmin`` is replaced by its local power
        law c t^{-1-a} fitted at tmin, and the mass above ``tmax`` is integrated.
        """
        edges = np.geomspace(tmin, tmax, panels + 1)
        tm = np.sqrt(edges[:-1] * edges[1:])
        w = np.asarray(density(tm), dtype=float) * np.diff(edges)
        c = a = mass = 0.0
        if tails:
            h = 1e-4
            slope = (log(density(tmin * (1 + h))) - log(density(tmin * (1 - h)))) / (log(1 + h) - log(1 - h))
            a = -slope - 1.0
            c = float(density(tmin)) * tmin ** (1.0 + a)
            mass = quad(density, tmax, np.inf, limit=200)[0]
        return cls(tm, w, t_lo=tmin, tail_c=c, tail_a=a, tail_mass=mass, label=label)

    @classmethod
    def fractional(cls, nu: float, **kw) -> "HeatWeight":
        """Weight c t^{-(1+nu/2)} with c = (nu/2)/Gamma(1-nu/2), so g(w) = w^{nu/2}."""
        if not 0.0 < nu < 2.0:
            raise SpectralError("bad-weight", "fractional order nu must lie in (0, 2)")
        a = nu / 2.0
        c = a / gamma_fn(1.0 - a)
        return cls.from_density(lambda t: c * t ** (-1.0 - a), label=f"frac(nu={nu})", **kw)

    @classmethod
    def power(cls, exponent: float, shift: Optional[float] = None, **kw) -> "HeatWeight":
        """Weight t^{-exponent} / sqrt(1 + shift t) (no sqrt factor when shift is None)."""
        if shift is None:
            dens = lambda t: t ** (-exponent)
        else:
            dens = lambda t: t ** (-exponent) / np.sqrt(1.0 + shift * t)
        return cls.from_density(dens, label=f"power(p={exponent},shift={shift})", **kw)


def multiplier(w: HeatWeight, omega) -> np.ndarray:
    """g(omega) = int (1 - e^{-omega t}) lambda(dt), including the tails."""
    omega = np.asarray(omega, dtype=float)
    g = (w.w[:, None] * -np.expm1(-np.outer(w.t, omega.ravel()))).sum(axis=0).reshape(omega.shape)
    if w.tail_c > 0:
        g = g + w.tail_c * _small_time_multiplier(w.tail_a, w.t_lo, omega)
    if w.tail_mass > 0:
        g = g + w.tail_mass * (omega > 0)
    return g


def _small_time_multiplier(a: float, T: float, omega: np.ndarray) -> np.ndarray:
    """int_0^T (1 - e^{-omega t}) t^{-1-a} dt."""
    if a >= 1.0:
        raise SpectralError("divergent-nu", "weight too singular at t = 0 (exponent >= 2)")
    x = omega * T
    if a > 0.0:
        # omega^a [gamma(1-a, x)/a - x^{-a}(1 - e^{-x})/a]
        xs = np.where(x > 0, x, 1.0)
        val = omega ** a * (gamma_fn(1.0 - a) * gammainc(1.0 - a, xs) - xs ** (-a) * -np.expm1(-xs)) / a
        return np.where(x > 0, val, 0.0)
    tot = np.zeros_like(x)
    term = np.ones_like(x)
    for n in range(1, 80):
        term = term * (-x) / n
        tot = tot - term / (n - a)
    return tot * T ** (-a)


# ---------------------------------------------------------------------------
# Heat kernel on S^{d-1}


def _heat_lmax(d: int, t: float) -> int:
    ell = 1
    while np.exp(-laplace_eigenvalue(d, ell) * t) * multiplicity(d, ell) >= 1e-16:
        ell += 1
        if ell > 200000:
            raise SpectralError("heat-truncation", "time too small for the heat series")
    return ell


def heat_kernel(d: int, t: float, x):
    """K_t(x) = sum_l e^{-lambda_l t} N(d,l)/|S^{d-1}| P_l(x), truncated at 1e-16."""
    if not t > 0:
        raise SpectralError("bad-time", "heat kernel needs t > 0")
    lmax = _heat_lmax(d, t)
    ells = np.arange(lmax + 1)
    coef = np.exp(-ells * (ells + d - 2) * t) * np.array([multiplicity(d, l) for l in ells])
    return _zonal_sum(d, coef / sphere_area(d), x)


def _zonal_sum(d: int, coef: np.ndarray, x):
    """sum_l coef_l P_l(x) by streaming the recursion (no table in memory)."""
    xa = np.asarray(x, dtype=float)
    p0 = np.ones_like(xa)
    tot = coef[0] * p0
    if len(coef) > 1:
        p1 = xa.copy()
        tot = tot + coef[1] * p1
        for ell in range(1, len(coef) - 1):
            p2 = ((2 * ell + d - 2) * xa * p1 - ell * p0) / (ell + d - 2)
            tot = tot + coef[ell + 1] * p2
            p0, p1 = p1, p2
    return float(tot) if np.ndim(tot) == 0 else tot


def _heat_asymptotic_tail(d: int, w: HeatWeight, theta):
    """int_0^{t_lo} K_t(cos theta) c t^{-1-a} dt with the leading small-time heat asymptotics."""
    n = d - 1
    q = n / 2.0 + w.tail_a
    theta = np.asarray(theta, dtype=float)
    corr = (theta / np.sin(theta)) ** ((n - 1) / 2.0)
    z = theta ** 2 / 4.0
    return w.tail_c * (4 * pi) ** (-n / 2.0) * corr * np.exp(lgamma(q) - q * np.log(z)) * gammaincc(q, z / w.t_lo)


def subordinate(d: int, w: HeatWeight, x, theta=None):
    """beta(x) = int K_t(x) lambda(dt), evaluated through its Legendre series.

    The coefficient of P_l is N(d,l)/|S^{d-1}| sum_j w_j e^{-lambda_l t_j}.
    Analytic small-time and large-time tails are added when the weight has them.
    """
    x = np.asarray(x, dtype=float)
    lmax = _heat_lmax(d, float(np.min(w.t)))
    ells = np.arange(lmax + 1)
    lam = ells * (ells + d - 2.0)
    c = np.zeros(lmax + 1)
    for tj, wj in zip(w.t, w.w):
        c += wj * np.exp(-lam * tj)
    c *= np.array([multiplicity(d, l) for l in ells]) / sphere_area(d)
    beta = np.asarray(_zonal_sum(d, c, x), dtype=float)
    if w.tail_c > 0:
        th = np.arccos(np.clip(x, -1, 1)) if theta is None else np.asarray(theta, dtype=float)
        beta = beta + _heat_asymptotic_tail(d, w, th)
    if w.tail_mass > 0:
        beta = beta + w.tail_mass / sphere_area(d)
    return float(beta) if beta.ndim == 0 else beta


# ---------------------------------------------------------------------------
# Angular kernels


@dataclass(frozen=True)
class AngularKernel:
    """An angular kernel beta(cos theta) on S^{d-1}.

    kind:
      'density'      pointwise density ``func(theta)``; ``order`` is the
                     singular exponent nu with beta sin^{d-2} ~ theta^{-1-nu}
                     (None for kernels bounded near theta = 0),
      'atomic'       masses of the measure beta sin^{d-2} dtheta at ``angles``,
      'heat'         heat kernel K_t,
      'subordinated' int K_t lambda(dt) for a HeatWeight.

    ``theta_lo``/``theta_hi`` restrict the support (cutoffs, grazing families).
    ``symmetric`` marks a kernel invariant under theta -> pi - theta.
    """

    dim: int
    kind: str
    func: Optional[Callable] = None
    order: Optional[float] = None
    angles: Optional[np.ndarray] = None
    masses: Optional[np.ndarray] = None
    t: Optional[float] = None
    weight: Optional[HeatWeight] = None
    theta_lo: float = 0.0
    theta_hi: float = pi
    symmetric: bool = False
    label: str = "beta"
    scale: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        _check_dim(self.dim)
        if self.kind not in ("density", "atomic", "heat", "subordinated"):
            raise SpectralError("bad-kernel", f"unknown kernel kind {self.kind!r}")
        if self.kind == "atomic":
            if self.angles is None or self.masses is None or len(self.angles) != len(self.masses):
                raise SpectralError("bad-kernel", "atomic kernel needs matching angles and masses")
            if np.any(np.asarray(self.masses) < 0):
                raise SpectralError("bad-kernel", "atomic masses must be >= 0")
        if self.order is not None and self.order >= 2:
            pass  # allowed as a descriptor; quadratures raise divergence errors

    # constructors -----------------------------------------------------
    @classmethod
    def constant(cls, d: int, value: float = 1.0) -> "AngularKernel":
        return cls(d, "density", func=lambda th: np.full(np.shape(th), float(value)),
                   symmetric=True, label=f"const({value})")

    @classmethod
    def atomic(cls, d: int, angles, masses) -> "AngularKernel":
        angles = np.asarray(angles, dtype=float)
        masses = np.asarray(masses, dtype=float)
        if np.any(angles < 0) or np.any(angles > pi):
            raise SpectralError("bad-kernel", "atomic angles must lie in [0, pi]")
        return cls(d, "atomic", angles=angles, masses=masses, label="atomic")

    @classmethod
    def atomic_rational(cls, N: int, masses) -> "AngularKernel":
        """Atomic kernel on S^1 with atoms at i pi/N, i = 0..N."""
        masses = np.asarray(masses, dtype=float)
        if len(masses) != N + 1:
            raise SpectralError("bad-kernel", f"need N+1 = {N + 1} masses")
        return cls(2, "atomic", angles=np.arange(N + 1) * pi / N, masses=masses,
                   label=f"atomic(N={N})")

    @classmethod
    def heat(cls, d: int, t: float) -> "AngularKernel":
        if not t > 0:
            raise SpectralError("bad-time", "heat kernel needs t > 0")
        return cls(d, "heat", t=float(t), symmetric=False, label=f"heat(t={t})")

    @classmethod
    def subordinated(cls, d: int, weight: HeatWeight, order: Optional[float] = None) -> "AngularKernel":
        if order is None and weight.tail_c > 0:
            order = 2.0 * weight.tail_a
        return cls(d, "subordinated", weight=weight, order=order, label=f"subordinated({weight.label})")

    @classmethod
    def fractional(cls, d: int, nu: float, **kw) -> "AngularKernel":
        """Kernel of -(-Delta)^{nu/2} by subordination of the heat semigroup."""
        return cls.subordinated(d, HeatWeight.fractional(nu, **kw), order=nu)

    @classmethod
    def from_function(cls, d: int, func: Callable, order: Optional[float] = None,
                      label: str = "density", symmetric: bool = False) -> "AngularKernel":
        return cls(d, "density", func=func, order=order, label=label, symmetric=symmetric)

    # evaluation -------------------------------------------------------
    def __call__(self, theta):
        """Pointwise value beta(cos theta) for theta in [0, pi]."""
        theta = np.asarray(theta, dtype=float)
        if self.kind == "atomic":
            raise SpectralError("atomic-pointwise", "atomic kernels have no pointwise density")
        if self.kind == "density":
            val = np.asarray(self.func(theta), dtype=float)
        elif self.kind == "heat":
            val = np.asarray(heat_kernel(self.dim, self.t, np.cos(theta)), dtype=float)
        else:
            val = np.asarray(subordinate(self.dim, self.weight, np.cos(theta), theta=theta), dtype=float)
        mask = (theta >= self.theta_lo) & (theta <= self.theta_hi)
        val = np.where(mask, val, 0.0)
        return float(val) if val.ndim == 0 else val

    def symmetrised(self) -> "AngularKernel":
        """[beta(cos theta) + beta(-cos theta)]/2."""
        if self.kind == "atomic":
            ang = np.concatenate([self.angles, pi - self.angles])
            mas = np.concatenate([self.masses, self.masses]) / 2.0
            return AngularKernel.atomic(self.dim, ang, mas)
        base = self
        return AngularKernel(self.dim, "density", func=lambda th: 0.5 * (base(th) + base(pi - th)),
                             order=self.order, symmetric=True, label=f"sym({self.label})",
                             scale=self.scale, meta={"base": base})

    def restricted(self, theta_lo: float = 0.0, theta_hi: float = pi, scale: float = 1.0) -> "AngularKernel":
        """Copy with support restricted to [theta_lo, theta_hi] and values scaled."""
        if self.kind == "atomic":
            keep = (self.angles >= theta_lo) & (self.angles <= theta_hi)
            return AngularKernel.atomic(self.dim, self.angles[keep], scale * self.masses[keep])
        base = self
        lo, hi = max(theta_lo, self.theta_lo), min(theta_hi, self.theta_hi)
        return AngularKernel(self.dim, "density", func=lambda th: scale * base(th), order=self.order,
                             theta_lo=lo, theta_hi=hi, symmetric=self.symmetric and lo == 0.0 and hi >= pi,
                             label=f"{self.label}|[{theta_lo:.3g},{theta_hi:.3g}]x{scale:.3g}",
                             scale=self.scale, meta={"base": base})

    # quadrature -------------------------------------------------------
    def theta_measure(self, n: int = 16):
        """Nodes and weights for int_0^pi g(theta) beta sin^{d-2}(theta) dtheta.

        Accurate for smooth g vanishing to second order where the kernel is
        singular.  The panel nearest a singular endpoint uses Gauss-Jacobi with
        the kernel's singular exponent; the rest are geometrically graded
        Gauss-Legendre panels.
        """
        if self.kind == "atomic":
            return np.asarray(self.angles, dtype=float), np.asarray(self.masses, dtype=float)
        return _density_measure(self, n)


def _jacobi_exponent(kern: AngularKernel) -> float:
    """Weight exponent p for the Gauss-Jacobi panel at theta = 0.

    With beta sin^{d-2} ~ theta^{p0}, p0 = -1 - order (p0 = d-2 for bounded
    kernels), integrable kernels use p = p0.  Nonintegrable ones are paired
    with integrands vanishing like theta^2, which leaves p = p0 + 2.
    """
    p0 = float(kern.dim - 2) if kern.order is None else -1.0 - kern.order
    if p0 > -1.0:
        return p0
    if p0 + 2.0 <= -1.0:
        raise SpectralError("divergent-measure", f"kernel too singular (order {kern.order} >= 2)")
    return p0 + 2.0


def _gauss_jacobi_panel(lo: float, hi: float, n: int, p: float, at_hi: bool = False):
    """Nodes/weights u_j, W_j with sum W_j phi(u_j) ~ int_lo^hi phi(u) |u - end|^p du."""
    x, w = roots_jacobi(n, 0.0, p)
    s = (1.0 + x) / 2.0
    L = hi - lo
    ws = w * 2.0 ** (-1.0 - p) * L ** (1.0 + p)
    if at_hi:
        return hi - L * s, ws
    return lo + L * s, ws


def _density_measure(kern: AngularKernel, n: int):
    lo, hi = kern.theta_lo, kern.theta_hi
    d = kern.dim
    nodes, weights = [], []
    sin_pow = lambda th: np.sin(th) ** (d - 2)
    sing0 = lo == 0.0
    singpi = hi >= pi and (kern.symmetric and kern.order is not None)
    mid = 0.5 * (lo + hi)
    # left half: graded towards lo
    inner = 1e-2 if kern.scale is None else min(1e-2, 0.25 * kern.scale)
    first = min(inner, 0.25 * (mid - lo)) if sing0 else None
    if sing0:
        p = _jacobi_exponent(kern)
        u, W = _gauss_jacobi_panel(0.0, first, n, p)
        phi = kern(u) * sin_pow(u) / u ** p
        nodes.append(u)
        weights.append(W * phi)
        edges = np.geomspace(first, mid, max(2, int(np.ceil(np.log2(mid / first))) + 1))
    elif kern.order is not None and mid > 4.0 * lo:
        # cut-off singular kernel: grade geometrically away from the cutoff
        edges = np.geomspace(lo, mid, max(3, int(np.ceil(np.log2(mid / lo))) + 1))
    else:
        edges = np.linspace(lo, mid, 3)
    gx, gw = roots_legendre(n)
    for a, b in zip(edges[:-1], edges[1:]):
        t = 0.5 * (b - a) * gx + 0.5 * (a + b)
        nodes.append(t)
        weights.append(0.5 * (b - a) * gw * kern(t) * sin_pow(t))
    # right half: graded towards hi
    if singpi:
        lastw = min(1e-2, 0.25 * (hi - mid))
        p = _jacobi_exponent(kern)
        u, W = _gauss_jacobi_panel(hi - lastw, hi, n, p, at_hi=True)
        phi = kern(u) * sin_pow(u) / (hi - u) ** p
        nodes.append(u)
        weights.append(W * phi)
        gaps = np.geomspace(lastw, hi - mid, max(2, int(np.ceil(np.log2((hi - mid) / lastw))) + 1))
    else:
        gaps = np.geomspace(min(1e-2, 0.25 * (hi - mid)), hi - mid, 10) if hi >= pi else np.linspace(0, hi - mid, 3)
        if hi >= pi:
            gaps = np.concatenate([[0.0], gaps])
    redges = hi - gaps[::-1]
    for a, b in zip(redges[:-1], redges[1:]):
        t = 0.5 * (b - a) * gx + 0.5 * (a + b)
        nodes.append(t)
        weights.append(0.5 * (b - a) * gw * kern(t) * sin_pow(t))
    return np.concatenate(nodes), np.concatenate(weights)


def sphere_integral(kern: AngularKernel, g: Callable, n: int = 16) -> float:
    """int_{S^{d-1}} g(theta(k, sigma)) beta(k.sigma) dsigma for a zonal integrand g(theta)."""
    th, w = kern.theta_measure(n)
    return float(sphere_area(kern.dim - 1) * np.sum(w * g(th)))


# ---------------------------------------------------------------------------
# Spectra


@dataclass(frozen=True)
class SpectralKernel:
    """Eigenvalues nu_l (l = 0..lmax) of -L_beta on the harmonic subspaces H_l."""

    dim: int
    lmax: int
    nu: np.ndarray
    label: str = "beta"

    def __post_init__(self):
        if self.nu[0] != 0.0:
            raise SpectralError("bad-spectrum", "nu_0 must vanish")

    @property
    def lam(self) -> np.ndarray:
        ells = np.arange(self.lmax + 1)
        return ells * (ells + self.dim - 2.0)

    @property
    def mult(self) -> np.ndarray:
        return np.array([multiplicity(self.dim, l) for l in range(self.lmax + 1)])


SERIES_SPLIT = 1e-2


def boltzmann_spectrum(beta: AngularKernel, d: Optional[int] = None, lmax: int = 20, n: int = 24) -> SpectralKernel:
    """nu_l = |S^{d-2}| int_0^pi [1 - P_l(cos t)] beta sin^{d-2} t dt for l <= lmax.

    Below theta = 0.01 the factor 1 - P_l is replaced by its expansion
    lambda_l theta^2/(2(d-1)) - (...) theta^4; above, it is computed with a
    cancellation-free recursion.  Raises ``divergent-nu`` when the kernel is
    too singular for the momentum-transfer integral to converge.
    """
    d = beta.dim if d is None else d
    if d != beta.dim:
        raise SpectralError("bad-dim", "kernel dimension mismatch")
    if beta.order is not None and beta.order >= 2 and beta.theta_lo == 0.0:
        raise SpectralError("divergent-nu", f"singular order {beta.order} >= 2 without cutoff")
    ells = np.arange(lmax + 1)
    lam = ells * (ells + d - 2.0)
    S = sphere_area(d - 1)
    th, w = beta.theta_measure(n)
    small = th < SERIES_SPLIT
    vals = np.empty((lmax + 1, th.size))
    if np.any(small):
        vals[:, small] = _one_minus_p_series(d, lam, th[small])
    if np.any(~small):
        vals[:, ~small] = one_minus_legendre_all(d, lmax, th[~small])
    nu = S * vals @ w
    if beta.symmetric and beta.order is not None and beta.theta_hi >= pi:
        # odd modes of a kernel singular at theta = pi diverge
        nu[1::2] = np.inf
    nu[0] = 0.0
    if not np.all(np.isfinite(nu[::2])):
        raise SpectralError("divergent-nu", "non-finite eigenvalue")
    return SpectralKernel(d, lmax, nu, label=beta.label)


def spectrum(beta: AngularKernel, lmax: int) -> SpectralKernel:
    """Eigenvalues by the fastest exact route available for the kernel kind.

    Heat and subordinated kernels use their multipliers, atomic kernels the
    finite sum; densities fall back to :func:`boltzmann_spectrum`.
    """
    d = beta.dim
    ells = np.arange(lmax + 1)
    lam = ells * (ells + d - 2.0)
    if beta.theta_lo > 0 or beta.theta_hi < pi:
        return boltzmann_spectrum(beta, d, lmax)
    if beta.kind == "heat":
        nu = -np.expm1(-lam * beta.t)
    elif beta.kind == "subordinated":
        nu = multiplier(beta.weight, lam)
    elif beta.kind == "atomic":
        vals = one_minus_legendre_all(d, lmax, beta.angles)
        nu = sphere_area(d - 1) * vals @ beta.masses
    else:
        return boltzmann_spectrum(beta, d, lmax)
    nu = np.asarray(nu, dtype=float)
    nu[0] = 0.0
    return SpectralKernel(d, lmax, nu, label=beta.label)


def sigma_of_beta(beta: AngularKernel, d: Optional[int] = None, n: int = 24) -> float:
    """Sigma(beta) = 1/(2(d-1)) int (1 - (k.sigma)^2) beta dsigma."""
    d = beta.dim if d is None else d
    if beta.kind == "atomic":
        th, w = beta.angles, beta.masses
    else:
        if beta.order is not None and beta.order >= 2 and beta.theta_lo == 0.0:
            raise SpectralError("divergent-nu", "Sigma diverges for singular order >= 2")
        th, w = beta.theta_measure(n)
    return float(sphere_area(d - 1) * np.sum(np.sin(th) ** 2 * w) / (2.0 * (d - 1)))


def momentum_cross_section(beta: AngularKernel, n: int = 24) -> float:
    """mu_beta = int (1 - k.sigma) beta dsigma."""
    if beta.kind == "atomic":
        th, w = beta.angles, beta.masses
    else:
        th, w = beta.theta_measure(n)
    return float(sphere_area(beta.dim - 1) * np.sum(2.0 * np.sin(th / 2.0) ** 2 * w))


# ---------------------------------------------------------------------------
# Kernel comparison


@dataclass(frozen=True)
class RatioTable:
    theta: np.ndarray
    target: np.ndarray
    ref: np.ndarray

    @property
    def ratio(self) -> np.ndarray:
        return self.target / self.ref

    @property
    def m(self) -> float:
        return float(self.ratio.min())

    @property
    def M(self) -> float:
        return float(self.ratio.max())


def kernel_ratio_table(target: AngularKernel, ref: AngularKernel, theta_grid=None,
                       theta_min: float = 1e-3, symmetrise: bool = True) -> RatioTable:
    """Pointwise sin^{d-2}-weighted kernels on [theta_min, pi - theta_min].

    The target is symmetrised when ``symmetrise`` is set (criteria on even
    functions only see the symmetric part); the reference is symmetrised too,
    so that both sides describe operators on even functions.
    """
    if target.dim != ref.dim:
        raise SpectralError("bad-dim", "kernel dimensions differ")
    if theta_grid is None:
        theta_grid = np.linspace(theta_min, pi - theta_min, 801)
    th = np.asarray(theta_grid, dtype=float)
    th = th[(th >= theta_min) & (th <= pi - theta_min)]
    sw = np.sin(th) ** (target.dim - 2)
    bt = np.asarray(target(th), dtype=float)
    br = np.asarray(ref(th), dtype=float)
    if symmetrise:
        # evaluate once on the mirrored grid too
        bt = 0.5 * (bt + np.asarray(target(pi - th), dtype=float))
        br = 0.5 * (br + np.asarray(ref(pi - th), dtype=float))
    bt, br = bt * sw, br * sw
    if np.any(br <= 0) or not np.all(np.isfinite(br)):
        raise SpectralError("ref-vanishes", "reference kernel vanishes or is not finite on the grid")
    if np.any(bt <= 0):
        raise SpectralError("target-vanishes", "target kernel must be positive on the interior grid")
    return RatioTable(th, bt, br)


def kernel_ratio(target: AngularKernel, ref: AngularKernel, theta_grid=None,
                 theta_min: float = 1e-3, symmetrise: bool = True):
    """Return (m, M) with m <= target/ref <= M on the comparison grid."""
    tab = kernel_ratio_table(target, ref, theta_grid, theta_min, symmetrise)
    return tab.m, tab.M
