"""Classical scattering and collision kernels B(|z|, cos theta).

Scattering by a repulsive potential psi(r) = psi0 / r^{s-1} gives the
deviation angle

    theta(p, z) = pi - 2 p int_{r0}^inf dr / (r^2 sqrt(1 - p^2/r^2 - 4 psi(r)/|z|^2)),

with r0 the positive root of the radicand.  With y = r0/r and y = 1 - t^2 the
endpoint singularity disappears and, writing the radicand as
P (1 - y^2) + C (1 - y^{s-1}) with P = p^2/r0^2 and C = 1 - P,

    theta = 4 int_0^1 [a^{-1/2} - (a + eps g)^{-1/2}] dt,
    a = 2 - t^2,  g = (1 - (1 - t^2)^{s-1}) / t^2,  eps = C / P,

which is evaluated in the cancellation-free form eps g / (sqrt(a) sqrt(b) (sqrt(a) + sqrt(b))).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import lgamma, pi
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

from .spectral import AngularKernel, momentum_cross_section, sphere_area


class CollisionKernelError(ValueError):
    """Raised for invalid kernel requests; ``code`` is a short tag."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


_GT, _GW = np.polynomial.legendre.leggauss(160)
_GT = 0.5 * (_GT + 1.0)
_GW = 0.5 * _GW

PMAX_SCALED = 1e6


@dataclass(frozen=True)
class PowerLawForce:
    """Repulsive inverse power law, psi(r) = psi0 / r^{s-1}."""

    s: float
    dim: int = 3
    psi0: float = 0.25

    def __post_init__(self):
        if not self.s > 1:
            raise CollisionKernelError("bad-force", f"need s > 1, got {self.s}")
        if not self.psi0 > 0:
            raise CollisionKernelError("bad-force", f"need psi0 > 0, got {self.psi0}")
        if int(self.dim) != self.dim or self.dim < 2:
            raise CollisionKernelError("bad-force", f"need integer dim >= 2, got {self.dim}")

    @property
    def exponents(self):
        return power_law_exponents(self.s, self.dim)


def power_law_exponents(s: float, d: int):
    """(gamma, nu) for an inverse s-power force in dimension d."""
    if not s > 1:
        raise CollisionKernelError("bad-force", f"need s > 1, got {s}")
    gamma = (s - (2 * d - 1)) / (s - 1)
    nu = (d - 1) / (s - 1)
    # gamma + 2 nu = 1 identically; guard against rounding in the two quotients
    if abs(gamma + 2 * nu - 1.0) > 1e-12:
        raise CollisionKernelError("exponent-mismatch", f"gamma + 2 nu = {gamma + 2 * nu}")
    return gamma, nu


def large_p_constant(s: float) -> float:
    """lim_{p->inf} theta(p) p^{s-1} for psi0 = 1/4, |z| = 1."""
    return float(np.sqrt(pi) * np.exp(lgamma(s / 2.0) - lgamma((s - 1.0) / 2.0)))


# ---------------------------------------------------------------------------
# Deflection angle


def _radicand(r, p, c, s):
    return 1.0 - (p / r) ** 2 - c * r ** (1.0 - s)


def _turning_point(p: np.ndarray, c: float, s: float) -> np.ndarray:
    """Positive root r0 of 1 - p^2/r^2 - c r^{1-s}, by vectorized bisection."""
    lo = np.maximum(p, c ** (1.0 / (s - 1.0)))
    hi = 2.0 * lo + 1.0
    for _ in range(200):
        bad = _radicand(hi, p, c, s) <= 0
        if not bad.any():
            break
        hi = np.where(bad, 2.0 * hi, hi)
    else:
        raise CollisionKernelError("no-turning-point", "root bracketing failed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        neg = _radicand(mid, p, c, s) <= 0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
        if np.all(hi - lo <= 1e-15 * hi):
            break
    return 0.5 * (lo + hi)


def _theta(p, c: float, s: float) -> np.ndarray:
    p = np.atleast_1d(np.asarray(p, dtype=float))
    out = np.full(p.shape, pi)
    pos = p > 0
    if pos.any():
        pp = p[pos]
        r0 = _turning_point(pp, c, s)
        eps = c * r0 ** (3.0 - s) / pp ** 2
        t = _GT[None, :]
        g = -np.expm1((s - 1.0) * np.log1p(-t * t)) / (t * t)
        a = 2.0 - t * t
        b = a + eps[:, None] * g
        sa, sb = np.sqrt(a), np.sqrt(b)
        out[pos] = 4.0 * np.sum(_GW * eps[:, None] * g / (sa * sb * (sa + sb)), axis=1)
    return out


def deflection_angle(force: PowerLawForce, p, z_mag: float):
    """Deviation angle theta(p, |z|) in [0, pi]; theta(0) = pi."""
    if not z_mag > 0:
        raise CollisionKernelError("bad-speed", "relative speed must be positive")
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise CollisionKernelError("bad-impact", "impact parameter must be >= 0")
    c = 4.0 * force.psi0 / z_mag ** 2
    th = _theta(p, c, force.s)
    return float(th[0]) if p.ndim == 0 else th.reshape(p.shape)


def _impact_of_angle(th: np.ndarray, c: float, s: float) -> np.ndarray:
    """Invert theta(p) by bisection (theta is decreasing in p)."""
    lo = np.zeros_like(th)
    hi = np.ones_like(th)
    for _ in range(200):
        big = _theta(hi, c, s) > th
        if not big.any():
            break
        hi = np.where(big, 2.0 * hi, hi)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        big = _theta(mid, c, s) > th
        lo = np.where(big, mid, lo)
        hi = np.where(big, hi, mid)
        if np.all(hi - lo <= 1e-13 * hi):
            break
    return 0.5 * (lo + hi)


def impact_parameter(force: PowerLawForce, theta, z_mag: float = 1.0):
    """Impact parameter p with theta(p, |z|) = theta."""
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    return _impact_of_angle(th, 4.0 * force.psi0 / z_mag ** 2, force.s).reshape(np.shape(theta))


def _cross_section(th: np.ndarray, c: float, s: float, d: int, p_max: float) -> np.ndarray:
    """(p/sin th)^{d-2} |dp/dth| by centered differences on the inverse."""
    th_floor = float(_theta(np.array([p_max]), c, s)[0])
    h = 1e-4 * th
    if np.any(th - h <= th_floor) or np.any(th + h >= pi):
        raise CollisionKernelError(
            "angle-out-of-range",
            f"theta must lie in ({th_floor:.3g}, pi) up to the difference step")
    both = _impact_of_angle(np.concatenate([th + h, th - h, th]), c, s)
    n = th.size
    dp = (both[:n] - both[n:2 * n]) / (2.0 * h)
    p = both[2 * n:]
    return (p / np.sin(th)) ** (d - 2) * np.abs(dp)


def angular_kernel_from_scattering(force: PowerLawForce, theta, p_max: float = PMAX_SCALED):
    """Angular factor b(cos theta) of B = |z|^gamma b for the power-law force.

    Computed at |z| = 1 in the units where 4 psi0 / |z|^2 = 1 and rescaled by
    (4 psi0)^nu, which is how b depends on the potential strength.
    """
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    _, nu = power_law_exponents(force.s, force.dim)
    b = _cross_section(th, 1.0, force.s, force.dim, p_max) * (4.0 * force.psi0) ** nu
    return float(b[0]) if np.ndim(theta) == 0 else b.reshape(np.shape(theta))


def scattering_cross_section(force: PowerLawForce, z_mag: float, theta, p_max: float = PMAX_SCALED):
    """B(|z|, cos theta) = (p/sin theta)^{d-2} |dp/dtheta| |z| at the given speed.

    Inverts theta(p, |z|) at the actual speed, without the scaling shortcut
    used by :func:`angular_kernel_from_scattering`.
    """
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    c = 4.0 * force.psi0 / z_mag ** 2
    a = c ** (1.0 / (force.s - 1.0))
    B = _cross_section(th, c, force.s, force.dim, p_max * a) * z_mag
    return float(B[0]) if np.ndim(theta) == 0 else B.reshape(np.shape(theta))


def scattering_angular_kernel(force: PowerLawForce, p_max: float = PMAX_SCALED) -> AngularKernel:
    """b(cos theta) from scattering as an :class:`AngularKernel` of order nu."""
    _, nu = power_law_exponents(force.s, force.dim)
    th_floor = float(_theta(np.array([p_max]), 1.0, force.s)[0])
    lo = th_floor * 1.01
    hi = pi / (1.0 + 2e-4)

    def b(theta):
        th = np.asarray(theta, dtype=float)
        flat = np.atleast_1d(th).ravel()
        out = np.zeros(flat.shape)
        inside = (flat > lo) & (flat < hi)
        if inside.any():
            out[inside] = angular_kernel_from_scattering(force, flat[inside], p_max)
        # clamp at the ends to the nearest computable value (the kernel is
        # smooth at pi and the cutoff below lo is far inside any quadrature panel)
        if (flat >= hi).any():
            out[flat >= hi] = angular_kernel_from_scattering(force, hi * (1 - 1e-12), p_max)
        low = (flat <= lo) & (flat > 0)
        if low.any():
            edge = angular_kernel_from_scattering(force, lo * 1.0001, p_max)
            out[low] = edge * (flat[low] / (lo * 1.0001)) ** (-1.0 - nu - (force.dim - 2))
        return out.reshape(th.shape) if th.ndim else float(out[0])

    return AngularKernel.from_function(force.dim, b, order=nu, label=f"scatter(s={force.s:g},d={force.dim})")


def rutherford_kernel(d: int, z_mag, theta):
    """|z| / (2 |z| sin(theta/2))^{2(d-1)}."""
    z = np.asarray(z_mag, dtype=float)
    return z / (2.0 * z * np.sin(np.asarray(theta, dtype=float) / 2.0)) ** (2 * (d - 1))


def hard_sphere_kernel(d: int, z_mag, theta):
    """|z| / (2^{d-2} sin^{d-3}(theta/2))."""
    z = np.asarray(z_mag, dtype=float)
    return z * np.sin(np.asarray(theta, dtype=float) / 2.0) ** (3 - d) / 2.0 ** (d - 2)


def screened_coulomb_kernel(z_mag, theta, lam: float):
    """|z| / ((|z| sin(theta/2))^2 + 1/lam)^2 (three-dimensional)."""
    z = np.asarray(z_mag, dtype=float)
    s = np.sin(np.asarray(theta, dtype=float) / 2.0)
    return z / ((z * s) ** 2 + 1.0 / lam) ** 2


# ---------------------------------------------------------------------------
# Kernel descriptors


PRODUCT_FAMILIES = ("power_law", "rutherford", "hard_sphere", "product")


@dataclass(frozen=True, eq=False)
class CollisionKernel:
    """B(|z|, cos theta) with an angular support [theta_min, theta_max].

    Product-type families store B = |z|^gamma b(cos theta) with ``angular``
    holding b.  The screened family is B_lambda of :func:`screened_coulomb_kernel`.
    ``grazing`` kernels wrap a base kernel restricted to theta <= 1/n and
    rescaled per speed so that the momentum transfer follows ``m_target``.
    """

    family: str
    dim: int
    gamma: Optional[float] = None
    nu: Optional[float] = None
    angular: Optional[AngularKernel] = None
    lam: Optional[float] = None
    theta_min: float = 0.0
    theta_max: float = pi
    base: Optional["CollisionKernel"] = None
    n: Optional[int] = None
    m_target: Optional[Callable] = None
    params: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.theta_min < pi:
            raise CollisionKernelError("bad-cutoff", f"theta_min must lie in [0, pi), got {self.theta_min}")
        if self.family in PRODUCT_FAMILIES and self.gamma is not None and self.gamma < -self.dim:
            import warnings
            warnings.warn(f"gamma = {self.gamma} < -dim: |z|^gamma is not locally integrable", stacklevel=2)

    # constructors -----------------------------------------------------
    @classmethod
    def power_law(cls, s: float, d: int = 3, psi0: float = 0.25, theta_min: float = 0.0) -> "CollisionKernel":
        force = PowerLawForce(s, d, psi0)
        gamma, nu = power_law_exponents(s, d)
        return cls("power_law", d, gamma, nu, scattering_angular_kernel(force), theta_min=theta_min,
                   params={"s": s, "psi0": psi0})

    @classmethod
    def rutherford(cls, d: int = 3, theta_min: float = 0.0) -> "CollisionKernel":
        b = AngularKernel.from_function(d, lambda th: rutherford_kernel(d, 1.0, th), order=d - 1.0,
                                        label=f"rutherford(d={d})")
        return cls("rutherford", d, 3.0 - 2.0 * d, d - 1.0, b, theta_min=theta_min)

    @classmethod
    def hard_sphere(cls, d: int = 3, theta_min: float = 0.0) -> "CollisionKernel":
        # beta sin^{d-2} ~ theta near 0 in every dimension: order -2
        b = AngularKernel.from_function(d, lambda th: hard_sphere_kernel(d, 1.0, th), order=-2.0,
                                        label=f"hardsphere(d={d})")
        return cls("hard_sphere", d, 1.0, 0.0, b, theta_min=theta_min)

    @classmethod
    def screened_coulomb(cls, lam: float, theta_min: float = 0.0) -> "CollisionKernel":
        if not lam > 0:
            raise CollisionKernelError("bad-parameter", "screening parameter must be positive")
        return cls("screened_coulomb", 3, None, 0.0, lam=float(lam), theta_min=theta_min)

    @classmethod
    def product(cls, gamma: float, b: AngularKernel, theta_min: float = 0.0) -> "CollisionKernel":
        nu = b.order if b.order is not None else 0.0
        return cls("product", b.dim, float(gamma), nu, b, theta_min=theta_min)

    @classmethod
    def maxwell(cls, b: AngularKernel, theta_min: float = 0.0) -> "CollisionKernel":
        return cls.product(0.0, b, theta_min)

    def with_cutoff(self, theta_min: float) -> "CollisionKernel":
        return CollisionKernel(self.family, self.dim, self.gamma, self.nu, self.angular, self.lam,
                               theta_min, self.theta_max, self.base, self.n, self.m_target, dict(self.params))

    # properties -------------------------------------------------------
    @property
    def is_product(self) -> bool:
        if self.family == "grazing":
            return self.base.is_product
        return self.family in PRODUCT_FAMILIES

    @property
    def singular_order(self) -> Optional[float]:
        """Angular singularity order nu of the measure B sin^{d-2} at theta = 0."""
        if self.family == "grazing":
            return self.base.singular_order
        if self.family == "screened_coulomb":
            return None
        return self.angular.order

    @property
    def large_speed_exponent(self) -> float:
        """Exponent e with B(R, .) ~ R^e as R -> infinity at fixed theta > 0."""
        if self.family == "grazing":
            return self.base.large_speed_exponent
        if self.family == "screened_coulomb":
            return -3.0
        return float(self.gamma)

    @property
    def label(self) -> str:
        if self.family == "grazing":
            return f"grazing({self.base.label},n={self.n})"
        extra = ",".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"{self.family}({extra})" if extra else f"{self.family}(d={self.dim})"

    # evaluation -------------------------------------------------------
    def _raw(self, z, theta):
        if self.family == "screened_coulomb":
            return screened_coulomb_kernel(z, theta, self.lam)
        if self.family == "grazing":
            return self.base._raw(z, theta) * self.grazing_scale(z)
        return np.asarray(z, dtype=float) ** self.gamma * self.angular(theta)

    def B(self, z_mag, theta):
        """Kernel value with the angular support applied."""
        theta = np.asarray(theta, dtype=float)
        val = self._raw(z_mag, theta)
        lo, hi = self.support
        return np.where((theta >= lo) & (theta <= hi), val, 0.0)

    @property
    def support(self):
        if self.family == "grazing":
            lo, hi = self.base.support
            return max(lo, self.theta_min), min(hi, self.theta_max)
        if self.angular is not None:
            return max(self.angular.theta_lo, self.theta_min), min(self.angular.theta_hi, self.theta_max)
        return self.theta_min, self.theta_max

    def section(self, z_mag: float = 1.0) -> AngularKernel:
        """theta -> B(|z|, cos theta) as an :class:`AngularKernel`."""
        lo, hi = self.support
        if self.is_product:
            root = self if self.family != "grazing" else self.base
            scale = z_mag ** root.gamma * (self.grazing_scale(z_mag) if self.family == "grazing" else 1.0)
            b = root.angular
            if lo == 0.0 and hi >= pi and scale == 1.0:
                return b
            return b.restricted(lo, hi, scale)
        root = self if self.family != "grazing" else self.base
        width = 2.0 / (z_mag * np.sqrt(root.lam))
        fac = self.grazing_scale(z_mag) if self.family == "grazing" else 1.0
        return AngularKernel(3, "density", func=lambda th: fac * screened_coulomb_kernel(z_mag, th, root.lam),
                             theta_lo=lo, theta_hi=hi, scale=width, label=f"screened(lam={root.lam:g})")

    def grazing_scale(self, z_mag: float) -> float:
        if self.family != "grazing":
            return 1.0
        if self.base.is_product:
            key = "scale1"
            if key not in self._cache:
                self._cache[key] = self._scale_at(1.0)
            return self._cache[key]
        key = ("scale", float(z_mag))
        if key not in self._cache:
            self._cache[key] = self._scale_at(float(z_mag))
        return self._cache[key]

    def _scale_at(self, z: float) -> float:
        restricted = CollisionKernel(self.base.family, self.base.dim, self.base.gamma, self.base.nu,
                                     self.base.angular, self.base.lam, max(self.base.theta_min, self.theta_min),
                                     min(self.base.theta_max, self.theta_max), params=dict(self.base.params))
        got = momentum_transfer(restricted, z)
        return float(self.m_target(z)) / got


def momentum_transfer(kernel: CollisionKernel, z_mag: float) -> float:
    """M(|z|) = int (1 - k.sigma) B(|z|, k.sigma) dsigma."""
    order = kernel.singular_order
    lo, _ = kernel.support
    if order is not None and order >= 2 and lo == 0.0:
        raise CollisionKernelError("divergent-M", f"angular order {order} >= 2 without cutoff")
    if kernel.family == "grazing" and kernel.base.family == "screened_coulomb":
        return float(kernel.m_target(z_mag))
    return momentum_cross_section(kernel.section(z_mag), n=24)


def _speed_ratio(kernel: CollisionKernel, z: float, R, theta):
    """B(R, theta) / B(z, theta)."""
    if kernel.family == "grazing":
        base = kernel.base
        scale = kernel.grazing_scale(R) / kernel.grazing_scale(z) if not base.is_product else 1.0
        return _speed_ratio(base, z, R, theta) * scale
    if kernel.family == "screened_coulomb":
        return screened_coulomb_kernel(R, theta, kernel.lam) / screened_coulomb_kernel(z, theta, kernel.lam)
    return (np.asarray(R, dtype=float) / z) ** kernel.gamma


def compensated_adjoint(kernel: CollisionKernel, z_mag: float) -> float:
    """S(|z|) = |S^{d-2}| int [cos^{-d}(t/2) B(|z|/cos(t/2), t) - B(|z|, t)] sin^{d-2}(t) dt.

    The bracket vanishes like t^2 B at t = 0, so S is finite when the angular
    order is below 2.  Near t = pi the first term behaves like (pi - t)^{-2-e}
    with e the large-speed exponent of B, which is integrable only for e < -1;
    kernels with larger e need an angular support bounded away from pi.
    """
    d = kernel.dim
    lo, hi = kernel.support
    order = kernel.singular_order
    if order is not None and order >= 2 and lo == 0.0:
        raise CollisionKernelError("divergent-S", f"angular order {order} >= 2 without cutoff")
    if hi >= pi and kernel.large_speed_exponent >= -1.0:
        raise CollisionKernelError(
            "divergent-S",
            f"nonintegrable singularity at theta = pi (large-speed exponent {kernel.large_speed_exponent:g})")
    S0 = sphere_area(d - 1)
    sec = kernel.section(z_mag)
    if sec.kind == "atomic":
        th, w = sec.angles, sec.masses
        c = np.cos(th / 2.0)
        return float(S0 * np.sum(w * (c ** (-d) * _speed_ratio(kernel, z_mag, z_mag / c, th) - 1.0)))

    def integrand(t):
        c = np.cos(t / 2.0)
        return (c ** (-d) * _speed_ratio(kernel, z_mag, z_mag / c, t) - 1.0) * sec(t) * np.sin(t) ** (d - 2)

    brk = [x for x in (1e-3, 1e-2, 0.1, 1.0, pi / 2, 3.0) if lo < x < hi]
    val, _ = quad(integrand, lo, hi, points=brk or None, limit=400, epsabs=1e-13, epsrel=1e-10)
    return float(S0 * val)


def gamma_bar(kernel: CollisionKernel, r: float, resolution: float = 1e-3) -> float:
    """sup_theta |(|z|/B) dB/d|z|| at |z| = r.

    Product kernels return |gamma| exactly; other kernels are sampled on a
    theta grid of the given resolution with a centered difference in log r.
    """
    if kernel.is_product:
        root = kernel.base if kernel.family == "grazing" else kernel
        return abs(float(root.gamma))
    lo, hi = kernel.support
    th = np.arange(max(lo, resolution), hi + 0.5 * resolution, resolution)
    th = th[th <= hi]
    h = 1e-5
    lp = np.log(kernel.B(r * np.exp(h), th))
    lm = np.log(kernel.B(r * np.exp(-h), th))
    return float(np.max(np.abs((lp - lm) / (2.0 * h))))


def gamma_bar_sup(kernel: CollisionKernel, r_grid=None) -> float:
    """sup over |z| of gamma_bar(kernel, |z|) on a log-spaced speed grid."""
    if kernel.is_product:
        return gamma_bar(kernel, 1.0)
    if r_grid is None:
        r_grid = np.geomspace(1e-3, 1e3, 61)
    return float(max(gamma_bar(kernel, r) for r in r_grid))


def grazing_family(kernel: CollisionKernel, n: int, m_inf: Optional[Callable] = None) -> CollisionKernel:
    """Kernel restricted to theta <= 1/n with momentum transfer held at M(|z|).

    ``m_inf`` prescribes the limit M_inf(|z|) when the base kernel has no
    finite momentum transfer.
    """
    if n < 1:
        raise CollisionKernelError("bad-parameter", "n must be >= 1")
    if m_inf is None:
        try:
            momentum_transfer(kernel, 1.0)
        except CollisionKernelError as exc:
            raise CollisionKernelError("divergent-M", "base kernel has infinite M; pass m_inf") from exc
        if kernel.is_product:
            m1 = momentum_transfer(kernel, 1.0)
            g = kernel.gamma
            m_inf = lambda z: m1 * z ** g
        else:
            m_inf = lambda z: momentum_transfer(kernel, z)
    if kernel.family == "grazing":
        kernel = kernel.base
    return CollisionKernel("grazing", kernel.dim, kernel.gamma, kernel.nu, None, None,
                           0.0, min(kernel.theta_max, 1.0 / n), base=kernel, n=int(n), m_target=m_inf)


def kernels_table(s: float, dim: int, n: int):
    """Rows (theta, b, B at |z| = 1, gamma, nu) on n interior angles."""
    force = PowerLawForce(s, dim)
    gamma, nu = power_law_exponents(s, dim)
    th = (np.arange(n) + 0.5) * pi / n
    th = np.clip(th, 1e-3, pi / (1.0 + 2e-4))
    b = angular_kernel_from_scattering(force, th)
    B1 = scattering_cross_section(force, 1.0, th)
    return [(float(t), float(x), float(y), gamma, nu) for t, x, y in zip(th, b, B1)]
