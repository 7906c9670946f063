"""Nonlocal Gamma calculus on the sphere and the Fisher-monotonicity criterion.

For an angular kernel beta, L_beta f(k) = int [f(sigma) - f(k)] beta(k.sigma) dsigma
and

    Gamma_beta(f)(k)   = 1/2 int (f(sigma) - f(k))^2 beta,
    Gamma_1beta(f)(k)  = 1/2 int |grad f(sigma) - grad f(k)|^2_{k,sigma} beta
                       = 1/2 L_beta |grad f|^2 - grad f . grad L_beta f,
    Gamma_I(f)(k)      = int f(sigma) |grad log f(sigma) - grad log f(k)|^2_{k,sigma} beta.

Two routes are implemented: a direct one (quadrature over sigma around k with
the transport map P_{k sigma}) and a spectral one (L_beta acts on harmonics of
degree l by -nu_l).  The criterion integrals use the spectral route; the
direct route is kept as an independent check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import pi
from typing import Optional

import numpy as np
from scipy.special import sph_harm_y

from .spectral import AngularKernel, sigma_of_beta, sphere_area, spectrum
from .sphere_ops import (GeometryError, SphereFunction, SphericalGrid, orthonormal_frame,
                         p_transport, transported_sq_dist)

FLOOR_REL = 1e-12


class CriterionError(ValueError):
    """Raised for invalid criterion requests; ``code`` is a short tag."""

    def __init__(self, code: str, message: str = "", last=None):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
        self.last = last


@dataclass
class CriterionReport:
    """lhs = int Gamma_beta(sqrt F), rhs = int F Gamma_1beta(log F), ratio = rhs/lhs."""

    lhs: float
    rhs: float
    ratio: float
    K_estimate: float
    infinite: bool = False
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "ratio": None if self.infinite else self.ratio,
                "ratio_infinite": self.infinite, "K_estimate": None if self.infinite else self.K_estimate,
                "metadata": self.metadata}


# ---------------------------------------------------------------------------
# Spectral route


def kernel_multiplier(beta: AngularKernel, lmax: int) -> np.ndarray:
    """nu_l(beta) for l <= lmax, cached on the kernel."""
    key = ("nu", lmax)
    if key not in beta.meta:
        beta.meta[key] = spectrum(beta, lmax).nu
    return beta.meta[key]


def _generator_mult(beta: AngularKernel, F: SphereFunction) -> np.ndarray:
    nu = kernel_multiplier(beta, F.grid.lmax)
    if not np.all(np.isfinite(nu)):
        if not F.even:
            raise CriterionError("odd-divergent", "kernel has infinite odd eigenvalues; F must be even")
        nu = np.where(np.isfinite(nu), nu, 0.0)
    return -nu


def L_beta(F: SphereFunction, beta: AngularKernel) -> SphereFunction:
    """L_beta F through the multiplier -nu_l."""
    return F.apply_multiplier(_generator_mult(beta, F))


def _sq(v: np.ndarray) -> np.ndarray:
    return np.sum(v * v, axis=-1)


def _force_even(grid: SphericalGrid, values) -> SphereFunction:
    v = np.asarray(values, dtype=float)
    v = 0.5 * (v + v[grid.antipode])
    return SphereFunction(grid, v, even=True)


def integral_gamma_beta(g: SphereFunction, beta: AngularKernel) -> float:
    """int Gamma_beta(g) = -int g L_beta g."""
    return float(-g.grid.integrate(g.values * L_beta(g, beta).values))


def gamma_one_beta_spectral(F: SphereFunction, beta: AngularKernel) -> np.ndarray:
    """Gamma_1beta(F) at every node as 1/2 L_beta |grad F|^2 - grad F . grad L_beta F."""
    mult = _generator_mult(beta, F)
    gF = F.gradient()
    g2 = F.with_values(_sq(gF))
    gLF = F.gradient(mult)
    return 0.5 * g2.apply_multiplier(mult).values - np.sum(gF * gLF, axis=1)


def integral_F_gamma_one(F: SphereFunction, G: SphereFunction, beta: AngularKernel) -> float:
    """int F Gamma_1beta(G) = 1/2 int (L_beta F) |grad G|^2 - int F grad G . grad L_beta G."""
    mult = _generator_mult(beta, G if G.even else F)
    gG = G.gradient()
    gLG = G.gradient(mult)
    LF = F.apply_multiplier(mult).values
    w = F.grid.integrate
    return float(0.5 * w(LF * _sq(gG)) - w(F.values * np.sum(gG * gLG, axis=1)))


def sphere_fisher(F: SphereFunction) -> float:
    """I(F) = int F |grad log F|^2 on the sphere."""
    G = F.with_values(np.log(F.values))
    return float(F.grid.integrate(F.values * _sq(G.gradient())))


def fisher_dissipation_sphere(F: SphereFunction, beta: AngularKernel, route: str = "spectral") -> float:
    """-I'(F) . L_beta F = int Gamma_I(F).

    ``spectral``: -(2 int grad G . grad L F - int |grad G|^2 L F) with G = log F;
    ``direct``: quadrature of :func:`gamma_I` over the grid nodes;
    ``symmetric``: 2 int F Gamma_1beta(log F).
    """
    G = F.with_values(np.log(F.values))
    if route == "spectral":
        mult = _generator_mult(beta, F)
        gG = G.gradient()
        gLF = F.gradient(mult)
        LF = F.apply_multiplier(mult).values
        w = F.grid.integrate
        return float(-(2.0 * w(np.sum(gG * gLF, axis=1)) - w(_sq(gG) * LF)))
    if route == "symmetric":
        return 2.0 * integral_F_gamma_one(F, G, beta)
    if route == "direct":
        vals = np.array([gamma_I(F, beta, i) for i in range(F.grid.size)])
        return F.grid.integrate(vals)
    raise CriterionError("bad-route", f"unknown route {route!r}")


def linear_evolve(F: SphereFunction, nu: np.ndarray, t: float) -> SphereFunction:
    """e^{-t nu_l} on each harmonic component."""
    nu = np.where(np.isfinite(nu), nu, 0.0) if F.even else nu
    return F.apply_multiplier(np.exp(-t * np.asarray(nu, dtype=float)))


# ---------------------------------------------------------------------------
# Direct route


def _node_vector(F: SphereFunction, k) -> np.ndarray:
    if np.ndim(k) == 0:
        return F.grid.nodes[int(k)]
    k = np.asarray(k, dtype=float)
    return k / np.linalg.norm(k)


def orbit(k, beta: AngularKernel, n_theta: int = 16, n_phi: int = 24):
    """Points sigma and weights w with sum w g(sigma) ~ int g(sigma) beta(k.sigma) dsigma."""
    k = np.asarray(k, dtype=float)
    d = k.size
    if d != beta.dim:
        raise CriterionError("bad-dim", "kernel and point dimensions differ")
    th, wt = beta.theta_measure(n_theta)
    frame = orthonormal_frame(k)
    if d == 2:
        e = frame[0]
        pts = [np.cos(th)[:, None] * k + s * np.sin(th)[:, None] * e for s in (1.0, -1.0)]
        return np.concatenate(pts), np.concatenate([wt, wt])
    if d == 3:
        phi = 2 * pi * (np.arange(n_phi) + 0.5) / n_phi
        dirs = np.cos(phi)[:, None] * frame[0] + np.sin(phi)[:, None] * frame[1]
        pts = np.cos(th)[:, None, None] * k + np.sin(th)[:, None, None] * dirs[None, :, :]
        w = np.repeat(wt, n_phi) * (2 * pi / n_phi)
        return pts.reshape(-1, 3), w
    raise CriterionError("bad-dim", "direct quadrature is implemented for d in {2, 3}")


def gamma_beta(F: SphereFunction, beta: AngularKernel, k, **kw) -> float:
    """Gamma_beta(F)(k) = 1/2 int (F(sigma) - F(k))^2 beta(k.sigma) dsigma."""
    kv = _node_vector(F, k)
    pts, w = orbit(kv, beta, **kw)
    Fk = F.values[int(k)] if np.ndim(k) == 0 else F.evaluate(kv[None])[0]
    return float(0.5 * np.sum(w * (F.evaluate(pts) - Fk) ** 2))


def gamma_one_beta(F: SphereFunction, beta: AngularKernel, k, **kw) -> float:
    """Gamma_1beta(F)(k) = 1/2 int |grad F(sigma) - grad F(k)|^2_{k,sigma} beta dsigma."""
    kv = _node_vector(F, k)
    pts, w = orbit(kv, beta, **kw)
    gk = F.gradient_at(kv[None])[0]
    gs = F.gradient_at(pts)
    kk = np.broadcast_to(kv, pts.shape)
    dist = transported_sq_dist(kk, pts, np.broadcast_to(gk, pts.shape), gs)
    return float(0.5 * np.sum(w * dist))


def gamma_one_beta_decomposed(F: SphereFunction, beta: AngularKernel, k, **kw) -> float:
    """1/2 int |grad F(sigma) - P_{k sigma} grad F(k)|^2 beta + (d-2) Sigma(beta) |grad F(k)|^2."""
    kv = _node_vector(F, k)
    pts, w = orbit(kv, beta, **kw)
    gk = F.gradient_at(kv[None])[0]
    gs = F.gradient_at(pts)
    kk = np.broadcast_to(kv, pts.shape)
    moved = p_transport(kk, pts, np.broadcast_to(gk, pts.shape))
    d = kv.size
    return float(0.5 * np.sum(w * _sq(gs - moved)) + (d - 2) * sigma_of_beta(beta) * float(gk @ gk))


def gamma_I(F: SphereFunction, beta: AngularKernel, k, **kw) -> float:
    """Gamma_I(F)(k) = int F(sigma) |grad log F(sigma) - grad log F(k)|^2_{k,sigma} beta dsigma."""
    kv = _node_vector(F, k)
    G = F.with_values(np.log(F.values))
    pts, w = orbit(kv, beta, **kw)
    xk = G.gradient_at(kv[None])[0]
    xs = G.gradient_at(pts)
    Fs = np.exp(G.evaluate(pts))
    kk = np.broadcast_to(kv, pts.shape)
    dist = transported_sq_dist(kk, pts, np.broadcast_to(xk, pts.shape), xs)
    return float(np.sum(w * Fs * dist))


# ---------------------------------------------------------------------------
# Diffusive case


def gamma2_diffusive(F: SphereFunction, k=None):
    """Gamma_2(F) = |Hess F|_HS^2 + (d-2) |grad F|^2 at every node (or at node k)."""
    H = F.hessian()
    g = F.gradient()
    val = np.einsum("iab,iab->i", H, H) + (F.grid.dim - 2) * _sq(g)
    return val if k is None else float(val[int(k)])


def gamma2_spectral(F: SphereFunction) -> np.ndarray:
    """Gamma_2(F) = 1/2 Laplacian |grad F|^2 - grad F . grad Laplacian F."""
    ells = np.arange(F.grid.lmax + 1)
    lap = -ells * (ells + F.grid.dim - 2.0)
    g = F.gradient()
    g2 = F.with_values(_sq(g))
    return 0.5 * g2.apply_multiplier(lap).values - np.sum(g * F.gradient(lap), axis=1)


def curvature_dimension_gap(F: SphereFunction) -> np.ndarray:
    """Gamma_2(F) - (Laplacian F)^2/(d-1) - (d-2) |grad F|^2, pointwise (CD(d-2, d-1) says >= 0)."""
    d = F.grid.dim
    lapF = F.laplacian().values
    return gamma2_diffusive(F) - lapF ** 2 / (d - 1) - (d - 2) * _sq(F.gradient())


# ---------------------------------------------------------------------------
# Criterion


def _floored(F: SphereFunction) -> SphereFunction:
    v = np.asarray(F.values, dtype=float)
    if np.any(v < 0) or not np.any(v > 0):
        raise CriterionError("bad-density", "F must be nonnegative and not identically zero")
    return F.with_values(np.maximum(v, FLOOR_REL * v.max()))


def criterion_ratio(F: SphereFunction, beta: AngularKernel, meta: Optional[dict] = None) -> CriterionReport:
    """int Gamma_beta(sqrt F) against int F Gamma_1beta(log F) for an even positive F."""
    if not F.even:
        raise CriterionError("not-even", "the criterion is stated for even F")
    F = _floored(F)
    root = F.with_values(np.sqrt(F.values))
    G = F.with_values(np.log(F.values))
    lhs = integral_gamma_beta(root, beta)
    rhs = integral_F_gamma_one(F, G, beta)
    info = {"kernel": beta.label, "dim": F.grid.dim, "grid_resolution": F.grid.resolution,
            "grid_lmax": F.grid.lmax}
    info.update(meta or {})
    return _report(lhs, rhs, info)


def diffusive_ratio(F: SphereFunction, meta: Optional[dict] = None) -> CriterionReport:
    """int Gamma_1(sqrt F) against int F Gamma_2(log F)."""
    if not F.even:
        raise CriterionError("not-even", "the criterion is stated for even F")
    F = _floored(F)
    root = F.with_values(np.sqrt(F.values))
    G = F.with_values(np.log(F.values))
    lhs = float(F.grid.integrate(_sq(root.gradient())))
    rhs = float(F.grid.integrate(F.values * gamma2_diffusive(G)))
    info = {"kernel": "laplacian", "dim": F.grid.dim, "grid_resolution": F.grid.resolution}
    info.update(meta or {})
    return _report(lhs, rhs, info)


def _report(lhs: float, rhs: float, info: dict) -> CriterionReport:
    scale = max(abs(rhs), 1e-300)
    if lhs <= 1e-14 * scale or lhs == 0.0:
        return CriterionReport(lhs, rhs, float("inf"), float("inf"), True, info)
    r = rhs / lhs
    return CriterionReport(lhs, rhs, r, r, False, info)


def even_harmonic_basis(grid: SphericalGrid, lmax: int = 16) -> np.ndarray:
    """Real harmonics of even degree 2..lmax at the grid nodes, shape (n, p)."""
    X = grid.nodes
    cols = []
    if grid.dim == 2:
        a = np.arctan2(X[:, 1], X[:, 0])
        for l in range(2, lmax + 1, 2):
            cols += [np.cos(l * a), np.sin(l * a)]
    else:
        theta = np.arccos(np.clip(X[:, 2], -1, 1))
        phi = np.arctan2(X[:, 1], X[:, 0])
        for l in range(2, lmax + 1, 2):
            for m in range(-l, l + 1):
                Y = sph_harm_y(l, abs(m), theta, phi)
                if m == 0:
                    cols.append(np.real(Y))
                elif m > 0:
                    cols.append(np.sqrt(2) * (-1) ** m * np.real(Y))
                else:
                    cols.append(np.sqrt(2) * (-1) ** m * np.imag(Y))
    B = np.stack(cols, axis=1)
    norms = np.sqrt(grid.weights @ (B * B))
    return B / norms


def random_even_function(grid: SphericalGrid, rng: np.random.Generator, lmax: int = 8,
                         amplitude: float = 1.0) -> SphereFunction:
    """exp(G) with G a random even band-limited function (decaying coefficients)."""
    B = even_harmonic_basis(grid, lmax)
    degs = _basis_degrees(grid.dim, lmax)
    c = rng.standard_normal(B.shape[1]) / degs
    G = B @ c
    G *= amplitude / max(np.abs(G).max(), 1e-300)
    return _force_even(grid, np.exp(G))


def _basis_degrees(dim: int, lmax: int) -> np.ndarray:
    out = []
    for l in range(2, lmax + 1, 2):
        out += [l] * (2 if dim == 2 else 2 * l + 1)
    return np.asarray(out, dtype=float)


def ratio_minimize(beta: AngularKernel, grid: SphericalGrid, init: Optional[SphereFunction] = None,
                   iterations: int = 40, seed: int = 0, lmax: int = 16, fd_step: float = 1e-6,
                   amplitude: float = 1.0, objective=None) -> CriterionReport:
    """Gradient descent on the coefficients of G = log F (even, degree <= lmax).

    Gradients are forward differences in the coefficients; step lengths are
    Barzilai-Borwein with Armijo backtracking.  Returns the report of the best
    iterate.  ``objective`` replaces :func:`criterion_ratio` (used for the diffusive ratio).
    """
    B = even_harmonic_basis(grid, lmax)
    score = objective or (lambda F: criterion_ratio(F, beta))
    if init is None:
        rng = np.random.default_rng(seed)
        c = rng.standard_normal(B.shape[1]) / _basis_degrees(grid.dim, lmax)
        c *= amplitude / max(np.abs(B @ c).max(), 1e-300)
    else:
        G0 = np.log(np.maximum(init.values, FLOOR_REL * init.values.max()))
        c = B.T @ (grid.weights * G0)

    def evaluate(coef):
        rep = score(_force_even(grid, np.exp(B @ coef)))
        return rep, (rep.ratio if not rep.infinite else np.inf)

    best_rep, best = evaluate(c)
    if not np.isfinite(best):
        raise CriterionError("divergence", "initial ratio is not finite", last=best_rep)
    cur = best

    def fd_gradient(coef, val):
        grad = np.empty_like(coef)
        for j in range(coef.size):
            e = coef.copy()
            e[j] += fd_step
            grad[j] = (evaluate(e)[1] - val) / fd_step
        if not np.all(np.isfinite(grad)):
            raise CriterionError("divergence", "non-finite gradient", last=best_rep)
        return grad

    grad = fd_gradient(c, cur)
    step = 0.1 * max(np.linalg.norm(c), 1e-3) / max(np.linalg.norm(grad), 1e-300)
    history = [cur]
    for _ in range(iterations):
        gn = np.linalg.norm(grad)
        if gn == 0:
            break
        accepted = False
        while step * gn > 1e-12:
            trial = c - step * grad
            rep, val = evaluate(trial)
            if np.isnan(val):
                raise CriterionError("divergence", "ratio became NaN", last=best_rep)
            if val < cur - 1e-4 * step * gn * gn:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        new_grad = fd_gradient(trial, val)
        # Barzilai-Borwein step length for the next iteration
        s_vec, y_vec = trial - c, new_grad - grad
        sy = float(s_vec @ y_vec)
        step = float(s_vec @ s_vec) / sy if sy > 0 else 2.0 * step
        c, cur, grad = trial, val, new_grad
        if val < best:
            best, best_rep = val, rep
        history.append(cur)
    best_rep.metadata.update({"mode": "minimize", "iterations": len(history) - 1, "seed": seed,
                              "basis_lmax": lmax, "history": [float(h) for h in history]})
    return best_rep


# ---------------------------------------------------------------------------
# Counterexample family on the circle


def _smooth_step(u):
    """C-infinity step: 0 for u <= 0, 1 for u >= 1."""
    u = np.asarray(u, dtype=float)
    a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
    b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return a / (a + b)


def counterexample_profile(alpha, N: int, A: float, delta: float = 0.25):
    """Values of (1 + A psi) h at angles alpha, with h and psi as below.

    h is pi-periodic, equal to i + 1 on I_i = [(i - delta) pi/N, (i + delta) pi/N]
    and moves between consecutive plateaus across the gaps by smooth steps of
    half-width delta pi/(4N).  psi is pi/N-periodic, equal to 1 on
    |alpha - i pi/N| <= delta pi/(2N) and vanishing outside the plateaus.
    """
    if not 0 < delta < 0.5:
        raise CriterionError("bad-parameter", "delta must lie in (0, 1/2)")
    alpha = np.asarray(alpha, dtype=float)
    step = pi / N
    w = delta * pi / (4 * N)
    a = np.mod(alpha + 0.5 * step, pi) - 0.5 * step  # in [-step/2, pi - step/2)
    i = np.floor(a / step + 0.5)  # plateau index of the nearest centre
    u = a - i * step  # offset from the centre, in [-step/2, step/2)
    # h: value i+1 near centre i; blend towards the neighbouring plateau across each gap
    nxt = np.where(u >= 0, np.mod(i + 1, N), np.mod(i - 1, N))
    gap = np.abs(u) - (0.5 * step - w)
    blend = 0.5 * _smooth_step(gap / (2 * w) + 0.5)
    # at |u| = step/2 both sides meet with blend = 1/2
    h = (1 - blend) * (i + 1) + blend * (nxt + 1)
    psi = 1.0 - _smooth_step((np.abs(u) - delta * step / 2) / w)
    return (1.0 + A * psi) * h


def counterexample_family(N: int, masses, A: float, grid: Optional[SphericalGrid] = None,
                          delta: float = 0.25) -> SphereFunction:
    """F = (1 + A psi) h on S^1 (see :func:`counterexample_profile`)."""
    masses = np.asarray(masses, dtype=float)
    if len(masses) != N + 1:
        raise CriterionError("bad-parameter", f"need N+1 = {N + 1} masses")
    if np.any(masses < 0) or masses[1:N].sum() <= 0:
        raise CriterionError("bad-parameter", "need nonnegative masses with sum_{1<=i<=N-1} beta_i > 0")
    if grid is None:
        from .sphere_ops import build_grid
        grid = build_grid(2, 4096)
    if grid.dim != 2:
        raise CriterionError("bad-dim", "the counterexample lives on the circle")
    alpha = np.arctan2(grid.nodes[:, 1], grid.nodes[:, 0])
    return _force_even(grid, counterexample_profile(alpha, N, A, delta))


def counterexample_rhs_closed_form(N: int, masses, delta: float = 0.25, n: int = 4096) -> float:
    """1/2 sum_i beta_i int F [(log h)'(alpha + theta_i) - (log h)'(alpha)]^2 with A = 0 (psi drops out).

    beta_i = 2 m_i converts the atomic masses of the theta-measure into the
    weights of the orbit sum on S^1 (the atom at theta_i acts at +theta_i and -theta_i).
    """
    alpha = 2 * pi * (np.arange(n) + 0.5) / n
    h = counterexample_profile(alpha, N, 0.0, delta)
    m = np.fft.fftfreq(n, 1.0 / n)
    lh = np.log(h)
    dlh = np.real(np.fft.ifft(1j * m * np.fft.fft(lh)))
    total = 0.0
    for i, mi in enumerate(np.asarray(masses, dtype=float)):
        shift = int(round(i * n / (2 * N)))
        for s in (shift, -shift):
            total += 0.5 * mi * np.sum(h * (np.roll(dlh, -s) - dlh) ** 2) * (2 * pi / n)
    return float(total)


# ---------------------------------------------------------------------------
# One-dimensional identities


@dataclass
class McKeanReport:
    f2_over_f: float
    f2f1sq_over_f2: float
    f1_4_over_f3: float
    f_logf2_sq: float
    sqrtf2_sq: float
    ipp_residual: float
    flogf2_residual: float
    ineqflogf2_residual: float
    optimal_margin: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def mckean_identities(f) -> McKeanReport:
    """Integration-by-parts identities on S^1 for a positive periodic f (values on an equispaced grid).

    int f'' f'^2 / f^2 = (2/3) int f'^4 / f^3,
    int f ((log f)'')^2 = int f''^2 / f - (1/3) int f'^4 / f^3
                        = 4 int ((sqrt f)'')^2 + (1/12) int f'^4 / f^3,
    int f'^4 / f^3 <= (9/4) int f''^2 / f.
    """
    v = np.asarray(f.values if isinstance(f, SphereFunction) else f, dtype=float)
    if np.any(v <= 0):
        raise CriterionError("bad-density", "f must be positive")
    n = v.size
    m = np.fft.fftfreq(n, 1.0 / n)
    m[np.abs(m) == n // 2] = 0.0 if n % 2 == 0 else m[np.abs(m) == n // 2]

    def deriv(x, k):
        return np.real(np.fft.ifft((1j * m) ** k * np.fft.fft(x)))

    d1, d2 = deriv(v, 1), deriv(v, 2)
    lg2 = deriv(np.log(v), 2)
    s2 = deriv(np.sqrt(v), 2)
    w = 2 * pi / n
    q1 = w * np.sum(d2 ** 2 / v)
    q2 = w * np.sum(d2 * d1 ** 2 / v ** 2)
    q3 = w * np.sum(d1 ** 4 / v ** 3)
    q4 = w * np.sum(v * lg2 ** 2)
    q5 = w * np.sum(s2 ** 2)
    return McKeanReport(q1, q2, q3, q4, q5, q2 - 2.0 * q3 / 3.0, q4 - (q1 - q3 / 3.0),
                        q4 - (4.0 * q5 + q3 / 12.0), 2.25 * q1 - q3)


# ---------------------------------------------------------------------------
# Entropy dissipation


def entropy_dissipation_sphere(F: SphereFunction, beta: AngularKernel, route: str = "spectral") -> float:
    """D_beta(F) = 1/2 iint (F(sigma) - F(k)) (log F(sigma) - log F(k)) beta = -int log F L_beta F."""
    F = _floored(F)
    G = F.with_values(np.log(F.values))
    if route == "spectral":
        return float(-F.grid.integrate(G.values * L_beta(F, beta).values))
    if route == "direct":
        tot = np.empty(F.grid.size)
        for i, k in enumerate(F.grid.nodes):
            pts, w = orbit(k, beta)
            Fs = np.exp(G.evaluate(pts))
            tot[i] = 0.5 * np.sum(w * (Fs - F.values[i]) * (np.log(Fs) - G.values[i]))
        return F.grid.integrate(tot)
    raise CriterionError("bad-route", f"unknown route {route!r}")


def sphere_entropy(F: SphereFunction) -> float:
    """H(F) = int F log(F / <F>) with <F> the mean of F."""
    F = _floored(F)
    mean = F.integrate() / sphere_area(F.grid.dim)
    return float(F.grid.integrate(F.values * np.log(F.values / mean)))


def entropic_gap_check(F: SphereFunction, beta: AngularKernel, L_sharp: float) -> bool:
    """D_beta(F) >= 2 L_sharp H(F)."""
    return entropy_dissipation_sphere(F, beta) >= 2.0 * L_sharp * sphere_entropy(F)
