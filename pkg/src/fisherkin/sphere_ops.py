"""Geometry and quadrature on S^{d-1}.

The transport operator P_{k sigma}, the transported squared distance, subsphere
averages, spherical grids and band-limited functions on S^1 and S^2.

Functions on a grid are represented by their values at the nodes; derivatives
and off-grid values come from the zonal projectors

    Pi_l F(x) = N(d,l)/|S^{d-1}| int P_l(x.sigma) F(sigma) dsigma,

which the grids integrate exactly for band-limited F.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import pi

import numpy as np
from numpy.polynomial.legendre import leggauss

from .spectral import multiplicity, sphere_area, zonal_series


class GeometryError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Linear algebra of P_{k sigma}


def unit(v) -> np.ndarray:
    """Normalise ``v`` along its last axis."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise GeometryError("cannot normalise the zero vector")
    return v / n


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def p_transport(k, sigma, x):
    """P_{k sigma} x = (k.sigma) x + (x.k) sigma - (sigma.x) k (batched on leading axes)."""
    k, sigma, x = (np.asarray(a, dtype=float) for a in (k, sigma, x))
    if not (k.shape[-1] == sigma.shape[-1] == x.shape[-1]):
        raise GeometryError("dimension mismatch")
    ks = _dot(k, sigma)[..., None]
    return ks * x + _dot(x, k)[..., None] * sigma - _dot(sigma, x)[..., None] * k


def p_matrix(k, sigma) -> np.ndarray:
    """Matrix of P_{k sigma} = (k.sigma) I + sigma (x) k - k (x) sigma."""
    k, sigma = np.asarray(k, dtype=float), np.asarray(sigma, dtype=float)
    d = k.shape[-1]
    return np.dot(k, sigma) * np.eye(d) + np.outer(sigma, k) - np.outer(k, sigma)


def transported_sq_dist(k, sigma, x, y):
    """|y - x|^2_{k,sigma} = |x|^2 + |y|^2 - 2 (P_{k sigma} x).y."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return _dot(x, x) + _dot(y, y) - 2.0 * _dot(p_transport(k, sigma, x), y)


def defect(k, sigma, x):
    """|x|^2 - |P_{k sigma} x|^2 (nonnegative up to rounding)."""
    px = p_transport(k, sigma, x)
    x = np.asarray(x, dtype=float)
    return _dot(x, x) - _dot(px, px)


def defect_forms(k, sigma, x):
    """Four expressions of |x|^2 - |P x|^2: direct, projected, expanded, tangent."""
    k, sigma, x = (np.asarray(a, dtype=float) for a in (k, sigma, x))
    ks = _dot(k, sigma)
    xk, xs = _dot(x, k), _dot(x, sigma)
    direct = defect(k, sigma, x)
    perp = project_out_pair(k, sigma, x)
    proj = (1.0 - ks ** 2) * _dot(perp, perp)
    expanded = (1.0 - ks ** 2) * _dot(x, x) - xk ** 2 - xs ** 2 + 2.0 * ks * xk * xs
    xt = x - xk[..., None] * k
    pxt = p_transport(k, sigma, xt)
    tangent = _dot(xt, xt) - _dot(pxt, pxt)
    return direct, proj, expanded, tangent


def project_perp(k, x):
    """Pi_{k^perp} x for unit k."""
    k, x = np.asarray(k, dtype=float), np.asarray(x, dtype=float)
    return x - _dot(x, k)[..., None] * k


def project_out_pair(k, sigma, x):
    """Orthogonal projection of x on span(k, sigma)^perp (Gram-Schmidt on the pair)."""
    k, sigma, x = (np.asarray(a, dtype=float) for a in (k, sigma, x))
    e1 = k
    s = sigma - _dot(sigma, k)[..., None] * k
    ns = np.linalg.norm(s, axis=-1, keepdims=True)
    e2 = np.where(ns > 1e-300, s / np.where(ns > 1e-300, ns, 1.0), 0.0)
    return x - _dot(x, e1)[..., None] * e1 - _dot(x, e2)[..., None] * e2


def propPsk_residuals(k, sigma, x, y) -> dict:
    """Residuals of the algebraic identities of P_{k sigma} on batched inputs.

    Keys name the identities; each value is the max absolute residual.
    """
    k, sigma, x, y = (np.asarray(a, dtype=float) for a in (k, sigma, x, y))
    P = p_transport
    res = {}
    res["0_minus_k"] = np.abs(P(-k, sigma, x) + P(k, sigma, x)).max()
    res["0_minus_sigma"] = np.abs(P(k, -sigma, x) + P(k, sigma, x)).max()
    res["i_identity"] = np.abs(P(k, k, x) - x).max()
    res["ii_k_to_sigma"] = np.abs(P(k, sigma, k) - sigma).max()
    xt = project_perp(k, x)
    res["ii_tangent"] = np.abs(_dot(P(k, sigma, xt), sigma)).max()
    res["iii_adjoint"] = np.abs(_dot(P(k, sigma, x), y) - _dot(x, P(sigma, k, y))).max()
    ks = _dot(k, sigma)
    res["iv_a"] = np.abs(_dot(P(k, sigma, sigma), k) - (2 * ks ** 2 - 1)).max()
    res["iv_b"] = np.abs(_dot(P(sigma, k, k), sigma) - (2 * ks ** 2 - 1)).max()
    # (v): rotation on span(k, sigma), multiplication by k.sigma on its complement
    perp = project_out_pair(k, sigma, x)
    res["v_complement"] = np.abs(P(k, sigma, perp) - ks[..., None] * perp).max()
    inplane = x - perp
    res["v_isometry"] = np.abs(np.linalg.norm(P(k, sigma, inplane), axis=-1) - np.linalg.norm(inplane, axis=-1)).max()
    direct, proj, expanded, tangent = defect_forms(k, sigma, x)
    res["vi_projected"] = np.abs(direct - proj).max()
    res["vi_expanded"] = np.abs(direct - expanded).max()
    res["vi_tangent"] = np.abs(direct - tangent).max()
    res["vii_contraction"] = max(0.0, (np.linalg.norm(P(k, sigma, x), axis=-1) - np.linalg.norm(x, axis=-1)).max())
    res["ix_sigma_dot"] = np.abs(_dot(sigma, P(k, sigma, x)) - _dot(k, x)).max()
    # (x): five decompositions of the transported distance
    dist = transported_sq_dist(k, sigma, x, y)
    ys, xk = _dot(y, sigma), _dot(x, k)
    yp, xp = project_perp(sigma, y), project_perp(k, x)
    Px = P(k, sigma, x)
    res["x_1"] = np.abs(dist - (transported_sq_dist(k, sigma, xp, yp) + (ys - xk) ** 2)).max()
    res["x_2"] = np.abs(dist - (direct + _dot(y - Px, y - Px))).max()
    diff = yp - P(k, sigma, xp)
    res["x_3"] = np.abs(_dot(y - Px, y - Px) - (_dot(diff, diff) + (ys - xk) ** 2)).max()
    res["x_4"] = np.abs(dist - (_dot(diff, diff) + direct + (ys - xk) ** 2)).max()
    res["x_5"] = np.abs(dist - transported_sq_dist(sigma, k, y, x)).max()
    res["x_nonneg"] = max(0.0, -(dist - _dot(y - Px, y - Px)).min())
    return {key: float(v) for key, v in res.items()}


def viii_zero_iff_orthogonal(k, sigma, x, tol: float = 1e-12) -> bool:
    """Check P_{k sigma} x = 0 exactly when k, sigma, x are pairwise orthogonal."""
    zero = np.linalg.norm(p_transport(k, sigma, x)) <= tol * max(1.0, np.linalg.norm(x))
    orth = max(abs(np.dot(k, sigma)), abs(np.dot(k, x)), abs(np.dot(sigma, x))) <= tol * max(1.0, np.linalg.norm(x))
    return bool(zero == orth)


def collision_sphere_identity(v, vs, sigma):
    """Return (lhs, rhs) of |(v'-v'_*) - (v-v_*)|^2_{k,sigma} = (|v'-v'_*| - |v-v_*|)^2.

    The post-collisional pair uses v' = (v+v_*)/2 + |v-v_*| sigma/2.
    """
    v, vs, sigma = (np.asarray(a, dtype=float) for a in (v, vs, sigma))
    z = v - vs
    zn = np.linalg.norm(z, axis=-1)
    k = z / zn[..., None]
    vp = 0.5 * (v + vs) + 0.5 * zn[..., None] * sigma
    vsp = 0.5 * (v + vs) - 0.5 * zn[..., None] * sigma
    zp = vp - vsp
    lhs = transported_sq_dist(k, sigma, z, zp)
    rhs = (np.linalg.norm(zp, axis=-1) - zn) ** 2
    return lhs, rhs


# ---------------------------------------------------------------------------
# Subsphere averages


def orthonormal_frame(k) -> np.ndarray:
    """Rows e_1..e_{d-1}: an orthonormal basis of k^perp.

    Gram-Schmidt on the coordinate axes ordered by increasing |k_i|, which is a
    deterministic fallback that never picks an axis nearly parallel to k.
    """
    k = unit(k)
    d = k.size
    order = np.argsort(np.abs(k), kind="stable")
    basis = [k]
    for i in order:
        e = np.zeros(d)
        e[i] = 1.0
        for b in basis:
            e = e - np.dot(e, b) * b
        n = np.linalg.norm(e)
        if n > 1e-8:
            basis.append(e / n)
        if len(basis) == d:
            break
    # one more pass for orthogonality to rounding
    out = []
    for e in basis[1:]:
        for b in [k] + out:
            e = e - np.dot(e, b) * b
        out.append(e / np.linalg.norm(e))
    return np.array(out)


def subsphere_average(A, k) -> float:
    """Average of <A phi, phi> over unit phi in k^perp: tr(A Pi_{k^perp})/(d-1)."""
    A = np.asarray(A, dtype=float)
    k = unit(k)
    d = k.size
    Pi = np.eye(d) - np.outer(k, k)
    return float(np.trace(A @ Pi) / (d - 1))


def subsphere_average_quadrature(A, k, n: int = 512) -> float:
    """Companion evaluation of :func:`subsphere_average` by quadrature on S^{d-2}_{k perp}.

    d = 2: the two points; d = 3: n-point trapezoid on the circle; d >= 4:
    tensor product of trapezoid and Gauss rules in hyperspherical angles.
    """
    A = np.asarray(A, dtype=float)
    k = unit(k)
    d = k.size
    E = orthonormal_frame(k)
    if d == 2:
        phis = np.array([E[0], -E[0]])
        w = np.array([0.5, 0.5])
    elif d == 3:
        a = 2 * pi * np.arange(n) / n
        phis = np.cos(a)[:, None] * E[0] + np.sin(a)[:, None] * E[1]
        w = np.full(n, 1.0 / n)
    else:
        pts, wts = _sphere_product_rule(d - 1, max(8, n // 16))
        phis = pts @ E
        w = wts / wts.sum()
    return float(np.sum(w * np.einsum("ni,ij,nj->n", phis, A, phis)))


def _sphere_product_rule(m: int, n: int):
    """Product rule on S^{m-1} in hyperspherical coordinates (m >= 2)."""
    if m == 2:
        a = 2 * pi * np.arange(2 * n) / (2 * n)
        return np.stack([np.cos(a), np.sin(a)], axis=1), np.full(2 * n, 2 * pi / (2 * n))
    sub_pts, sub_w = _sphere_product_rule(m - 1, n)
    # first angle t in [0, pi] with weight sin^{m-2} t
    x, w = leggauss(n)
    t = 0.5 * pi * (x + 1)
    wt = 0.5 * pi * w * np.sin(t) ** (m - 2)
    pts = np.concatenate([np.cos(ti) * np.ones((len(sub_pts), 1)) for ti in t])
    rest = np.concatenate([np.sin(ti) * sub_pts for ti in t])
    return np.hstack([pts, rest]), np.concatenate([wi * sub_w for wi in wt])


# ---------------------------------------------------------------------------
# Grids and band-limited functions


@dataclass(frozen=True, eq=False)
class SphericalGrid:
    """Quadrature nodes on S^{d-1} (d in {2, 3}) with positive weights."""

    dim: int
    nodes: np.ndarray
    weights: np.ndarray
    lmax: int
    antipode: np.ndarray
    resolution: int
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if abs(self.weights.sum() - sphere_area(self.dim)) > 1e-10:
            raise GeometryError("grid weights do not sum to the sphere area")

    @property
    def size(self) -> int:
        return len(self.weights)

    @cached_property
    def gram(self) -> np.ndarray:
        return np.clip(self.nodes @ self.nodes.T, -1.0, 1.0)

    def zonal_operator(self, coef, deriv: int = 0) -> np.ndarray:
        """Matrix M with (M F)_i = sum_j K(x_i.x_j) w_j F_j, K = sum_l coef_l N_l/|S| P_l^{(deriv)}.

        With deriv = 0 this applies the multiplier ``coef`` to the harmonic
        components; deriv = 1, 2 give the kernels used by gradients and Hessians.
        """
        coef = np.asarray(coef, dtype=float)
        key = ("zonal", deriv, coef.tobytes())
        if key not in self._cache:
            lmax = len(coef) - 1
            norm = np.array([multiplicity(self.dim, l) for l in range(lmax + 1)]) / sphere_area(self.dim)
            K = zonal_series(self.dim, coef * norm, self.gram, deriv)
            if len(self._cache) > 32:
                self._cache.clear()
            self._cache[key] = K * self.weights[None, :]
        return self._cache[key]

    def band_coef(self, lmax=None) -> np.ndarray:
        lmax = self.lmax if lmax is None else lmax
        return np.ones(lmax + 1)

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))


def build_grid(dim: int, resolution: int) -> SphericalGrid:
    """d = 2: ``resolution`` equispaced angles; d = 3: Gauss-Legendre in cos(theta)
    with ``resolution`` nodes times 2*resolution equispaced azimuths.

    Node sets are closed under x -> -x (``antipode`` gives the paired index).
    """
    if dim == 2:
        n = int(resolution)
        if n < 4 or n % 2:
            raise GeometryError("circle grids need an even resolution >= 4")
        a = 2 * pi * (np.arange(n) + 0.5) / n
        nodes = np.stack([np.cos(a), np.sin(a)], axis=1)
        weights = np.full(n, 2 * pi / n)
        anti = (np.arange(n) + n // 2) % n
        lmax = (n - 1) // 2
    elif dim == 3:
        nt = int(resolution)
        if nt < 2:
            raise GeometryError("sphere grids need resolution >= 2")
        nphi = 2 * nt
        z, wz = leggauss(nt)
        phi = 2 * pi * (np.arange(nphi) + 0.5) / nphi
        Z, PH = np.meshgrid(z, phi, indexing="ij")
        R = np.sqrt(1 - Z ** 2)
        nodes = np.stack([R * np.cos(PH), R * np.sin(PH), Z], axis=-1).reshape(-1, 3)
        weights = (wz[:, None] * np.full(nphi, 2 * pi / nphi)[None, :]).ravel()
        it = np.arange(nt)[:, None]
        ip = np.arange(nphi)[None, :]
        anti = ((nt - 1 - it) * nphi + (ip + nt) % nphi).ravel()
        lmax = nt - 1
    else:
        raise GeometryError("quadrature grids exist only for d in {2, 3}")
    return SphericalGrid(dim, nodes, weights, lmax, anti, int(resolution))


class SphereFunction:
    """Values of a function at the nodes of a :class:`SphericalGrid`.

    ``even`` asserts F(-x) = F(x) at paired nodes.  Off-grid values and
    derivatives use the band-limited reconstruction of degree ``grid.lmax``.
    """

    def __init__(self, grid: SphericalGrid, values, even: bool = False, tol: float = 1e-12):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.size,):
            raise GeometryError("values do not match the grid")
        if even:
            gap = np.abs(values - values[grid.antipode]).max()
            if gap > tol * max(1.0, np.abs(values).max()):
                raise GeometryError(f"function is not even (max gap {gap:.3e})")
        self.grid = grid
        self.values = values
        self.even = even

    @classmethod
    def from_callable(cls, grid: SphericalGrid, fn, even: bool = False) -> "SphereFunction":
        return cls(grid, fn(grid.nodes), even=even)

    def __array__(self, dtype=None):
        return np.asarray(self.values, dtype=dtype)

    def with_values(self, values, even=None) -> "SphereFunction":
        return SphereFunction(self.grid, values, self.even if even is None else even)

    def integrate(self) -> float:
        return self.grid.integrate(self.values)

    # spectral synthesis ----------------------------------------------
    def _circle_modes(self, mult=None) -> np.ndarray:
        """Fourier coefficients on S^1 (unit angle offset removed), band-limited."""
        n = self.grid.size
        m = np.fft.fftfreq(n, 1.0 / n)
        c = np.fft.fft(self.values) * np.exp(-1j * m * pi / n)
        ell = np.abs(m).astype(int)
        keep = ell <= self.grid.lmax
        coef = np.ones(n)
        if mult is not None:
            mult = np.asarray(mult, dtype=float)
            coef = np.where(ell < len(mult), mult[np.minimum(ell, len(mult) - 1)], 0.0)
        return np.where(keep, c * coef, 0.0), m

    def _circle_synth(self, modes: np.ndarray, m: np.ndarray, order: int = 0) -> np.ndarray:
        n = self.grid.size
        c = modes * (1j * m) ** order
        return np.real(np.fft.ifft(c * np.exp(1j * m * pi / n)))

    def angle_derivative(self, order: int = 1, mult=None) -> np.ndarray:
        """d^order/dalpha^order of the band-limited reconstruction on S^1."""
        if self.grid.dim != 2:
            raise GeometryError("angle derivatives exist only on the circle")
        modes, m = self._circle_modes(mult)
        return self._circle_synth(modes, m, order)

    def apply_multiplier(self, mult) -> "SphereFunction":
        """Multiply the degree-l component by mult[l] (l <= len(mult)-1)."""
        if self.grid.dim == 2:
            return self.with_values(self.angle_derivative(0, mult))
        M = self.grid.zonal_operator(mult)
        return self.with_values(M @ self.values)

    def band_limited(self, lmax=None) -> "SphereFunction":
        return self.apply_multiplier(self.grid.band_coef(lmax))

    def laplacian(self) -> "SphereFunction":
        ells = np.arange(self.grid.lmax + 1)
        return self.apply_multiplier(-ells * (ells + self.grid.dim - 2.0))

    def gradient(self, mult=None) -> np.ndarray:
        """Intrinsic gradient at every node, shape (n, d); ``mult`` first applies a multiplier."""
        g = self.grid
        X = g.nodes
        if g.dim == 2:
            tang = np.stack([-X[:, 1], X[:, 0]], axis=1)
            return self.angle_derivative(1, mult)[:, None] * tang
        A = g.zonal_operator(g.band_coef() if mult is None else mult, deriv=1)
        AF = A * self.values[None, :]
        grad = AF @ X - ((AF * g.gram).sum(axis=1))[:, None] * X
        return grad - np.sum(grad * X, axis=1)[:, None] * X

    def hessian(self) -> np.ndarray:
        """Intrinsic Hessian at every node, shape (n, d, d), acting on x_i^perp."""
        g = self.grid
        X = g.nodes
        d = g.dim
        if d == 2:
            tang = np.stack([-X[:, 1], X[:, 0]], axis=1)
            return self.angle_derivative(2)[:, None, None] * np.einsum("ia,ib->iab", tang, tang)
        c = g.gram
        A1 = g.zonal_operator(g.band_coef(), deriv=1) * self.values[None, :]
        A2 = g.zonal_operator(g.band_coef(), deriv=2) * self.values[None, :]
        # Pi x_j = x_j - c_ij x_i
        H = np.einsum("ij,ja,jb->iab", A2, X, X)
        t = np.einsum("ij,ja->ia", A2 * c, X)
        H -= np.einsum("ia,ib->iab", t, X) + np.einsum("ia,ib->iab", X, t)
        H += np.einsum("i,ia,ib->iab", (A2 * c * c).sum(axis=1), X, X)
        Pi = np.eye(d)[None] - np.einsum("ia,ib->iab", X, X)
        H -= ((A1 * c).sum(axis=1))[:, None, None] * Pi
        return np.einsum("iab,ibc,icd->iad", Pi, H, Pi)

    def evaluate(self, points) -> np.ndarray:
        """Band-limited reconstruction at arbitrary unit vectors ``points`` (m, d)."""
        return _synth(self, np.atleast_2d(points), 0)

    def gradient_at(self, points) -> np.ndarray:
        """Intrinsic gradient of the reconstruction at arbitrary points, shape (m, d)."""
        return _synth(self, np.atleast_2d(points), 1)


def _synth(F: SphereFunction, Y: np.ndarray, deriv: int):
    g = F.grid
    out_shape = Y.shape[:-1]
    Y = Y.reshape(-1, g.dim)
    if g.dim == 2:
        modes, m = F._circle_modes()
        n = g.size
        alpha = np.arctan2(Y[:, 1], Y[:, 0])
        res = []
        for chunk in np.array_split(np.arange(len(Y)), max(1, len(Y) // 256)):
            E = np.exp(1j * np.outer(alpha[chunk], m))
            if deriv == 0:
                res.append(np.real(E @ modes) / n)
            else:
                dv = np.real(E @ (modes * 1j * m)) / n
                res.append(dv[:, None] * np.stack([-Y[chunk, 1], Y[chunk, 0]], axis=1))
        out = np.concatenate(res, axis=0)
        return out.reshape(out_shape + out.shape[1:])
    norm = np.array([multiplicity(g.dim, l) for l in range(g.lmax + 1)]) / sphere_area(g.dim)
    wf = g.weights * F.values
    res = []
    for chunk in np.array_split(np.arange(len(Y)), max(1, len(Y) // 512)):
        Yc = Y[chunk]
        c = np.clip(Yc @ g.nodes.T, -1, 1)
        if deriv == 0:
            res.append(zonal_series(g.dim, norm, c, 0) @ wf)
        else:
            K = zonal_series(g.dim, norm, c, 1) * wf[None, :]
            grad = K @ g.nodes - (K * c).sum(axis=1)[:, None] * Yc
            res.append(grad - np.sum(grad * Yc, axis=1)[:, None] * Yc)
    out = np.concatenate(res, axis=0)
    return out.reshape(out_shape + out.shape[1:])


def integrate(F: SphereFunction) -> float:
    """Quadrature of F over the sphere."""
    return F.integrate()


def intrinsic_gradient(F: SphereFunction, node) -> np.ndarray:
    """Intrinsic gradient of F at a node index or at a unit vector."""
    if np.ndim(node) == 0:
        return F.gradient()[int(node)]
    return F.gradient_at(np.asarray(node, dtype=float)[None, :])[0]
