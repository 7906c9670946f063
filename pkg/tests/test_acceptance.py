"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Tolerances are the stated ones; parameters (grids, seeds, densities) are fixed
so the whole file runs in a few minutes on one core.
"""
import numpy as np
import pytest
from math import pi

from fisherkin.cli import reference_kernel
from fisherkin.collision_kernels import (CollisionKernel, PowerLawForce, angular_kernel_from_scattering,
                                         deflection_angle, large_p_constant, power_law_exponents,
                                         rutherford_kernel)
from fisherkin.gamma_calculus import (L_beta, counterexample_family, counterexample_rhs_closed_form,
                                      criterion_ratio, curvature_dimension_gap, kernel_multiplier,
                                      linear_evolve, mckean_identities, random_even_function, ratio_minimize,
                                      sphere_fisher)
from fisherkin.info_functionals import (GaussianSpec, convolve_rescale, de_bruijn_residual, fisher_information,
                                        fokker_planck_rate, gaussian_grid, mixture_grid, tensor_square)
from fisherkin.kinetic_solver import (BoltzmannState, RadialLandauState, StepPolicy, agc_dissipation_terms,
                                      dissipation_decomposition, landau_collide_isotropic,
                                      landau_coulomb_nondivergence, preset_grid, radial_mixture_field,
                                      radial_pairs, simulate)
from fisherkin.spectral import (AngularKernel, kernel_ratio_table, legendre, legendre_all, legendre_derivatives,
                                spectrum, sphere_area)
from fisherkin.sphere_ops import (SphereFunction, build_grid, collision_sphere_identity, propPsk_residuals,
                                  unit)


def _g(x):
    return f"{x:.4g}"


def test_criterion_1_geometry(report_criterion):
    rng = np.random.default_rng(1)
    checks = []
    for d in (2, 3, 4, 6):
        n = 10_000
        k, s = unit(rng.standard_normal((n, d))), unit(rng.standard_normal((n, d)))
        x, y = rng.standard_normal((n, d)), rng.standard_normal((n, d))
        worst = max(propPsk_residuals(k, s, x, y).values())
        checks.append((f"P_ks_d{d}", _g(worst), worst < 1e-12))
        v, vs = 2 * rng.standard_normal((n, d)), 2 * rng.standard_normal((n, d))
        lhs, rhs = collision_sphere_identity(v, vs, s)
        err = np.abs(lhs - rhs).max()
        checks.append((f"collision_d{d}", _g(err), err < 1e-12))
    report_criterion(1, "geometry", checks)


def test_criterion_2_legendre(report_criterion):
    x = np.linspace(-1, 1, 2001)
    checks = []
    ode = 0.0
    for d in range(2, 7):
        P, D1, D2 = legendre_derivatives(d, 20, x)
        ell = np.arange(21)[:, None]
        ode = max(ode, np.abs((1 - x ** 2) * D2 - (d - 1) * x * D1 + ell * (ell + d - 2) * P).max())
    checks.append(("ode", _g(ode), ode < 1e-9))
    excess, eq2 = -np.inf, 0.0
    xs = x[1:-1]
    for d in range(2, 9):
        for ell in range(2, 41, 2):
            bound = ell * (ell + d - 2) / (2 * (d - 1))
            ratio = (1 - legendre(d, ell, xs)) / (1 - xs ** 2)
            excess = max(excess, (ratio - bound).max())
            if ell == 2:
                eq2 = max(eq2, np.abs(ratio - bound).max())
    checks.append(("lemma_excess", _g(excess), excess <= 1e-9))
    checks.append(("lemma_l2_equality", _g(eq2), eq2 < 1e-12))
    e_const = e_delta = 0.0
    for d in range(2, 7):
        nu = spectrum(AngularKernel.constant(d), 20).nu
        e_const = max(e_const, np.abs(nu[1:] - sphere_area(d)).max())
        for th in (0.2, 1.0, 2.5):
            nu = spectrum(AngularKernel.atomic(d, [th], [1.0]), 20).nu
            ref = sphere_area(d - 1) * (1 - legendre_all(d, 20, np.cos(th)))
            e_delta = max(e_delta, np.abs(nu - ref).max())
    checks.append(("nu_const", _g(e_const), e_const < 1e-8))
    checks.append(("nu_delta", _g(e_delta), e_delta < 1e-8))
    report_criterion(2, "legendre/spectral", checks)


def test_criterion_3_scattering(report_criterion):
    # (d, s) = (3, 2) is Coulomb, (3, 5) is Maxwell molecules
    checks = [("d3_s2", power_law_exponents(2, 3), power_law_exponents(2, 3) == pytest.approx((-3.0, 2.0))),
              ("d3_s5", power_law_exponents(5, 3), power_law_exponents(5, 3) == pytest.approx((0.0, 0.5)))]
    rng = np.random.default_rng(3)
    worst = max(abs(sum((1, 2) * np.array(power_law_exponents(s, 3))) - 1) for s in rng.uniform(1.5, 50, 50))
    checks.append(("gamma+2nu-1", _g(worst), worst < 1e-12))
    th = np.linspace(0.1, 3.0, 60)
    dev = np.abs(angular_kernel_from_scattering(PowerLawForce(2.0, 3), th) / rutherford_kernel(3, 1.0, th) - 1).max()
    checks.append(("rutherford", _g(dev), dev < 0.02))
    for s in (2.0, 3.0, 5.0):
        p = 1e3
        c = deflection_angle(PowerLawForce(s, 3), p, 1.0) * p ** (s - 1)
        rel = abs(c / large_p_constant(s) - 1)
        checks.append((f"large_p_s{s:g}", _g(rel), rel < 0.01))
    report_criterion(3, "scattering", checks)


def _mix(rng, n=256, hw=9.0):
    w = rng.uniform(0.2, 1.0, 2)
    return mixture_grid(1, n, hw, w / w.sum(), rng.uniform(-2, 2, 2), rng.uniform(0.4, 1.5, 2)).normalized()


def test_criterion_4_information(report_criterion):
    checks = []
    for d, var, n, hw in ((1, 0.5, 400, 8.0), (2, 1.5, 200, 10.0)):
        rel = abs(fisher_information(gaussian_grid(GaussianSpec(d, var=var), n, hw)) * var / d - 1)
        checks.append((f"gauss_d{d}", _g(rel), rel < 0.005))
    rng = np.random.default_rng(4)
    f = _mix(rng, 400, 10.0)
    rel = abs(fisher_information(tensor_square(f)) / (2 * fisher_information(f)) - 1)
    checks.append(("tensor", _g(rel), rel < 1e-10))
    db = max(de_bruijn_residual(_mix(rng, 400, 10.0)) for _ in range(3))
    checks.append(("de_bruijn", _g(db), db < 0.01))
    worst = -np.inf
    for _ in range(50):
        f, g = _mix(rng), _mix(rng)
        If, Ig = fisher_information(f), fisher_information(g)
        s = fisher_information(convolve_rescale(f, g, 0.5)) / 2
        worst = max(worst, 1 / If + 1 / Ig - 1 / s)
        for a in (0.25, 0.5, 0.75):
            worst = max(worst, fisher_information(convolve_rescale(f, g, a)) - ((1 - a) * If + a * Ig))
    checks.append(("blachman_stam_excess", _g(worst), worst <= 1e-9))
    rate = fokker_planck_rate(mixture_grid(1, 320, 8.0, [0.3, 0.7], [0.5, 2.0], [0.5, 0.8]).normalized())
    checks.append(("fp_rate", _g(rate), abs(rate - 2) <= 0.05))
    report_criterion(4, "information", checks)


def test_criterion_5_curvature_criterion(report_criterion):
    checks = []
    rng = np.random.default_rng(5)
    for d, res, lmax in ((2, 128, 8), (3, 24, 6)):
        beta = AngularKernel.constant(d)
        grid = build_grid(d, res)
        sampled = min(criterion_ratio(random_even_function(grid, rng, lmax=lmax), beta).ratio for _ in range(20))
        checks.append((f"sample_d{d}", _g(sampled), sampled >= 4 * d - 0.1))
        it = 40 if d == 2 else 8
        mini = ratio_minimize(beta, grid, iterations=it, seed=3 if d == 2 else 1, lmax=16 if d == 2 else 6).ratio
        checks.append((f"minimize_d{d}", _g(mini), mini >= 4 * d - 0.1))
    hs = AngularKernel.from_function(2, lambda th: np.sin(th / 2), order=-2.0).symmetrised()
    grid2 = build_grid(2, 128)
    r = ratio_minimize(hs, grid2, iterations=40, seed=3).ratio
    checks.append(("hard_sphere_2d", _g(r), r >= 4 * np.sqrt(2) - 0.1))
    r = ratio_minimize(AngularKernel.heat(3, 0.1), build_grid(3, 24), iterations=8, seed=1, lmax=6).ratio
    checks.append(("heat_d3", _g(r), r >= 12 - 0.5))
    beta = AngularKernel.atomic_rational(2, [0, 1, 0])
    g4 = build_grid(2, 4096)
    reps = [criterion_ratio(counterexample_family(2, [0, 1, 0], A, g4), beta) for A in (1.0, 10.0, 100.0, 1e3)]
    drop = reps[0].ratio / reps[-1].ratio
    checks.append(("counterexample_drop", _g(drop), drop >= 100))
    rhs_err = abs(reps[-1].rhs / counterexample_rhs_closed_form(2, [0, 1, 0]) - 1)
    checks.append(("counterexample_rhs", _g(rhs_err), rhs_err < 1e-6))
    a = 2 * pi * np.arange(4096) / 4096
    worst = 0.0
    for _ in range(10):
        c = rng.normal(size=4) / np.arange(1, 5)
        f = np.exp(sum(c[j] * np.cos((j + 1) * a + rng.uniform(0, 2 * pi)) for j in range(4)))
        rep = mckean_identities(f)
        worst = max(worst, abs(rep.ipp_residual), abs(rep.flogf2_residual), abs(rep.ineqflogf2_residual))
    checks.append(("mckean", _g(worst), worst < 1e-8))
    cd = np.inf
    for d, res in ((2, 64), (3, 16)):
        grid = build_grid(d, res)
        for _ in range(100):
            G = random_even_function(grid, rng, lmax=min(6, grid.lmax // 2))
            G = G.with_values(np.log(G.values))
            gap = curvature_dimension_gap(G)
            cd = min(cd, gap.min() / max(1.0, np.abs(gap).max()))
    checks.append(("cd_min_gap", _g(cd), cd > -1e-10))
    report_criterion(5, "criterion", checks)


def test_criterion_6_kernel_ratios(report_criterion):
    th = np.linspace(1e-3, pi - 1e-3, 801)
    checks = []
    for s in (2, 2.5, 3, 5, 10, 50):
        _, nu = power_law_exponents(s, 2)
        tab = kernel_ratio_table(CollisionKernel.power_law(s, 2).angular, reference_kernel("frac", 2, nu), th)
        checks.append((f"d2_s{s:g}", _g(tab.M / tab.m), tab.M / tab.m <= np.sqrt(2) + 0.05))
    _, nu = power_law_exponents(3, 3)
    target = CollisionKernel.power_law(3, 3).angular
    tab = kernel_ratio_table(target, reference_kernel("frac", 3, nu), th)
    checks.append(("d3_frac", _g(tab.M / tab.m), 1.4 <= tab.M / tab.m <= 1.75))
    tab = kernel_ratio_table(target, reference_kernel("weighted", 3, nu), th)
    checks.append(("d3_weighted", _g(tab.M / tab.m), tab.M / tab.m <= 1.15))
    report_criterion(6, "kernel ratios", checks)


def _flow_checks(tag, ts, conserve):
    H, I, err = ts.column("H"), ts.column("I"), ts.column("err_budget")
    dH = np.diff(H).max()
    dI = (np.diff(I) - err[1:]).max()
    out = [(f"{tag}_dH", _g(dH), dH <= 1e-8), (f"{tag}_dI_over_budget", _g(dI), dI <= 0),
           (f"{tag}_budget", _g(err.max()), err.max() < 1e-6)]
    if conserve:
        for c in ("mass", "energy"):
            v = ts.column(c)
            drift = np.abs(v - v[0]).max() / abs(v[0])
            out.append((f"{tag}_{c}_drift", _g(drift), drift < 1e-6))
    return out


@pytest.mark.slow
def test_criterion_7_flows(report_criterion):
    checks = []
    st = BoltzmannState.preset("bimodal", CollisionKernel.maxwell(AngularKernel.constant(2)), n=24)
    checks += _flow_checks("maxwell2d", simulate(st, 0.5, StepPolicy()), conserve=False)
    for name in ("bimodal", "indicator-smoothed"):
        st = RadialLandauState.preset(name, -3.0, n=160)
        checks += _flow_checks(f"landau_{name}", simulate(st, 5.0, StepPolicy()), conserve=True)
    worst = 0.0
    for name in ("bimodal", "squashed-gaussian", "indicator-smoothed"):
        st = RadialLandauState.preset(name, -3.0, n=160)
        Q, nd, vol = landau_collide_isotropic(st), landau_coulomb_nondivergence(st), st.grid.volume
        worst = max(worst, np.sum(np.abs(Q - nd) * vol) / np.sum(np.abs(nd) * vol))
    checks.append(("div_vs_nondiv", _g(worst), worst < 0.01))
    report_criterion(7, "flows", checks)


@pytest.mark.slow
def test_criterion_8_dissipation(report_criterion):
    checks = []
    f = preset_grid("bimodal", 64)
    d = dissipation_decomposition(f, CollisionKernel.hard_sphere(2), n_hermite=16)
    rel = abs(d.sum / d.fd_reference - 1)
    checks.append(("five_terms_vs_fd", _g(rel), rel < 0.01))
    dm = dissipation_decomposition(preset_grid("bimodal", 24), CollisionKernel.maxwell(AngularKernel.constant(2)),
                                   n_hermite=10, fd_eps=None)
    checks.append(("III_maxwell", _g(dm.term_III), dm.term_III == 0.0))
    F = radial_mixture_field([0.5, 0.5], [0.4, 1.6])
    P = radial_pairs(8.0, 20, 28, 12)
    for gamma in (-1.0, -2.0):
        K = CollisionKernel.product(gamma, AngularKernel.constant(3))
        dd = dissipation_decomposition(F, K, pairs=P, fd_eps=None)
        rel = abs(dd.term_II2 / dd.term_II2_simplified - 1)
        checks.append((f"cII2_g{gamma:g}", _g(rel), rel < 0.005))
        row = agc_dissipation_terms(F, K, P, ns=(1000,))[0]
        gap = max(row["gap_" + k] for k in ("I", "II1", "II2", "II3", "III", "DB"))
        checks.append((f"agc_gap_g{gamma:g}", _g(gap), gap < 0.05))
    report_criterion(8, "dissipation", checks)


def test_criterion_9_sphere_flows(report_criterion):
    checks = []
    comm = 0.0
    for d, res in ((2, 64), (3, 16)):
        grid = build_grid(d, res)
        F = SphereFunction.from_callable(grid, lambda x: np.exp(0.7 * x[:, 0] * x[:, 1] - 0.4 * x[:, -1]))
        F = F.band_limited(grid.lmax // 2)
        for beta in (AngularKernel.constant(d), AngularKernel.heat(d, 0.2), CollisionKernel.power_law(3, d).angular):
            a = L_beta(F.laplacian(), beta).values
            b = L_beta(F, beta).laplacian().values
            comm = max(comm, np.abs(a - b).max() / max(1.0, np.abs(a).max()))
    checks.append(("commutator", _g(comm), comm < 1e-10))
    times = [0.0, 0.02, 0.1, 0.3, 1.0]
    convex_ok = fisher_ok = True
    for d, res in ((2, 64), (3, 16)):
        grid = build_grid(d, res)
        F = SphereFunction.from_callable(grid, lambda x: 1 + 0.6 * x[:, 0] ** 2 + 0.3 * x[:, -1])
        for s in (2.5, 3.0, 5.0):
            beta = CollisionKernel.power_law(s, d).angular
            nu = kernel_multiplier(beta, grid.lmax)
            rows = []
            for t in times:
                v = linear_evolve(F, nu, t).values
                rows.append((grid.integrate(v * v), grid.integrate(v * np.log(v)), grid.integrate(v ** 3),
                             sphere_fisher(linear_evolve(F, nu, t))))
            rows = np.array(rows)
            convex_ok &= bool(np.all(np.diff(rows[:, :3], axis=0) <= 1e-12))
            fisher_ok &= bool(np.all(np.diff(rows[:, 3]) <= 1e-12))
    checks.append(("convex_decay", convex_ok, convex_ok))
    checks.append(("fisher_decay", fisher_ok, fisher_ok))
    report_criterion(9, "sphere flows", checks)
