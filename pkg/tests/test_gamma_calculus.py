import numpy as np
import pytest
from math import pi

from fisherkin.gamma_calculus import (CriterionError, L_beta, counterexample_family,
                                      counterexample_rhs_closed_form, criterion_ratio,
                                      curvature_dimension_gap, diffusive_ratio, entropy_dissipation_sphere,
                                      fisher_dissipation_sphere, gamma2_diffusive, gamma2_spectral,
                                      gamma_beta, gamma_I, gamma_one_beta, gamma_one_beta_decomposed,
                                      gamma_one_beta_spectral, integral_F_gamma_one, integral_gamma_beta,
                                      kernel_multiplier, linear_evolve, mckean_identities,
                                      random_even_function, ratio_minimize, sphere_entropy, sphere_fisher)
from fisherkin.spectral import AngularKernel, sphere_area
from fisherkin.sphere_ops import SphereFunction, build_grid

GRIDS = {2: build_grid(2, 64), 3: build_grid(3, 12)}


def _beta(d):
    return AngularKernel.from_function(d, lambda th: 1 + 0.5 * np.cos(th) ** 2)


def _F(d, seed=0, amplitude=0.8, lmax=4):
    return random_even_function(GRIDS[d], np.random.default_rng(seed), lmax=lmax, amplitude=amplitude)


def _smooth(d, seed=0):
    # band limited to half the grid degree so products are resolved exactly
    F = _F(d, seed).band_limited(GRIDS[d].lmax // 2)
    assert F.values.min() > 0
    return F


@pytest.mark.parametrize("d", [2, 3])
def test_constant_kernel_generator(d):
    # L f = int f - |S^{d-1}| f for beta = 1
    g = GRIDS[d]
    F = SphereFunction.from_callable(g, lambda x: 1 + x[:, 0] * x[:, 1] + x[:, 0] ** 2)
    LF = L_beta(F, AngularKernel.constant(d)).values
    assert np.allclose(LF, F.integrate() - sphere_area(d) * F.values, atol=1e-10)


@pytest.mark.parametrize("d", [2, 3])
def test_routes_for_carre_du_champ(d):
    g, beta = GRIDS[d], _beta(d)
    F = _smooth(d)
    # 2 Gamma_beta(F) = L(F^2) - 2 F L F
    spec = 0.5 * (L_beta(F.with_values(F.values ** 2), beta).values - 2 * F.values * L_beta(F, beta).values)
    for k in (0, 7, g.size // 2):
        assert gamma_beta(F, beta, k, n_theta=24) == pytest.approx(spec[k], rel=1e-6)
    assert integral_gamma_beta(F, beta) == pytest.approx(g.integrate(spec), rel=1e-10)


@pytest.mark.parametrize("d", [2, 3])
def test_routes_for_gamma_one(d):
    g, beta = GRIDS[d], _beta(d)
    F = _smooth(d, 1)
    spec = gamma_one_beta_spectral(F, beta)
    for k in (0, 5, g.size // 3):
        direct = gamma_one_beta(F, beta, k, n_theta=24)
        assert direct == pytest.approx(spec[k], rel=1e-6)
        assert gamma_one_beta_decomposed(F, beta, k, n_theta=24) == pytest.approx(direct, rel=1e-9)
    G = F.with_values(np.log(F.values))
    assert integral_F_gamma_one(F, G, beta) == pytest.approx(
        g.integrate(F.values * gamma_one_beta_spectral(G, beta)), rel=1e-8)


def test_fisher_dissipation_routes():
    beta = _beta(2)
    F = _F(2, 2)
    spec = fisher_dissipation_sphere(F, beta, "spectral")
    assert fisher_dissipation_sphere(F, beta, "symmetric") == pytest.approx(spec, rel=1e-8)
    assert fisher_dissipation_sphere(F, beta, "direct") == pytest.approx(spec, rel=1e-6)
    assert gamma_I(F, beta, 3) >= 0
    with pytest.raises(CriterionError):
        fisher_dissipation_sphere(F, beta, "other")


@pytest.mark.parametrize("d", [2, 3])
def test_fisher_dissipation_is_derivative_along_flow(d):
    beta = _beta(d)
    F = SphereFunction.from_callable(
        GRIDS[d], lambda x: np.exp(0.5 * x[:, 0] * x[:, 1] + 0.4 * x[:, -1] ** 2), even=True)
    nu = kernel_multiplier(beta, F.grid.lmax)
    h = 1e-5
    fd = (sphere_fisher(linear_evolve(F, nu, h)) - sphere_fisher(linear_evolve(F, nu, -h))) / (2 * h)
    assert -fd == pytest.approx(fisher_dissipation_sphere(F, beta), rel=1e-6)


@pytest.mark.parametrize("d", [2, 3])
def test_entropy_dissipation(d):
    beta = _beta(d)
    F = _F(d, 4)
    D = entropy_dissipation_sphere(F, beta)
    assert D > 0
    if d == 2:
        assert entropy_dissipation_sphere(F, beta, "direct") == pytest.approx(D, rel=1e-6)
    nu = kernel_multiplier(beta, F.grid.lmax)
    h = 1e-5
    fd = (sphere_entropy(linear_evolve(F, nu, h)) - sphere_entropy(linear_evolve(F, nu, -h))) / (2 * h)
    assert -fd == pytest.approx(D, rel=1e-6)


@pytest.mark.parametrize("d", [2, 3])
def test_generator_commutes_with_laplacian(d):
    F = _F(d, 5).band_limited(6)
    for beta in (_beta(d), AngularKernel.heat(d, 0.2)):
        a = L_beta(F.laplacian(), beta).values
        b = L_beta(F, beta).laplacian().values
        assert np.abs(a - b).max() < 1e-10 * max(1.0, np.abs(a).max())


@pytest.mark.parametrize("d", [2, 3])
def test_bochner_and_curvature_dimension(d):
    for seed in range(5):
        G = _F(d, seed, lmax=5)
        G = G.with_values(np.log(G.values))
        g2 = gamma2_spectral(G)
        assert np.abs(gamma2_diffusive(G) - g2).max() < 1e-8 * max(1.0, np.abs(g2).max())
        assert curvature_dimension_gap(G).min() > -1e-10 * max(1.0, np.abs(g2).max())


@pytest.mark.parametrize("d", [2, 3])
def test_criterion_for_constant_kernel(d):
    beta = AngularKernel.constant(d)
    for seed in range(5):
        rep = criterion_ratio(_F(d, seed, amplitude=1.5), beta)
        assert not rep.infinite
        assert rep.ratio >= 4 * d - 0.1


def test_criterion_constant_functions_are_degenerate():
    F = SphereFunction(GRIDS[2], np.ones(GRIDS[2].size), even=True)
    assert criterion_ratio(F, AngularKernel.constant(2)).infinite
    odd = SphereFunction.from_callable(GRIDS[2], lambda x: 2 + x[:, 0])
    with pytest.raises(CriterionError):
        criterion_ratio(odd, AngularKernel.constant(2))


def test_diffusive_ratio_on_circle():
    # d = 2: Gamma_2(log F) = ((log F)'')^2 and the ratio is at least 4 d by McKean's inequality
    rep = diffusive_ratio(_F(2, 1, amplitude=1.0))
    assert rep.ratio >= 8.0


def test_minimizer_does_not_go_below_bound():
    rep = ratio_minimize(AngularKernel.constant(2), build_grid(2, 64), iterations=10, seed=2, lmax=8)
    assert rep.ratio >= 8 - 0.1
    assert len(rep.metadata["history"]) >= 1


def test_counterexample_family():
    beta = AngularKernel.atomic_rational(2, [0, 1, 0])
    grid = build_grid(2, 4096)
    r1 = criterion_ratio(counterexample_family(2, [0, 1, 0], 1.0, grid), beta)
    r3 = criterion_ratio(counterexample_family(2, [0, 1, 0], 1e3, grid), beta)
    assert r1.ratio / r3.ratio >= 100
    # the right side does not depend on A
    assert r3.rhs == pytest.approx(r1.rhs, rel=1e-8)
    assert r1.rhs == pytest.approx(counterexample_rhs_closed_form(2, [0, 1, 0]), rel=1e-6)
    with pytest.raises(CriterionError):
        counterexample_family(2, [1, 0, 0], 1.0, grid)


@pytest.mark.parametrize("seed", range(4))
def test_mckean_identities(seed):
    rng = np.random.default_rng(seed)
    a = 2 * pi * np.arange(2048) / 2048
    f = np.exp(sum(rng.normal() / (j + 1) * np.cos((j + 1) * a + rng.uniform(0, 2 * pi)) for j in range(5)))
    rep = mckean_identities(f)
    scale = max(1.0, rep.f2_over_f)
    assert abs(rep.ipp_residual) < 1e-8 * scale
    assert abs(rep.flogf2_residual) < 1e-8 * scale
    assert abs(rep.ineqflogf2_residual) < 1e-8 * scale
    assert rep.optimal_margin >= 0


def test_mckean_constant_is_sharp_on_cosine():
    # f = 1 + eps cos: int f'^4/f^3 / int f''^2/f -> 0, so the inequality is strict there
    a = 2 * pi * np.arange(1024) / 1024
    rep = mckean_identities(1 + 0.5 * np.cos(a))
    assert 0 < rep.f1_4_over_f3 < 2.25 * rep.f2_over_f


@pytest.mark.parametrize("d", [2, 3])
def test_linear_evolution_decays(d):
    F = _F(d, 6)
    nu = kernel_multiplier(_beta(d), F.grid.lmax)
    vals = [(sphere_fisher(G), sphere_entropy(G), G.grid.integrate(G.values ** 2))
            for G in (linear_evolve(F, nu, t) for t in (0.0, 0.05, 0.2))]
    assert all(np.diff(np.array(vals), axis=0).ravel() < 0)
