import numpy as np
import pytest
from math import pi
from scipy.integrate import quad

from fisherkin.collision_kernels import CollisionKernel
from fisherkin.kinetic_solver import (PRESETS, KineticError, LandauOperator, RadialGrid, RadialLandauState,
                                      BoltzmannState, StepPolicy, agc_dissipation_terms, boltzmann_collide_2d,
                                      dissipation_decomposition, doubling_check, grid_fisher,
                                      landau_collide_isotropic, landau_coulomb_nondivergence,
                                      landau_dissipations, landau_kernel_A, landau_kernel_B, landau_weak_form,
                                      linear_sphere_evolve, newton_potential, preset_grid, preset_radial,
                                      radial_mixture_field, radial_pairs, simulate, sphere_series)
from fisherkin.spectral import AngularKernel
from fisherkin.sphere_ops import SphereFunction, build_grid

MAXWELL2 = CollisionKernel.maxwell(AngularKernel.constant(2))


@pytest.mark.parametrize("name", PRESETS)
def test_presets_are_normalised(name):
    f = preset_grid(name, 48)
    X, Y = f.mesh()
    dv = f.cell_volume
    assert f.values.sum() * dv == pytest.approx(1.0, abs=1e-12)
    assert abs((X * f.values).sum() * dv) < 1e-10
    assert ((X * X + Y * Y) * f.values).sum() * dv == pytest.approx(2.0, rel=2e-3)
    g, vals = preset_radial(name, 160)
    assert np.sum(vals * g.volume) == pytest.approx(1.0, abs=1e-12)
    assert g.moment(vals, 2) == pytest.approx(3.0, rel=2e-3)


def test_maxwellian_is_equilibrium_2d():
    g = preset_grid("bimodal", 32)
    X, Y = g.mesh()
    M = g.with_values(np.exp(-(X * X + Y * Y) / 2) / (2 * pi))
    Q = boltzmann_collide_2d(M, MAXWELL2).values
    assert np.abs(Q).max() < 1e-6 * M.values.max()


@pytest.mark.parametrize("kernel", [MAXWELL2, CollisionKernel.hard_sphere(2)], ids=["maxwell", "hard"])
def test_collision_conserves(kernel):
    f = preset_grid("squashed-gaussian", 32)
    res = boltzmann_collide_2d(f, kernel)
    m = res.moments()
    assert np.abs(m).max() < 1e-12
    # entropy production has the right sign
    assert np.sum(res.values * np.log(f.values)) * f.cell_volume < 0


def _bimodal_hat(xi):
    xi = np.atleast_2d(xi)
    return np.cos(xi[:, 0]) * np.exp(-0.25 * np.sum(xi * xi, 1))


def _bobylev(xi, n=400):
    # Fourier transform of Q(f, f) for the constant 2D Maxwell kernel
    a = 2 * pi * (np.arange(n) + 0.5) / n
    s = np.stack([np.cos(a), np.sin(a)], 1)
    r = np.linalg.norm(xi)
    vals = _bimodal_hat((xi + r * s) / 2) * _bimodal_hat((xi - r * s) / 2) - _bimodal_hat(xi) * _bimodal_hat(np.zeros(2))
    return vals.sum() * 2 * pi / n


def test_maxwell_matches_bobylev_formula():
    f = preset_grid("bimodal", 32)
    X, Y = f.mesh()
    Q = boltzmann_collide_2d(f, MAXWELL2).values
    for xi in ([0.5, 0.0], [1.0, 0.3], [0.0, 1.0], [1.5, 1.0], [2.0, 0.0]):
        xi = np.array(xi)
        num = np.sum(Q * np.exp(-1j * (xi[0] * X + xi[1] * Y))) * f.cell_volume
        assert abs(num - _bobylev(xi)) < 1e-3


@pytest.mark.parametrize("gamma", [-3.0, -1.0, 0.5])
def test_landau_kernels_against_sphere_quadrature(gamma):
    for r, rho in ((0.7, 1.3), (2.0, 0.4), (1.0, 1.1)):
        def z(mu):
            return np.sqrt(r * r + rho * rho - 2 * r * rho * mu)

        def eae(mu):
            # e.a(z)e with z = r e - rho w and a = |z|^{gamma+2} (I - k k)
            zz = z(mu)
            return zz ** (gamma + 2) * (1 - ((r - rho * mu) / zz) ** 2)

        def ediva(mu):
            return -2 * z(mu) ** gamma * (r - rho * mu)

        A = 2 * pi * rho ** 2 * quad(eae, -1, 1, epsabs=1e-13, epsrel=1e-12)[0]
        B = 2 * pi * rho ** 2 * quad(ediva, -1, 1, epsabs=1e-13, epsrel=1e-12)[0]
        assert landau_kernel_A(r, rho, gamma) == pytest.approx(A, rel=1e-8)
        assert landau_kernel_B(r, rho, gamma) == pytest.approx(B, rel=1e-8)


def test_newton_potential_of_maxwellian():
    g = RadialGrid(400, 8.0)
    M = np.exp(-g.r ** 2 / 2) / (2 * pi) ** 1.5
    from scipy.special import erf
    exact = erf(g.r / np.sqrt(2)) / g.r
    assert np.abs(newton_potential(g, M) - exact).max() < 1e-3


def test_landau_maxwellian_and_conservation():
    g = RadialGrid(96, 6.0)
    op = LandauOperator(g, -3.0)
    M = np.exp(-g.r ** 2 / 2) / (2 * pi) ** 1.5
    assert np.abs(op(M, project=False)).max() < 1e-10 * M.max()
    st = RadialLandauState.preset("bimodal", -3.0, n=96)
    Q = landau_collide_isotropic(st)
    assert abs(np.sum(Q * g.volume)) < 1e-14
    assert abs(np.sum(Q * g.energy_weight)) < 1e-12
    assert np.sum(Q * np.log(st.f) * g.volume) < 0


@pytest.mark.parametrize("name", PRESETS)
def test_divergence_and_nondivergence_forms(name):
    st = RadialLandauState.preset(name, -3.0, n=160)
    Q = landau_collide_isotropic(st)
    nd = landau_coulomb_nondivergence(st)
    vol = st.grid.volume
    assert np.sum(np.abs(Q - nd) * vol) / np.sum(np.abs(nd) * vol) < 0.01


def test_landau_weak_form_and_entropy_dissipation():
    st = RadialLandauState.preset("bimodal", -3.0, n=200)
    from fisherkin.kinetic_solver import radial_profile_field
    F = radial_profile_field(st.grid, st.f)
    P = radial_pairs(6.0, 24, 32, 16)
    Q = landau_collide_isotropic(st)
    vol = st.grid.volume

    def hg(V):
        return 4 * np.sum(V * V, -1)[:, None] * V

    def hh(V):
        r2 = np.sum(V * V, -1)
        return 4 * r2[:, None, None] * np.eye(3) + 8 * V[:, :, None] * V[:, None, :]

    lhs = np.sum(Q * st.grid.r ** 4 * vol)
    assert landau_weak_form(F, -3.0, P, hg, hh) == pytest.approx(lhs, rel=5e-3)
    dl, _ = landau_dissipations(F, -3.0, P)
    assert dl == pytest.approx(-np.sum(Q * np.log(st.f) * vol), rel=5e-3)


def test_boltzmann_simulation_short():
    st = BoltzmannState.preset("bimodal", MAXWELL2, n=16)
    ts = simulate(st, 0.05, StepPolicy(i_tol=1e-6))
    H, I = ts.column("H"), ts.column("I")
    assert np.all(np.diff(H) <= 1e-8)
    assert not ts.violations
    assert abs(ts.column("mass")[-1] - ts.column("mass")[0]) < 1e-8
    assert ts.final_state.t == pytest.approx(0.05)


def test_landau_simulation_monotone():
    st = RadialLandauState.preset("indicator-smoothed", -3.0, n=64)
    ts = simulate(st, 0.5)
    H, I = ts.column("H"), ts.column("I")
    assert np.all(np.diff(H) <= 1e-8)
    assert np.all(np.diff(I) <= ts.column("err_budget")[1:] + 1e-12)
    for c in ("mass", "energy"):
        v = ts.column(c)
        assert np.abs(v - v[0]).max() / v[0] < 1e-6


def test_simulation_euler_and_bad_policy():
    st = RadialLandauState.preset("bimodal", -2.0, n=32)
    ts = simulate(st, 0.05, StepPolicy(scheme="euler", i_tol=1e-6))
    assert np.all(np.diff(ts.column("H")) <= 1e-8)
    with pytest.raises(KineticError):
        simulate(st, 0.1, StepPolicy(scheme="leapfrog"))
    with pytest.raises(KineticError):
        simulate(object(), 0.1)


def test_dissipation_decomposition_maxwell():
    f = preset_grid("bimodal", 24, 5.0)
    d = dissipation_decomposition(f, MAXWELL2, n_hermite=10)
    assert d.term_III == 0.0
    assert d.sum == pytest.approx(d.fd_reference, rel=0.05)
    assert d.sum > 0


def test_radial_decomposition_variants():
    F = radial_mixture_field([0.5, 0.5], [0.4, 1.6])
    K = CollisionKernel.product(-1.0, AngularKernel.constant(3))
    P = radial_pairs(8.0, 20, 28, 12)
    d = dissipation_decomposition(F, K, pairs=P, fd_eps=None)
    assert d.term_II2 == pytest.approx(d.term_II2_simplified, rel=5e-3)
    rows = agc_dissipation_terms(F, K, P, ns=(10, 1000))
    assert rows[1]["gap_I"] < rows[0]["gap_I"] + 1e-12
    for key in ("I", "II1", "II2", "II3", "III", "DB"):
        assert rows[1]["gap_" + key] < 0.05
    with pytest.raises(KineticError):
        dissipation_decomposition(F, K)


def test_doubling_check():
    f = preset_grid("bimodal", 16, 5.0)
    lhs, rhs = doubling_check(f, MAXWELL2)
    assert rhs == pytest.approx(lhs, rel=0.01)
    with pytest.raises(KineticError):
        doubling_check(build_grid_1d(), MAXWELL2)


def build_grid_1d():
    from fisherkin.info_functionals import box_grid
    g = box_grid(1, 16, 4.0)
    return g.with_values(np.exp(-g.mesh()[0] ** 2 / 2))


@pytest.mark.parametrize("d,res", [(2, 64), (3, 16)])
def test_sphere_series_monotone(d, res):
    g = build_grid(d, res)
    F = SphereFunction.from_callable(g, lambda x: 1 + 0.5 * x[..., 0] ** 2 + 0.3 * x[..., -1], even=False)
    for gen in ("laplace", AngularKernel.heat(d, 0.2)):
        rows = np.array(sphere_series(F, gen, [0, 0.1, 0.3, 1.0]))
        assert np.all(np.diff(rows[:, 1:], axis=0) < 0)
    assert linear_sphere_evolve(F, "laplace", 0.0).values == pytest.approx(F.values)
    with pytest.raises(KineticError):
        linear_sphere_evolve(F, "wave", 0.1)


def test_errors():
    with pytest.raises(KineticError) as e:
        preset_grid("triangle")
    assert e.value.code == "bad-preset"
    with pytest.raises(KineticError):
        RadialLandauState.preset("bimodal", -5.0, n=32)
    g, vals = preset_radial("bimodal", 32)
    with pytest.raises(KineticError):
        RadialLandauState(g, -vals, -3.0)
    with pytest.raises(KineticError):
        RadialGrid(4, 1.0)
    st = RadialLandauState.preset("bimodal", -2.0, n=32)
    with pytest.raises(KineticError):
        landau_coulomb_nondivergence(st)


def test_grid_fisher_gaussian():
    f = preset_grid("squashed-gaussian", 96, 7.0)
    assert grid_fisher(f.values, f.spacing) == pytest.approx(1 / 1.8 + 1 / 0.2, rel=1e-3)
