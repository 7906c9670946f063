import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from math import pi
from scipy.integrate import quad
from scipy.optimize import brentq

from fisherkin.collision_kernels import (CollisionKernel, CollisionKernelError, PowerLawForce,
                                         angular_kernel_from_scattering, compensated_adjoint,
                                         deflection_angle, gamma_bar, gamma_bar_sup, grazing_family, hard_sphere_kernel,
                                         impact_parameter, kernels_table, large_p_constant,
                                         momentum_transfer, power_law_exponents, rutherford_kernel,
                                         scattering_cross_section)
from fisherkin.spectral import AngularKernel


def _deflection_oracle(p, c, s):
    """pi - 2 int_{r0}^inf p dr / (r^2 sqrt(1 - p^2/r^2 - c r^{1-s})), with u = r0/r = 1 - w^2."""
    F = lambda r: 1 - (p / r) ** 2 - c * r ** (1 - s)
    r0 = brentq(F, 1e-12 + max(p, c ** (1 / (s - 1))) * 0.5, 1e6)
    q = p / r0

    def integrand(w):
        u = 1 - w * w
        val = 1 - (q * u) ** 2 - c * r0 ** (1 - s) * u ** (s - 1)
        return 2 * w * q / np.sqrt(val)

    return pi - 2 * quad(integrand, 0, 1, epsabs=1e-13, epsrel=1e-12, limit=200)[0]


@pytest.mark.parametrize("d,s,expect", [(3, 2, (-3.0, 2.0)), (3, 5, (0.0, 0.5)), (2, 3, (0.0, 0.5)),
                                        (2, 2, (-1.0, 1.0))])
def test_exponents_exact(d, s, expect):
    assert power_law_exponents(s, d) == expect


@settings(max_examples=50, deadline=None)
@given(s=st.floats(1.01, 200.0), d=st.integers(2, 6))
def test_exponents_sum(s, d):
    g, nu = power_law_exponents(s, d)
    assert g + 2 * nu == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("p", [0.05, 0.3, 1.0, 4.0])
@pytest.mark.parametrize("z", [0.5, 1.0, 2.0])
def test_coulomb_deflection_closed_form(p, z):
    # tan(theta/2) = c / (2p) with c = 4 psi0 / |z|^2
    f = PowerLawForce(2.0, 3)
    c = 4 * f.psi0 / z ** 2
    assert deflection_angle(f, p, z) == pytest.approx(2 * np.arctan(c / (2 * p)), rel=1e-10)


@pytest.mark.parametrize("s", [3.0, 5.0, 7.5])
@pytest.mark.parametrize("p", [0.2, 1.0, 3.0])
def test_deflection_matches_quadrature(s, p):
    f = PowerLawForce(s, 3)
    assert deflection_angle(f, p, 1.0) == pytest.approx(_deflection_oracle(p, 1.0, s), rel=1e-8)


def test_deflection_limits_and_inverse():
    f = PowerLawForce(3.0, 3)
    assert deflection_angle(f, 0.0, 1.0) == pytest.approx(pi)
    th = np.array([0.2, 1.0, 2.5])
    p = impact_parameter(f, th)
    assert np.allclose(deflection_angle(f, p, 1.0), th, rtol=1e-10)
    assert np.all(np.diff(deflection_angle(f, np.linspace(0.01, 5, 50), 1.0)) < 0)


@pytest.mark.parametrize("s", [2.0, 3.0, 5.0])
def test_large_impact_constant(s):
    f = PowerLawForce(s, 3)
    p = 1e4
    assert deflection_angle(f, p, 1.0) * p ** (s - 1) == pytest.approx(large_p_constant(s), rel=1e-3)


def test_large_impact_constant_values():
    # sqrt(pi) Gamma(s/2) / Gamma((s-1)/2): s = 3 gives sqrt(pi) Gamma(3/2) = pi/2
    assert large_p_constant(3.0) == pytest.approx(pi / 2)
    assert large_p_constant(5.0) == pytest.approx(np.sqrt(pi) * 0.75 * np.sqrt(pi))


def test_rutherford_reconstruction():
    th = np.linspace(0.1, 3.0, 40)
    b = angular_kernel_from_scattering(PowerLawForce(2.0, 3), th)
    assert np.abs(b / rutherford_kernel(3, 1.0, th) - 1).max() < 1e-6


@pytest.mark.parametrize("s,d", [(3.0, 3), (5.0, 2), (2.0, 3)])
def test_speed_scaling_of_cross_section(s, d):
    f = PowerLawForce(s, d)
    gamma, _ = power_law_exponents(s, d)
    th = np.array([0.4, 1.5, 2.6])
    b = angular_kernel_from_scattering(f, th)
    for z in (0.5, 3.0):
        assert np.allclose(scattering_cross_section(f, z, th), z ** gamma * b, rtol=1e-6)


def test_descriptors():
    K = CollisionKernel.power_law(2, 3)
    assert (K.gamma, K.nu, K.is_product, K.singular_order) == (-3.0, 2.0, True, 2.0)
    H = CollisionKernel.hard_sphere(2)
    assert H.gamma == 1.0 and H.singular_order == -2.0
    assert CollisionKernel.screened_coulomb(100.0).is_product is False
    assert K.with_cutoff(0.1).support == (0.1, pi)
    with pytest.raises(CollisionKernelError):
        CollisionKernel.power_law(1.0, 3)
    with pytest.raises(CollisionKernelError):
        CollisionKernel.hard_sphere(3, theta_min=-0.1)


def test_kernel_values_respect_support():
    K = CollisionKernel.hard_sphere(3, theta_min=0.5)
    th = np.array([0.2, 1.0])
    assert np.allclose(K.B(2.0, th), [0.0, 2.0 / 2.0])


@pytest.mark.parametrize("lam", [10.0, 1e3, 1e6])
def test_screened_momentum_transfer(lam):
    # 8 pi [log(1 + lam) - lam / (1 + lam)] at |z| = 1
    M = momentum_transfer(CollisionKernel.screened_coulomb(lam), 1.0)
    assert M == pytest.approx(8 * pi * (np.log1p(lam) - lam / (1 + lam)), rel=1e-8)


def test_momentum_transfer_of_constant_kernel():
    # int (1 - cos t) 2 pi sin t dt = 4 pi
    K = CollisionKernel.maxwell(AngularKernel.constant(3))
    assert momentum_transfer(K, 1.0) == pytest.approx(4 * pi, rel=1e-12)
    with pytest.raises(CollisionKernelError):
        momentum_transfer(CollisionKernel.rutherford(3), 1.0)


def test_grazing_family_keeps_momentum_transfer():
    K = CollisionKernel.hard_sphere(3)
    for n in (10, 1000):
        G = grazing_family(K, n)
        assert G.support[1] == pytest.approx(1.0 / n)
        for z in (0.5, 2.0):
            assert momentum_transfer(G, z) == pytest.approx(momentum_transfer(K, z), rel=1e-8)


def test_gamma_bar():
    assert gamma_bar(CollisionKernel.power_law(2, 3), 1.0) == 3.0
    # screened Coulomb: |d log B / d log z| <= 3, approached at large z
    S = CollisionKernel.screened_coulomb(1e3)
    assert gamma_bar_sup(S) == pytest.approx(3.0, abs=1e-3)
    assert gamma_bar(S, 1e-3) < 1.5


def test_compensated_adjoint_needs_decay_at_pi():
    with pytest.raises(CollisionKernelError):
        compensated_adjoint(CollisionKernel.hard_sphere(3), 1.0)


def test_compensated_adjoint_matches_quadrature():
    # Rutherford-type product with cutoff: gamma = -3 < -1, bracket integrable
    K = CollisionKernel.rutherford(3, theta_min=0.2)
    g = K.gamma
    f = lambda t: (np.cos(t / 2) ** (-3 - g) - 1) * rutherford_kernel(3, 1.0, t) * np.sin(t)
    ref = 2 * pi * quad(f, 0.2, pi, limit=200)[0]
    assert compensated_adjoint(K, 1.0) == pytest.approx(ref, rel=1e-8)


def test_kernels_table_rows():
    rows = kernels_table(2.0, 3, 8)
    assert len(rows) == 8
    th = np.array([r[0] for r in rows])
    assert np.allclose([r[1] for r in rows], rutherford_kernel(3, 1.0, th), rtol=1e-6)
    assert all(r[3:] == (-3.0, 2.0) for r in rows)


def test_large_exponent_approaches_hard_spheres():
    # the scattering normalisation (psi0 = 1/4) gives half the hard-sphere closed form
    th = np.linspace(1.0, 3.0, 9)
    b = angular_kernel_from_scattering(PowerLawForce(1000.0, 3), th)
    assert np.abs(2 * b / hard_sphere_kernel(3, 1.0, th) - 1).max() < 0.02
