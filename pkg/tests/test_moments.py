import math

import numpy as np
import pytest
from scipy import integrate, stats

from isometry.errors import SpecError
from isometry.moments import (
    SELU_ALPHA,
    SELU_LAMBDA,
    SMN,
    Conv2D,
    DataNorm,
    DenseGaussian,
    Identity,
    Invariance,
    LeakyReLU,
    Moments,
    Orthogonal,
    ReLU,
    SeLU,
    SPReLU,
    Tanh,
    component_moments,
    normal_cdf,
    selu_derivative_fourth_moment,
    selu_moments,
    structure_flags,
)


def test_table_values():
    m = component_moments(ReLU(0.5))
    assert (m.phi, m.varphi) == (0.5, 0.25)
    m = component_moments(Orthogonal(math.sqrt(2), 10, 10))
    assert m.phi == pytest.approx(2.0, abs=1e-15) and m.varphi == 0.0
    m = component_moments(DenseGaussian(1000, 1000, 0.0, 0.002))
    assert m.phi == pytest.approx(2.0, rel=1e-12) and m.varphi == pytest.approx(4.0, rel=1e-12)
    m = component_moments(DataNorm(4.0, 1000))
    assert m.phi == 0.25 and m.varphi == pytest.approx(1.25e-4, rel=1e-12)
    m = component_moments(Identity(7))
    assert (m.phi, m.varphi, m.out_dim) == (1.0, 0.0, 7)
    m = component_moments(SMN(2.0, 50))
    assert (m.phi, m.varphi) == (0.25, 0.0)


def test_tanh_carries_linearisation_note():
    m = component_moments(Tanh(), dim=16)
    assert (m.phi, m.varphi) == (1.0, 0.0)
    assert any("tanh" in n for n in m.notes)


@pytest.mark.parametrize("p", [0.0, 0.2, 0.5, 0.9, 1.0])
def test_leaky_limits(p):
    identity = component_moments(LeakyReLU(p, 1.0))
    assert identity.phi == pytest.approx(1.0) and identity.varphi == pytest.approx(0.0, abs=1e-15)
    a, b = component_moments(LeakyReLU(p, 0.0)), component_moments(ReLU(p))
    assert a.phi == pytest.approx(b.phi, abs=1e-15) and a.varphi == pytest.approx(b.varphi, abs=1e-15)


def test_leaky_against_two_point_distribution():
    p, g = 0.3, 0.4
    # eigenvalues of D D^T are 1 with probability p and g^2 otherwise
    vals = np.array([1.0, g * g])
    probs = np.array([p, 1 - p])
    mean = probs @ vals
    var = probs @ vals**2 - mean**2
    m = component_moments(LeakyReLU(p, g))
    assert m.phi == pytest.approx(mean, rel=1e-14) and m.varphi == pytest.approx(var, rel=1e-12)


def test_dense_nonzero_mean_warns_below_64():
    small = component_moments(DenseGaussian(32, 32, 0.1, 0.01))
    large = component_moments(DenseGaussian(128, 128, 0.1, 0.01))
    assert small.notes and not large.notes
    assert large.phi == pytest.approx(128 * (0.01 + 0.01))


def test_conv_phi_uses_effective_kernel_and_leaves_varphi_unknown():
    m = component_moments(Conv2D(4, 3, 3, 3, 1, 1, 1, 1, 3, 3, 0.5))
    assert m.phi == pytest.approx(3 * 49 / 9 * 0.5)
    assert m.varphi is None
    assert (m.out_dim, m.in_dim) == (4 * 9, 3 * 9)


def test_sprelu_halves_second_moment_per_unit():
    # scaled leaky slope alpha at p = 1/2: phi = (1 + a^2)/2 / (1 + a^2)
    for a in (0.0, 0.25, 0.5):
        assert component_moments(SPReLU(a)).phi == pytest.approx(0.5, abs=1e-15)


def test_datanorm_varphi_vanishes_with_width():
    vals = [component_moments(DataNorm(2.0, m)).varphi for m in (10, 100, 1000)]
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] * 1000 == pytest.approx(2 / 4.0)


@pytest.mark.parametrize("spec", [
    lambda: ReLU(1.5),
    lambda: LeakyReLU(0.5, -0.1),
    lambda: DenseGaussian(10, 10, 0.0, 0.0),
    lambda: DenseGaussian(0, 10),
    lambda: Orthogonal(0.0, 3, 3),
    lambda: Orthogonal(1.0, 4, 3),
    lambda: DataNorm(-1.0, 3),
    lambda: SMN(0.0, 3),
    lambda: Conv2D(1, 1, 5, 5, 1, 1, 0, 0, 3, 3, 1.0),
    lambda: SeLU(1.0, 1.0, 0.0),
])
def test_invalid_specs_rejected(spec):
    with pytest.raises(SpecError):
        spec()


def test_moments_invariants():
    with pytest.raises(ValueError):
        Moments(-1.0, 0.0)
    with pytest.raises(ValueError):
        Moments(1.0, -1e-3)
    assert Moments(1.0, -1e-12).varphi == -1e-12


def test_normal_cdf_matches_scipy():
    for x in np.linspace(-8, 8, 33):
        assert normal_cdf(x) == pytest.approx(stats.norm.cdf(x), abs=1e-15)
    assert normal_cdf(-2.0, 0.0, 4.0) == pytest.approx(stats.norm.cdf(-1.0), abs=1e-15)


def test_selu_rectifier_limit():
    phi, second, mean = selu_moments(math.sqrt(2), 0.0, 1.0)
    assert phi == pytest.approx(1.0, abs=1e-15)
    assert second == pytest.approx(1.0, abs=1e-15)
    assert selu_moments(0.0, 3.0, 1.0) == (0.0, 0.0, 0.0)
    # alpha = 0: lambda^2 / 2 at any input variance
    for v in (0.1, 1.0, 9.0):
        assert selu_moments(1.7, 0.0, v)[0] == pytest.approx(1.7**2 / 2)


def test_selu_standard_constants_phi():
    d = lambda x: (SELU_LAMBDA if x > 0 else SELU_LAMBDA * SELU_ALPHA * math.exp(x)) ** 2 * stats.norm.pdf(x)
    direct = integrate.quad(d, -np.inf, 0)[0] + integrate.quad(d, 0, np.inf)[0]
    phi = selu_moments(SELU_LAMBDA, SELU_ALPHA, 1.0)[0]
    assert phi == pytest.approx(direct, abs=1e-10)
    assert abs(phi - 1.0716) < 1e-3


def test_selu_fourth_moment_quadrature():
    lam, alpha, v = 1.2, 1.1, 2.0
    s = math.sqrt(v)
    f = lambda x: (lam if x > 0 else lam * alpha * math.exp(x)) ** 4 * stats.norm.pdf(x, scale=s)
    direct = integrate.quad(f, -np.inf, 0, epsabs=1e-13)[0] + integrate.quad(f, 0, np.inf, epsabs=1e-13)[0]
    assert selu_derivative_fourth_moment(lam, alpha, v) == pytest.approx(direct, abs=1e-10)


def test_selu_large_variance_stays_finite():
    phi, second, mean = selu_moments(1.0, 1.0, 400.0)
    assert all(math.isfinite(x) for x in (phi, second, mean))


def test_structure_flags():
    f = structure_flags(ReLU(0.5))
    assert f.expectant_orthogonal and not f.central
    f = structure_flags(DenseGaussian(4, 4))
    assert f.central and f.unitary_invariance_order == Invariance.INFINITE
    f = structure_flags(DataNorm(1.0, 4))
    assert f.expectant_orthogonal and not f.central and f.general_linear
    assert structure_flags(Orthogonal(1.0, 3, 3)).unitary_invariance_order == Invariance.SECOND
    assert structure_flags(Conv2D()).central
    f = structure_flags(SeLU())
    assert f.expectant_orthogonal and not f.central and not f.general_linear
    assert not structure_flags(Tanh()).general_linear
    assert not structure_flags(DenseGaussian(4, 4, mu=0.5)).central
