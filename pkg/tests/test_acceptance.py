"""Acceptance criteria, one test per criterion; the terminal summary prints a PASS/FAIL line for each."""
import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import integrate, stats

from isometry.flow import resnet_alpha2_profile
from isometry.gains import closed_form_gain, selu_solve
from isometry.graph import Composite, compose_parallel, compose_serial, component_part, densenet_block
from isometry.kernel import ConvGeometry, brute_force_kernel_oracle, effective_kernel_size
from isometry.mc import (
    TrialConfig,
    empirical_moments,
    sample_jacobian,
    sweep,
    trial_rng,
    verify_multiplication,
)
from isometry.moments import (
    SMN,
    Conv2D,
    DataNorm,
    DenseGaussian,
    Identity,
    LeakyReLU,
    Moments,
    Orthogonal,
    ReLU,
    SeLU,
    SPReLU,
    Tanh,
    component_moments,
    selu_moments,
    structure_flags,
)
from isometry.smn_cost import compare_costs, normalization_op_count

pytestmark = pytest.mark.acceptance

SWEEP_CONFIGS = 40
SWEEP_TRIALS = 20
SWEEP_SEED = 2024
PHI_FRACTION = 0.95
VARPHI_FRACTION = 0.90


def _sweep_summary(res):
    return [(round(r.phi_ratio, 4), None if r.varphi_ratio is None else round(r.varphi_ratio, 4),
             round(r.analytic_phi_ratio, 4),
             None if r.analytic_varphi_ratio is None else round(r.analytic_varphi_ratio, 4))
            for r in res.reports]


@pytest.mark.criterion(1, "product-rule concentration over random [dense, ReLU] chains")
def test_multiplication_concentration():
    res = sweep("multiplication", SWEEP_CONFIGS, seed=SWEEP_SEED, trials=SWEEP_TRIALS, dtype="float32")
    assert res.phi_fraction >= PHI_FRACTION, _sweep_summary(res)
    assert res.varphi_fraction >= VARPHI_FRACTION, _sweep_summary(res)


@pytest.mark.criterion(2, "sum-rule concentration over random parallel [dense, ReLU] branches")
def test_addition_concentration():
    res = sweep("addition", SWEEP_CONFIGS, seed=SWEEP_SEED, trials=SWEEP_TRIALS, dtype="float32")
    assert res.phi_fraction >= PHI_FRACTION, _sweep_summary(res)
    assert res.varphi_fraction >= VARPHI_FRACTION, _sweep_summary(res)


@pytest.mark.criterion(3, "SeLU coefficients from the normalisation conditions")
def test_selu_constants():
    lam, alpha = selu_solve(1.0, 0.0716)
    assert abs(lam - 1.0507) <= 1e-3
    assert abs(alpha - 1.6733) <= 1e-3
    assert tuple(selu_solve(1.0, 0.0)) == (math.sqrt(2.0), 0.0)


def _quad(f, var):
    s = math.sqrt(var)
    g = lambda x: f(x) * stats.norm.pdf(x, scale=s)
    kw = dict(epsabs=1e-13, epsrel=1e-13, limit=200)
    # the integrands have a kink at 0; split there and just right of it
    return (integrate.quad(g, -np.inf, 0.0, **kw)[0] + integrate.quad(g, 0.0, 1e-8, **kw)[0]
            + integrate.quad(g, 1e-8, np.inf, **kw)[0])


@pytest.mark.criterion(4, "SeLU moments against numerical quadrature")
@pytest.mark.parametrize("lam,alpha", [(math.sqrt(2.0), 0.0), (1.0507, 1.6733), (1.2, 1.0)])
def test_selu_moments_quadrature(lam, alpha):
    f = lambda x: lam * x if x > 0 else lam * alpha * math.expm1(x)
    df = lambda x: lam if x > 0 else lam * alpha * math.exp(x)
    for var in (0.25, 0.5, 1.0, 2.0, 4.0):
        phi, second, mean = selu_moments(lam, alpha, var)
        assert abs(phi - _quad(lambda x: df(x) ** 2, var)) <= 1e-8
        assert abs(second - _quad(lambda x: f(x) ** 2, var)) <= 1e-8
        assert abs(mean - _quad(f, var)) <= 1e-8


@pytest.mark.criterion(5, "effective kernel size against the brute-force oracle")
def test_effective_kernel_random_geometries():
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 500:
        k_h, k_w = rng.integers(1, 8, size=2)
        s_h, s_w = rng.integers(1, 5, size=2)
        h_in, w_in = rng.integers(1, 33, size=2)
        p_h, p_w = rng.integers(0, k_h), rng.integers(0, k_w)
        if h_in + 2 * p_h < k_h or w_in + 2 * p_w < k_w:
            continue
        g = ConvGeometry(int(k_h), int(k_w), int(s_h), int(s_w), int(p_h), int(p_w), int(h_in), int(w_in))
        assert abs(effective_kernel_size(g) - brute_force_kernel_oracle(g)) <= 1e-9, g
        checked += 1


WIDTH = 2000
SEEDS = 50
LIBRARY = [
    (ReLU(0.5), WIDTH),
    (LeakyReLU(0.5, 0.2), WIDTH),
    (Tanh(), WIDTH),
    (SPReLU(0.3), WIDTH),
    (SeLU(), WIDTH),
    (DenseGaussian(WIDTH, WIDTH, 0.0, 1.0 / WIDTH), None),
    (DenseGaussian(WIDTH, WIDTH, 0.01, 1.0 / WIDTH), None),
    (Conv2D(8, 8, 3, 3, 1, 1, 1, 1, 16, 16, 0.1), None),
    (Orthogonal(1.3, WIDTH, WIDTH), None),
    (DataNorm(2.0, WIDTH), None),
    (SMN(1.5, WIDTH), None),
    (Identity(WIDTH), None),
]


@pytest.mark.criterion(6, "library moments against sampled Jacobians at width 2000")
@pytest.mark.parametrize("spec,dim", LIBRARY, ids=[type(s).__name__ + str(i) for i, (s, _) in enumerate(LIBRARY)])
def test_component_moments_oracle(spec, dim):
    analytic = component_moments(spec, dim)
    phis, varphis = [], []
    for seed in range(SEEDS):
        J = sample_jacobian(spec, rng=trial_rng(seed, 0), dim=dim)
        if isinstance(spec, DataNorm):
            m = empirical_moments(J)
            phis.append(m.phi)
            varphis.append(m.varphi)
        else:
            phis.append(float(np.sum(np.square(J))) / J.shape[0])
    assert np.mean(phis) == pytest.approx(analytic.phi, rel=0.03)
    if isinstance(spec, DataNorm):
        assert np.mean(varphis) == pytest.approx(2.0 / (WIDTH * spec.sigma_B2**2), rel=0.25)


def _block(linear, act, n, m):
    return compose_serial([component_part(linear, n), component_part(act, m)])


@pytest.mark.criterion(7, "closed-form gains re-substituted give phi = 1")
def test_gain_round_trips():
    cases = [("relu", 0.0), ("leaky_relu", 0.1), ("leaky_relu", 0.3), ("leaky_relu", 0.7), ("tanh", 0.0)]
    for act_name, gamma in cases:
        act = {"relu": ReLU(0.5), "leaky_relu": LeakyReLU(0.5, gamma), "tanh": Tanh()}[act_name]
        for n, m in [(256, 256), (128, 512), (1000, 300)]:
            g = closed_form_gain(act_name, "gaussian", n=n, m=m, gamma=gamma)
            block = _block(DenseGaussian(m, n, 0.0, g.value**2), act, n, m)
            assert abs(block.moments.phi - 1.0) <= 1e-9
            s = closed_form_gain(act_name, "sws", n=n, m=m, gamma=gamma)
            block = _block(DenseGaussian(m, n, 0.0, s.value**2), act, n, m)
            assert abs(block.moments.phi - 1.0) <= 1e-9
            if m <= n:
                o = closed_form_gain(act_name, "orthogonal", n=n, m=m, gamma=gamma)
                block = _block(Orthogonal(o.value, m, n), act, n, m)
                assert abs(block.moments.phi - 1.0) <= 1e-9
    for n, m in [(256, 256), (128, 512), (1000, 300)]:
        g = closed_form_gain("relu", "gaussian", n=n, m=m)
        assert g.achieved_varphi == 1 + m / n
        block = _block(DenseGaussian(m, n, 0.0, g.value**2), ReLU(0.5), n, m)
        assert block.moments.varphi == pytest.approx(1 + m / n, rel=1e-12)


@pytest.mark.criterion(8, "residual and concatenation laws")
def test_resnet_densenet_laws():
    n = 64
    identity = component_part(Identity(n), n)
    for phi_b in (0.0, 0.25, 1.0, 3.7, 1e-6):
        branch = Composite(Moments(phi_b, None, n, n), structure_flags(DenseGaussian(n, n)))
        assert compose_parallel([identity, branch]).moments.phi == 1.0 + phi_b
    assert densenet_block(24, 12, Moments(1.0, 0.0)).phi == 1.0
    for blocks, ds in [(12, []), (16, [5, 10]), (9, [0, 4])]:
        alpha2, phis = resnet_alpha2_profile(blocks, ds)
        for l in range(blocks):
            assert math.prod(phis[l:], start=Fraction(1)) == alpha2[-1] / alpha2[l]


@pytest.mark.criterion(9, "normalisation operation counts")
def test_smn_op_counts():
    bn, smn = normalization_op_count("BN"), normalization_op_count("SMN")
    assert (bn.reductions_m, bn.reductions_q, bn.elementwise_m, bn.elementwise_q) == (4, 0, 9, 0)
    assert (smn.reductions_m, smn.reductions_q, smn.elementwise_m, smn.elementwise_q) == (3, 2, 7, 2)
    assert (bn.total_m, smn.total_m) == (13, 10)
    assert compare_costs().speedup == pytest.approx(0.3)


@pytest.mark.criterion(10, "desk-scale property checks in place of full training runs")
def test_desk_scale_properties():
    rng = np.random.default_rng(10)
    flags = structure_flags(DenseGaussian(50, 50))
    for _ in range(50):
        parts = [Composite(Moments(*rng.uniform(0.1, 3.0, 2), 50, 50), flags) for _ in range(5)]
        whole = compose_serial(parts).moments
        split = compose_serial([compose_serial(parts[:2]), compose_serial(parts[2:])]).moments
        assert split.phi == pytest.approx(whole.phi, rel=1e-12)
        assert split.varphi == pytest.approx(whole.varphi, rel=1e-12)
        with_id = compose_serial(parts[:3] + [component_part(Identity(50), 50)] + parts[3:]).moments
        assert (with_id.phi, with_id.varphi) == (whole.phi, whole.varphi)

    cfg = TrialConfig(seed=3, components=[DenseGaussian(120, 100, 0.0, 0.02), ReLU(0.5)], trials=3)
    a, b = verify_multiplication(cfg), verify_multiplication(cfg)
    np.testing.assert_array_equal(a.empirical_phi, b.empirical_phi)
    np.testing.assert_array_equal(a.empirical_varphi, b.empirical_varphi)

    J = rng.standard_normal((80, 60))
    base, scaled = empirical_moments(J), empirical_moments(2.5 * J)
    assert scaled.phi == pytest.approx(2.5**2 * base.phi, rel=1e-12)
    assert scaled.varphi == pytest.approx(2.5**4 * base.varphi, rel=1e-10)
