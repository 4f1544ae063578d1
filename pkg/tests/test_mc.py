import math

import numpy as np
import pytest

from isometry.errors import BudgetError, SpecError
from isometry.mc import (
    TrialConfig,
    empirical_moments,
    haar_orthogonal,
    random_addition_config,
    sample_factor,
    sample_jacobian,
    structure_check,
    sweep,
    trial_rng,
    verify_addition,
    verify_multiplication,
)
from isometry.moments import (
    SMN,
    Conv2D,
    DataNorm,
    DenseGaussian,
    Identity,
    Orthogonal,
    ReLU,
    component_moments,
)


def eig_moments(J):
    ev = np.linalg.eigvalsh(J @ J.T)
    return ev.mean(), ev.var()


def test_haar_rows_orthonormal():
    q = haar_orthogonal(trial_rng(1, 0), 30, 50)
    assert np.abs(q @ q.T - np.eye(30)).max() < 1e-10
    with pytest.raises(SpecError):
        haar_orthogonal(trial_rng(1, 0), 5, 4)


def test_haar_sign_fix_unbiased():
    # without the sign fix the diagonal of Q has a systematic sign bias
    diag = np.mean([np.diag(haar_orthogonal(trial_rng(3, t), 4, 4)) for t in range(2000)], axis=0)
    assert np.abs(diag).max() < 0.08


def test_relu_mask_rate():
    rate = np.mean([sample_factor(ReLU(0.3), rng=trial_rng(0, t), dim=4000).diag.mean() for t in range(5)])
    assert rate == pytest.approx(0.3, abs=0.015)
    x = np.array([-1.0, 2.0, 0.0, 3.0])
    f = sample_factor(ReLU(0.5), x)
    np.testing.assert_array_equal(f.diag, [0, 1, 0, 1])
    np.testing.assert_array_equal(f.output, [0, 2, 0, 3])


def test_datanorm_jacobian_structure():
    x = trial_rng(2, 0).normal(3.0, 2.0, size=200)
    J = sample_jacobian(DataNorm(4.0, 200), x)
    # output is invariant to shifting the input, so rows sum to zero
    assert np.abs(J.sum(axis=1)).max() < 1e-6
    eps = 1e-6
    e = np.zeros(200)
    e[7] = eps
    num = (sample_factor(DataNorm(4.0, 200), x + e).output - sample_factor(DataNorm(4.0, 200), x - e).output) / (2 * eps)
    np.testing.assert_allclose(J[:, 7], num, atol=1e-6)


def test_smn_jacobian_matches_finite_differences():
    x = trial_rng(4, 0).normal(0.0, 1.5, size=50)
    J = sample_jacobian(SMN(1.5, 50), x)
    eps = 1e-6
    for k in (0, 13, 49):
        e = np.zeros(50)
        e[k] = eps
        num = (sample_factor(SMN(1.5, 50), x + e).output - sample_factor(SMN(1.5, 50), x - e).output) / (2 * eps)
        np.testing.assert_allclose(J[:, k], num, atol=1e-6)


def test_empirical_moments_against_eigenvalues():
    rng = trial_rng(5, 0)
    for shape in [(40, 40), (30, 70), (70, 30)]:
        J = rng.standard_normal(shape)
        m = empirical_moments(J)
        phi, var = eig_moments(J)
        assert m.phi == pytest.approx(phi, rel=1e-10) and m.varphi == pytest.approx(var, rel=1e-8)
    assert (empirical_moments(np.eye(10)).phi, empirical_moments(np.eye(10)).varphi) == (1.0, 0.0)
    assert empirical_moments(2 * np.eye(10)).phi == 4.0
    with pytest.raises(SpecError):
        empirical_moments(np.array([[np.nan]]))


def test_empirical_moments_scaling_covariance():
    J = trial_rng(6, 0).standard_normal((50, 60))
    base, scaled = empirical_moments(J), empirical_moments(3.0 * J)
    assert scaled.phi == pytest.approx(9 * base.phi, rel=1e-12)
    assert scaled.varphi == pytest.approx(81 * base.varphi, rel=1e-10)


def test_empirical_moments_survive_huge_scale():
    J = np.eye(20, dtype=np.float32) * np.float32(1e18)
    m = empirical_moments(J)
    assert m.phi == pytest.approx(1e36, rel=1e-5) and math.isfinite(m.varphi)


def test_square_wishart():
    n = 800
    J = sample_jacobian(DenseGaussian(n, n, 0.0, 1.0 / n), seed=1)
    m = empirical_moments(J)
    assert m.phi == pytest.approx(1.0, abs=0.02) and m.varphi == pytest.approx(1.0, abs=0.08)


def test_identity_chain_exact():
    cfg = TrialConfig(seed=0, components=[Identity(30), Identity(30)], trials=3)
    rep = verify_multiplication(cfg)
    assert rep.phi_ratio == 1.0 and rep.varphi_ratio == 1.0 and rep.passed


def test_single_factor_theory_equals_empirical():
    cfg = TrialConfig(seed=3, components=[DenseGaussian(100, 80, 0.0, 0.02)], trials=4)
    rep = verify_multiplication(cfg)
    assert rep.phi_ratio == pytest.approx(1.0, abs=1e-12)
    assert rep.varphi_ratio == pytest.approx(1.0, abs=1e-10)


def test_multiplication_chain_concentrates():
    n = 400
    comps = [DenseGaussian(n, n, 0.0, 2.0 / n), ReLU(0.5)] * 3
    rep = verify_multiplication(TrialConfig(seed=9, components=comps, trials=5))
    assert rep.passed, rep.to_dict()
    assert rep.analytic.phi == pytest.approx(1.0)


def test_addition_identity_plus_gaussian():
    n = 400
    cfg = TrialConfig(seed=2, branches=[[Identity(n)], [DenseGaussian(n, n, 0.0, 1.0 / n)]], trials=5)
    rep = verify_addition(cfg)
    assert rep.analytic.phi == 2.0 and rep.analytic.varphi == pytest.approx(3.0)
    assert rep.passed, rep.to_dict()


def test_budget_and_validation():
    with pytest.raises(BudgetError):
        verify_multiplication(TrialConfig(seed=0, components=[DenseGaussian(100, 100)], max_dim=50))
    with pytest.raises(BudgetError):
        sample_jacobian(DenseGaussian(10, 200), max_dim=100)
    with pytest.raises(SpecError):
        TrialConfig(seed=0, trials=0)
    with pytest.raises(SpecError):
        verify_addition(TrialConfig(seed=0, branches=[[Identity(4)]]))


def test_determinism_and_trial_independence():
    cfg = random_addition_config(trial_rng(7, 0), seed=7, trials=3, m_range=(60, 80))
    a, b = verify_addition(cfg), verify_addition(cfg)
    np.testing.assert_array_equal(a.empirical_phi, b.empirical_phi)
    more = verify_addition(TrialConfig(**{**cfg.__dict__, "trials": 4}))
    np.testing.assert_array_equal(more.empirical_phi[:3], a.empirical_phi)


def test_float32_moments_match_float64():
    J = trial_rng(8, 0).standard_normal((300, 200))
    a, b = empirical_moments(J), empirical_moments(J.astype(np.float32))
    assert b.phi == pytest.approx(a.phi, rel=1e-5) and b.varphi == pytest.approx(a.varphi, rel=1e-4)
    comps = [DenseGaussian(300, 300, 0.0, 1.0 / 300), ReLU(0.5)] * 2
    rep = verify_multiplication(TrialConfig(seed=1, components=comps, trials=3, dtype="float32"))
    assert rep.passed, rep.to_dict()


def test_small_sweep():
    res = sweep("multiplication", 2, seed=5, trials=2, m_range=(100, 200), L_range=(2, 3))
    assert len(res.reports) == 2 and 0.0 <= res.phi_fraction <= 1.0


@pytest.mark.parametrize("spec,dim", [
    (ReLU(0.5), 400),
    (Orthogonal(1.3, 120, 120), None),
    (DataNorm(2.0, 300), None),
    (SMN(1.5, 300), None),
    (Conv2D(8, 8, 3, 3, 1, 1, 1, 1, 6, 6, 0.3), None),
])
def test_component_phi_matches_library(spec, dim):
    phis = [empirical_moments(sample_jacobian(spec, rng=trial_rng(11, t), dim=dim)).phi for t in range(20)]
    target = component_moments(spec, dim).phi
    assert np.mean(phis) == pytest.approx(target, rel=0.05)


def test_structure_checks():
    dense = structure_check(DenseGaussian(40, 40, 0.0, 1.0 / 40), samples=400, seed=1)
    assert dense.offdiag_max < 0.1 and dense.entry_mean_max < 0.03
    relu = structure_check(ReLU(0.5), samples=400, seed=1, dim=30)
    assert relu.offdiag_max == 0.0 and relu.entry_mean_max > 0.4
