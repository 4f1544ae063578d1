"""Monte-Carlo oracle: explicit Jacobians and their empirical spectrum-moments.

Every trial draws its own generator keyed by ``seed ^ trial_index``, so trials
are order independent and a report is a pure function of its config.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import BudgetError, SpecError
from .gains import sprelu_scale
from .graph import Composite, compose_parallel, compose_serial, component_part
from .kernel import conv_toeplitz
from .moments import (
    SMN,
    Component,
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
    structure_flags,
)

DEFAULT_MAX_DIM = 5000
# pre-activation variance for tanh sampling: the linearised regime where most inputs sit near 0
DEEP_REGIME_VAR = 1e-4
PHI_BAND = (0.93, 1.07)
VARPHI_BAND = (0.80, 1.20)


def max_dim_budget(max_dim: Optional[int] = None) -> int:
    if max_dim is not None:
        return int(max_dim)
    env = os.environ.get("ISOMETRY_MAX_DIM")
    return int(env) if env else DEFAULT_MAX_DIM


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(seed ^ trial) & (2**64 - 1)))


def _rng(seed=None, rng=None) -> np.random.Generator:
    if rng is not None:
        return rng
    return trial_rng(0 if seed is None else seed, 0)


# ---------------------------------------------------------------------------
# single factors
# ---------------------------------------------------------------------------


@dataclass
class Factor:
    """A sampled Jacobian, kept diagonal when it is one, plus the forward map's output."""

    diag: Optional[np.ndarray] = None
    dense: Optional[np.ndarray] = None
    output: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple[int, int]:
        if self.diag is not None:
            return self.diag.size, self.diag.size
        return self.dense.shape

    def matrix(self) -> np.ndarray:
        return np.diag(self.diag) if self.diag is not None else self.dense

    def apply_left(self, J: np.ndarray) -> np.ndarray:
        if self.diag is not None:
            return self.diag.astype(J.dtype)[:, None] * J
        return self.dense.astype(J.dtype, copy=False) @ J

    def moments(self) -> Moments:
        if self.diag is not None:
            d2 = self.diag.astype(np.float64) ** 2
            phi = float(d2.mean())
            return Moments(phi, max(float((d2 * d2).mean()) - phi * phi, 0.0), d2.size, d2.size)
        return empirical_moments(self.dense)


def haar_orthogonal(rng: np.random.Generator, m: int, n: int) -> np.ndarray:
    """(m, n) matrix with orthonormal rows, Haar distributed; needs m <= n."""
    if m > n:
        raise SpecError(f"orthogonal rows need m <= n, got {m}x{n}")
    a = rng.standard_normal((n, m))
    q, r = np.linalg.qr(a)
    # the sign fix makes Q Haar rather than biased by the QR convention
    q = q * np.sign(np.diag(r))
    return q.T


def _elementwise_input(spec, x, rng, dim, default_var):
    if x is not None:
        return np.asarray(x, dtype=np.float64)
    if dim is None:
        raise SpecError(f"{spec.kind} needs a width: pass dim or an input sample")
    return rng.normal(0.0, math.sqrt(default_var), size=dim)


def sample_factor(spec: Component, x: Optional[np.ndarray] = None, rng: Optional[np.random.Generator] = None,
                  dim: Optional[int] = None, max_dim: Optional[int] = None, dtype=np.float64) -> Factor:
    """Draw the Jacobian of ``spec`` at input ``x`` and return it with the layer output.

    Element-wise parts and normalisations evaluate their Jacobian at ``x``;
    without one they draw a Bernoulli mask (rectifiers) or a Gaussian input.
    """
    rng = rng or trial_rng(0, 0)
    budget = max_dim_budget(max_dim)
    out_dim, in_dim = spec.dims(dim if x is None else len(x))
    if max(out_dim, in_dim) > budget:
        raise BudgetError(f"{spec.kind} Jacobian {out_dim}x{in_dim} exceeds max_dim={budget}")

    if isinstance(spec, (ReLU, LeakyReLU, SPReLU)):
        if isinstance(spec, ReLU):
            p, slope, scale = spec.p, 0.0, 1.0
        elif isinstance(spec, LeakyReLU):
            p, slope, scale = spec.p, spec.gamma, 1.0
        else:
            alpha = min(max(spec.alpha, 0.0), 0.5)
            p, slope, scale = 0.5, alpha, sprelu_scale(spec.alpha)
        if x is None:
            if dim is None:
                raise SpecError(f"{spec.kind} needs a width: pass dim or an input sample")
            on = rng.random(dim) < p
            out = None
        else:
            x = np.asarray(x, dtype=np.float64)
            on = x > 0
            out = scale * np.where(on, x, slope * x)
        return Factor(diag=scale * np.where(on, 1.0, slope), output=out)

    if isinstance(spec, Tanh):
        x = _elementwise_input(spec, x, rng, dim, DEEP_REGIME_VAR)
        t = np.tanh(x)
        return Factor(diag=1.0 - t * t, output=t)

    if isinstance(spec, SeLU):
        x = _elementwise_input(spec, x, rng, dim, spec.input_var)
        neg = spec.lam * spec.alpha * np.exp(np.minimum(x, 0.0))
        d = np.where(x > 0, spec.lam, neg)
        out = np.where(x > 0, spec.lam * x, neg - spec.lam * spec.alpha)
        return Factor(diag=d, output=out)

    if isinstance(spec, DenseGaussian):
        w = rng.standard_normal((spec.m, spec.n), dtype=dtype)
        w *= dtype(math.sqrt(spec.sigma2))
        if spec.mu:
            w += dtype(spec.mu)
        return Factor(dense=w, output=None if x is None else w @ x.astype(dtype))

    if isinstance(spec, Conv2D):
        kernel = math.sqrt(spec.sigma2) * rng.standard_normal((spec.c_out, spec.c_in, spec.k_h, spec.k_w))
        t = conv_toeplitz(kernel, spec.geometry)
        return Factor(dense=t, output=None if x is None else t @ x)

    if isinstance(spec, Orthogonal):
        k = spec.beta * haar_orthogonal(rng, spec.m, spec.n)
        return Factor(dense=k, output=None if x is None else k @ x)

    if isinstance(spec, DataNorm):
        m = spec.m
        if x is None:
            x = rng.normal(0.0, math.sqrt(spec.sigma_B2), size=m)
        x = np.asarray(x, dtype=np.float64)
        centred = x - x.mean()
        sigma = math.sqrt(float(np.mean(centred * centred)))
        u = centred / sigma
        # (1/sigma)[I - (1/m)(1 1^T + u u^T)]
        j = -(1.0 + np.outer(u, u)) / m
        j[np.diag_indices(m)] += 1.0
        return Factor(dense=j / sigma, output=u)

    if isinstance(spec, SMN):
        m = spec.m
        if x is None:
            x = rng.normal(0.0, spec.alpha2, size=m)
        x = np.asarray(x, dtype=np.float64)
        rms = math.sqrt(float(np.mean(x * x)))
        xh = x / rms
        # (1/rms)[I - (1/m) xh xh^T]
        j = -np.outer(xh, xh) / m
        j[np.diag_indices(m)] += 1.0
        return Factor(dense=j / rms, output=xh)

    if isinstance(spec, Identity):
        return Factor(diag=np.ones(out_dim), output=None if x is None else np.asarray(x, dtype=np.float64))

    raise SpecError(f"unknown component {spec!r}")


def sample_jacobian(spec: Component, input_sample: Optional[np.ndarray] = None, seed: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None, dim: Optional[int] = None,
                    max_dim: Optional[int] = None) -> np.ndarray:
    """Explicit dense Jacobian of one component."""
    return sample_factor(spec, input_sample, _rng(seed, rng), dim, max_dim).matrix()


# ---------------------------------------------------------------------------
# empirical moments
# ---------------------------------------------------------------------------


def _trace_moments(J: np.ndarray) -> tuple[float, float]:
    """(tr(JJ^T)/m, tr((JJ^T)^2)/m) from the smaller Gram matrix, rescaled to avoid overflow."""
    m, n = J.shape
    fro2 = float(np.sum(np.square(J, dtype=np.float64)))
    if fro2 == 0.0:
        return 0.0, 0.0
    s = math.sqrt(fro2 / m)
    Jn = J / J.dtype.type(s)
    gram = Jn @ Jn.T if m <= n else Jn.T @ Jn
    fourth = float(np.sum(np.square(gram, dtype=np.float64)))
    return fro2 / m, fourth / m * s**4


def empirical_moments(J: np.ndarray) -> Moments:
    """phi_hat = tr(JJ^T)/m and varphi_hat = tr((JJ^T)^2)/m - phi_hat^2, without eigendecomposition."""
    J = np.asarray(J)
    if J.ndim != 2 or not np.all(np.isfinite(J)):
        raise SpecError("Jacobian must be a finite 2-D array")
    phi, second = _trace_moments(J)
    varphi = second - phi * phi
    # a Gram spectrum has non-negative variance; clip the rounding residue
    return Moments(phi, max(varphi, 0.0), J.shape[0], J.shape[1])


# ---------------------------------------------------------------------------
# verification of the composition rules
# ---------------------------------------------------------------------------


@dataclass
class TrialConfig:
    seed: int
    components: Sequence[Component] = ()
    branches: Sequence[Sequence[Component]] = ()
    trials: int = 20
    dims: Optional[Sequence[int]] = None
    input_mean: float = 0.0
    input_std: float = 1.0
    max_dim: Optional[int] = None
    # float32 GEMMs halve the cost; traces are still accumulated in float64
    dtype: str = "float64"

    def __post_init__(self):
        if self.trials < 1:
            raise SpecError(f"trials must be >= 1, got {self.trials}", "trials")
        if not self.input_std > 0:
            raise SpecError(f"input_std must be > 0, got {self.input_std}", "input_std")
        if self.dtype not in ("float32", "float64"):
            raise SpecError(f"dtype must be float32 or float64, got {self.dtype}", "dtype")

    def to_dict(self) -> dict:
        def comp(c):
            return {"kind": c.kind, "params": c.params()}
        return {
            "seed": self.seed,
            "trials": self.trials,
            "dims": None if self.dims is None else list(self.dims),
            "components": [comp(c) for c in self.components],
            "branches": [[comp(c) for c in b] for b in self.branches],
            "input_mean": self.input_mean,
            "input_std": self.input_std,
        }


@dataclass
class VerificationReport:
    kind: str
    phi_ratio: float
    varphi_ratio: Optional[float]
    analytic_phi_ratio: float
    analytic_varphi_ratio: Optional[float]
    empirical_phi: np.ndarray = field(repr=False)
    empirical_varphi: np.ndarray = field(repr=False)
    theory_phi: np.ndarray = field(repr=False)
    theory_varphi: np.ndarray = field(repr=False)
    analytic: Moments = None
    phi_band: tuple[float, float] = PHI_BAND
    varphi_band: tuple[float, float] = VARPHI_BAND

    @staticmethod
    def _inside(x, band):
        return x is None or band[0] <= x <= band[1]

    @property
    def phi_pass(self) -> bool:
        return self._inside(self.phi_ratio, self.phi_band) and self._inside(self.analytic_phi_ratio, self.phi_band)

    @property
    def varphi_pass(self) -> bool:
        return (self._inside(self.varphi_ratio, self.varphi_band)
                and self._inside(self.analytic_varphi_ratio, self.varphi_band))

    @property
    def passed(self) -> bool:
        return self.phi_pass and self.varphi_pass

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "phi_ratio": self.phi_ratio,
            "varphi_ratio": self.varphi_ratio,
            "analytic_phi_ratio": self.analytic_phi_ratio,
            "analytic_varphi_ratio": self.analytic_varphi_ratio,
            "analytic": None if self.analytic is None else self.analytic.to_dict(),
            "per_trial": {
                "empirical_phi": self.empirical_phi.tolist(),
                "empirical_varphi": self.empirical_varphi.tolist(),
                "theory_phi": self.theory_phi.tolist(),
                "theory_varphi": self.theory_varphi.tolist(),
            },
            "phi_band": list(self.phi_band),
            "varphi_band": list(self.varphi_band),
            "phi_pass": self.phi_pass,
            "varphi_pass": self.varphi_pass,
            "pass": self.passed,
        }


def _chain_dims(components: Sequence[Component], in_dim: Optional[int]) -> list[int]:
    cur = in_dim
    if cur is None:
        for c in components:
            if not c.elementwise and not (isinstance(c, Identity) and c.m is None):
                cur = c.dims()[1]
                break
        else:
            raise SpecError("cannot infer the chain width; pass dims")
    dims = [cur]
    for k, c in enumerate(components):
        out, inp = c.dims(cur)
        if inp != cur:
            raise SpecError(f"component {k} ({c.kind}) expects input dim {inp}, receives {cur}", f"components[{k}]")
        cur = out
        dims.append(cur)
    return dims


def _check_dims(cfg: TrialConfig, dims: list[int]):
    budget = max_dim_budget(cfg.max_dim)
    if max(dims) > budget:
        raise BudgetError(f"dimension {max(dims)} exceeds max_dim={budget}")
    if cfg.dims is not None and list(cfg.dims) != dims[: len(cfg.dims)] and list(cfg.dims) != dims:
        raise SpecError(f"dims {list(cfg.dims)} do not match the chain {dims}", "dims")


def _run_chain(components, x, rng, dtype, max_dim):
    """Forward a sample through a chain; returns (J rescaled, log scale, per-factor moments)."""
    J = None
    log_scale = 0.0
    factors = []
    cur = x
    for comp in components:
        f = sample_factor(comp, cur, rng, len(cur), max_dim, dtype.type)
        factors.append(f.moments())
        cur = f.output
        if J is None:
            J = f.matrix().astype(dtype)
        else:
            J = f.apply_left(J)
        # keep entries O(1) so float32 never overflows; moments are rescaled later
        fro2 = float(np.sum(np.square(J, dtype=np.float64)))
        if fro2 == 0.0:
            break
        s = math.sqrt(fro2 / J.shape[0])
        J = J / J.dtype.type(s)
        log_scale += math.log(s)
    return J, log_scale, factors, cur


def _scaled_moments(J, log_scale) -> tuple[float, float]:
    if J is None or not np.any(J):
        return 0.0, 0.0
    phi, second = _trace_moments(J)
    c2 = math.exp(2.0 * log_scale)
    phi, second = phi * c2, second * c2 * c2
    return phi, max(second - phi * phi, 0.0)


def _ratio(num: np.ndarray, den: np.ndarray) -> Optional[float]:
    if np.any(den == 0):
        return 1.0 if np.all(num == den) else None
    return float(np.mean(num / den))


def _input(cfg: TrialConfig, rng, m0: int) -> np.ndarray:
    return cfg.input_mean + cfg.input_std * rng.standard_normal(m0)


def analytic_chain(components: Sequence[Component], in_dim: int) -> Composite:
    parts, cur = [], in_dim
    for comp in components:
        parts.append(component_part(comp, cur))
        cur = parts[-1].moments.out_dim
    return compose_serial(parts, force_varphi=True)


def verify_multiplication(cfg: TrialConfig) -> VerificationReport:
    """Empirical moments of a product Jacobian against the product rule.

    The rule is fed twice: with the empirical moments of each sampled factor,
    and with the analytic library values.
    """
    if not cfg.components:
        raise SpecError("multiplication check needs a component chain", "components")
    comps = list(cfg.components)
    dims = _chain_dims(comps, cfg.dims[0] if cfg.dims else None)
    _check_dims(cfg, dims)
    flags = [structure_flags(c) for c in comps]
    analytic = analytic_chain(comps, dims[0]).moments
    dtype = np.dtype(cfg.dtype)

    emp_phi, emp_var, th_phi, th_var = (np.empty(cfg.trials) for _ in range(4))
    for t in range(cfg.trials):
        rng = trial_rng(cfg.seed, t)
        x = _input(cfg, rng, dims[0])
        J, log_scale, factor_moments, _ = _run_chain(comps, x, rng, dtype, cfg.max_dim)
        emp_phi[t], emp_var[t] = _scaled_moments(J, log_scale)
        theory = compose_serial(list(zip(factor_moments, flags)), force_varphi=True).moments
        th_phi[t] = theory.phi
        th_var[t] = theory.varphi if theory.varphi is not None else np.nan

    return _report("multiplication", emp_phi, emp_var, th_phi, th_var, analytic)


def verify_addition(cfg: TrialConfig) -> VerificationReport:
    """Empirical moments of a sum of branch Jacobians against the sum rule.

    Each branch is sampled at the shared input; its own empirical moments feed
    the rule, alongside the analytic library values.
    """
    if len(cfg.branches) < 2:
        raise SpecError("addition check needs at least two branches", "branches")
    branches = [list(b) for b in cfg.branches]
    in_dim = cfg.dims[0] if cfg.dims else None
    if in_dim is None:
        for b in branches:
            try:
                in_dim = _chain_dims(b, None)[0]
                break
            except SpecError:
                continue
        else:
            raise SpecError("cannot infer the branch width; pass dims")
    branch_dims = [_chain_dims(b, in_dim) for b in branches]
    if len({d[-1] for d in branch_dims}) != 1:
        raise SpecError("branches disagree on output dim", "branches")
    _check_dims(cfg, [max(d) for d in branch_dims])
    branch_flags = [analytic_chain(b, in_dim).flags for b in branches]
    analytic = compose_parallel([analytic_chain(b, in_dim) for b in branches], force_varphi=True).moments
    dtype = np.dtype(cfg.dtype)

    emp_phi, emp_var, th_phi, th_var = (np.empty(cfg.trials) for _ in range(4))
    for t in range(cfg.trials):
        rng = trial_rng(cfg.seed, t)
        x = _input(cfg, rng, in_dim)
        total = None
        parts = []
        for b, fl in zip(branches, branch_flags):
            J, log_scale, _, _ = _run_chain(b, x, rng, dtype, cfg.max_dim)
            phi_b, var_b = _scaled_moments(J, log_scale)
            parts.append(Composite(Moments(phi_b, var_b, branch_dims[0][-1], in_dim), fl))
            Jb = J * J.dtype.type(math.exp(log_scale)) if J is not None else 0.0
            total = Jb if total is None else total + Jb
        emp_phi[t], emp_var[t] = _scaled_moments(total, 0.0) if np.ndim(total) == 2 else (0.0, 0.0)
        theory = compose_parallel(parts, force_varphi=True).moments
        th_phi[t] = theory.phi
        th_var[t] = theory.varphi if theory.varphi is not None else np.nan

    return _report("addition", emp_phi, emp_var, th_phi, th_var, analytic)


def _report(kind, emp_phi, emp_var, th_phi, th_var, analytic: Moments) -> VerificationReport:
    phi_ratio = _ratio(emp_phi, th_phi)
    var_ratio = None if np.any(np.isnan(th_var)) else _ratio(emp_var, th_var)
    a_phi = _ratio(emp_phi, np.full_like(emp_phi, analytic.phi))
    a_var = None if analytic.varphi is None else _ratio(emp_var, np.full_like(emp_var, analytic.varphi))
    return VerificationReport(kind, phi_ratio, var_ratio, a_phi, a_var, emp_phi, emp_var, th_phi, th_var, analytic)


# ---------------------------------------------------------------------------
# randomised configurations
# ---------------------------------------------------------------------------


def random_multiplication_config(rng: np.random.Generator, seed: int, trials: int = 20,
                                 m_range=(500, 1500), L_range=(2, 8), sigma_range=(0.1, 2.0),
                                 mu_range=(-5.0, 5.0), std_range=(0.1, 5.0), dtype: str = "float64") -> TrialConfig:
    """A chain of L [Gaussian dense, ReLU] layers with random widths and weight scales."""
    L = int(rng.integers(L_range[0], L_range[1] + 1))
    dims = [int(d) for d in rng.integers(m_range[0], m_range[1] + 1, size=L + 1)]
    comps = []
    for i in range(L):
        sigma = float(rng.uniform(*sigma_range))
        comps += [DenseGaussian(dims[i + 1], dims[i], 0.0, sigma * sigma), ReLU(0.5)]
    return TrialConfig(seed=seed, components=comps, trials=trials,
                       input_mean=float(rng.uniform(*mu_range)), input_std=float(rng.uniform(*std_range)),
                       dtype=dtype)


def random_addition_config(rng: np.random.Generator, seed: int, trials: int = 20,
                           m_range=(500, 1500), n_range=(2, 8), sigma_range=(0.1, 2.0),
                           mu_range=(-5.0, 5.0), std_range=(0.1, 5.0), dtype: str = "float64") -> TrialConfig:
    """A sum of n [Gaussian dense, ReLU] branches of equal width m."""
    m = int(rng.integers(m_range[0], m_range[1] + 1))
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    branches = []
    for _ in range(n):
        sigma = float(rng.uniform(*sigma_range))
        branches.append([DenseGaussian(m, m, 0.0, sigma * sigma), ReLU(0.5)])
    return TrialConfig(seed=seed, branches=branches, trials=trials,
                       input_mean=float(rng.uniform(*mu_range)), input_std=float(rng.uniform(*std_range)),
                       dtype=dtype)


@dataclass
class SweepResult:
    reports: list[VerificationReport]
    phi_fraction: float
    varphi_fraction: float

    def to_dict(self) -> dict:
        return {"phi_fraction": self.phi_fraction, "varphi_fraction": self.varphi_fraction,
                "configs": [{"phi_ratio": r.phi_ratio, "varphi_ratio": r.varphi_ratio,
                             "analytic_phi_ratio": r.analytic_phi_ratio,
                             "analytic_varphi_ratio": r.analytic_varphi_ratio} for r in self.reports]}


def sweep(kind: str, configs: int, seed: int, trials: int = 20, dtype: str = "float64", **ranges) -> SweepResult:
    """Run many random configs; fractions count configs whose ratios (both routes) sit in the bands."""
    rng = trial_rng(seed, 0)
    make, verify = {
        "multiplication": (random_multiplication_config, verify_multiplication),
        "addition": (random_addition_config, verify_addition),
    }[kind]
    reports = []
    for c in range(configs):
        cfg = make(rng, seed=seed + 1 + c, trials=trials, dtype=dtype, **ranges)
        reports.append(verify(cfg))
    phi_ok = sum(r.phi_pass for r in reports) / configs
    var_ok = sum(r.varphi_pass for r in reports) / configs
    return SweepResult(reports, phi_ok, var_ok)


# ---------------------------------------------------------------------------
# structure checks
# ---------------------------------------------------------------------------


@dataclass
class StructureCheck:
    offdiag_max: float
    diag_mean: float
    diag_spread: float
    entry_mean_max: float
    samples: int


def structure_check(spec: Component, samples: int, seed: int = 0, dim: Optional[int] = None) -> StructureCheck:
    """Average J^T J and J over samples to test expectant orthogonality and centrality empirically."""
    acc_gram = None
    acc_j = None
    for t in range(samples):
        J = sample_jacobian(spec, rng=trial_rng(seed, t), dim=dim)
        g = J.T @ J
        acc_gram = g if acc_gram is None else acc_gram + g
        acc_j = J.copy() if acc_j is None else acc_j + J
    acc_gram /= samples
    acc_j /= samples
    diag = np.diag(acc_gram).copy()
    off = acc_gram - np.diag(diag)
    return StructureCheck(float(np.abs(off).max()) if off.size > 1 else 0.0, float(diag.mean()),
                          float(diag.std()), float(np.abs(acc_j).max()), samples)
