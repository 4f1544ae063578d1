"""Initialisation parameters that put each block at phi = 1."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConvergenceError, SpecError
from .graph import Parallel, Serial, block_composite, compose_serial, component_part
from .moments import DenseGaussian, Identity, LeakyReLU, Orthogonal, ReLU, Tanh, selu_moments

ACTIVATIONS = ("relu", "leaky_relu", "tanh")
FAMILIES = ("gaussian", "orthogonal", "sws")

SPRELU_ALPHA_MAX = 0.5

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 200
NEWTON_MAX_HALVINGS = 30
NEWTON_START = (1.05, 1.67)


@dataclass
class GainRecommendation:
    parameter_name: str
    values: dict
    achieved_phi: float
    achieved_varphi: Optional[float]
    notes: list[str] = field(default_factory=list)

    @property
    def value(self) -> float:
        return self.values[self.parameter_name]

    def to_dict(self) -> dict:
        return {
            "parameter_name": self.parameter_name,
            "values": dict(self.values),
            "achieved_phi": self.achieved_phi,
            "achieved_varphi": self.achieved_varphi,
            "notes": list(self.notes),
        }


def _activation(name: str, gamma: float):
    if name == "relu":
        return ReLU(0.5)
    if name == "leaky_relu":
        if not 0.0 <= gamma <= 1.0:
            raise SpecError(f"gamma must lie in [0, 1], got {gamma}", "gamma")
        return LeakyReLU(0.5, gamma)
    if name == "tanh":
        return Tanh()
    raise SpecError(f"unsupported activation {name!r}; choose from {', '.join(ACTIVATIONS)}", "activation")


def _table_varphi(activation: str, family: str, gamma: float, m: int, n: int) -> float:
    ratio = 0.0 if family == "orthogonal" else m / n
    if activation == "relu":
        return 1.0 + ratio
    if activation == "leaky_relu":
        return ((1 - gamma**2) / (1 + gamma**2)) ** 2 + ratio
    return ratio


def closed_form_gain(activation: str, family: str, n: Optional[int] = None, m: Optional[int] = None,
                     gamma: float = 0.0) -> GainRecommendation:
    """Weight scale that gives a [linear, activation] block phi = 1 at p = 1/2.

    ``family`` is ``gaussian`` (returns sigma), ``orthogonal`` (beta) or
    ``sws`` (g for scaled weight standardisation). ``m`` defaults to ``n``.
    """
    act = _activation(activation, gamma)
    if family not in FAMILIES:
        raise SpecError(f"unsupported family {family!r}; choose from {', '.join(FAMILIES)}", "family")
    g2 = gamma**2 if activation == "leaky_relu" else 0.0
    # phi of the activation alone at p = 1/2; the linear part must supply its inverse
    act_phi = 1.0 if activation == "tanh" else 0.5 * (1.0 + g2)
    notes = []

    if family == "orthogonal":
        n = n or 1
        m = m or n
        if m > n:
            raise SpecError(f"orthogonal rows need m <= n, got m={m}, n={n}", "m")
        beta = math.sqrt(1.0 / act_phi)
        linear = Orthogonal(beta, m, n)
        name, values = "beta", {"beta": beta}
        if activation == "tanh":
            notes.append("tanh gain is approximately 1 (linearised tanh)")
    else:
        if n is None or n < 1:
            raise SpecError(f"n must be a positive integer for family {family}, got {n}", "n")
        m = m or n
        sigma2 = 1.0 / (act_phi * n)
        linear = DenseGaussian(m, n, 0.0, sigma2)
        if family == "gaussian":
            name, values = "sigma", {"sigma": math.sqrt(sigma2), "sigma2": sigma2}
        else:
            name, values = "g", {"g": math.sqrt(sigma2)}
            notes.append("weights standardised to zero mean and variance g^2 per entry")

    block = compose_serial([component_part(linear, n), component_part(act, m)])
    if activation == "tanh":
        notes.append("tanh moments use the linearisation around 0")
    return GainRecommendation(name, values, block.moments.phi,
                              _table_varphi(activation, family, gamma, m, n), notes)


def sprelu_scale(alpha: float) -> float:
    """Output rescaling 1/sqrt(1 + alpha^2) for PReLU, with alpha clipped to [0, 0.5]."""
    if not math.isfinite(alpha):
        raise SpecError(f"alpha must be finite, got {alpha}", "alpha")
    if alpha < 0.0 or alpha > SPRELU_ALPHA_MAX:
        clipped = min(max(alpha, 0.0), SPRELU_ALPHA_MAX)
        warnings.warn(f"sPReLU alpha={alpha} clipped to {clipped}", stacklevel=2)
        alpha = clipped
    return 1.0 / math.sqrt(1.0 + alpha * alpha)


# ---------------------------------------------------------------------------
# SeLU coefficients
# ---------------------------------------------------------------------------


def selu_residuals(lam: float, alpha: float, gamma0: float, eps: float) -> tuple[float, float]:
    """Residuals of (gamma0 * phi - (1 + eps), E[SeLU^2] - 1) at pre-activation variance gamma0."""
    phi, second, _ = selu_moments(lam, alpha, gamma0)
    return gamma0 * phi - (1.0 + eps), second - 1.0


@dataclass
class SeluSolution:
    lam: float
    alpha: float
    iterations: int
    residuals: tuple[float, float]

    def __iter__(self):
        return iter((self.lam, self.alpha))


def selu_solve(gamma0: float = 1.0, eps: float = 0.0, start=NEWTON_START) -> SeluSolution:
    """Solve for SeLU's (lambda, alpha) with damped Newton and a finite-difference Jacobian.

    At eps = 0 the only solution is the rectifier limit (sqrt(2 / gamma0), 0),
    which is returned exactly.
    """
    if not gamma0 > 0 or not math.isfinite(gamma0):
        raise SpecError(f"gamma0 must be > 0, got {gamma0}", "gamma0")
    if not eps >= 0 or not math.isfinite(eps):
        raise SpecError(f"eps must be >= 0, got {eps}", "eps")
    if eps == 0.0:
        lam = math.sqrt(2.0 / gamma0)
        return SeluSolution(lam, 0.0, 0, selu_residuals(lam, 0.0, gamma0, 0.0))

    x = [float(start[0]), float(start[1])]
    r = selu_residuals(x[0], x[1], gamma0, eps)
    norm = math.hypot(*r)
    for it in range(1, NEWTON_MAX_ITER + 1):
        if max(abs(r[0]), abs(r[1])) < NEWTON_TOL:
            return SeluSolution(x[0], x[1], it - 1, r)
        jac = [[0.0, 0.0], [0.0, 0.0]]
        for j in range(2):
            h = 1e-7 * max(1.0, abs(x[j]))
            xp = list(x)
            xp[j] += h
            rp = selu_residuals(xp[0], xp[1], gamma0, eps)
            jac[0][j] = (rp[0] - r[0]) / h
            jac[1][j] = (rp[1] - r[1]) / h
        det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0]
        if det == 0.0 or not math.isfinite(det):
            raise ConvergenceError(f"singular Jacobian at lambda={x[0]}, alpha={x[1]}", r)
        dx0 = -(jac[1][1] * r[0] - jac[0][1] * r[1]) / det
        dx1 = -(-jac[1][0] * r[0] + jac[0][0] * r[1]) / det

        step = 1.0
        for _ in range(NEWTON_MAX_HALVINGS + 1):
            # the equations are even in alpha, so reflecting a negative iterate is exact
            cand = [x[0] + step * dx0, abs(x[1] + step * dx1)]
            rc = selu_residuals(cand[0], cand[1], gamma0, eps)
            nc = math.hypot(*rc)
            if math.isfinite(nc) and nc < norm:
                break
            step *= 0.5
        else:
            raise ConvergenceError(f"line search failed after {NEWTON_MAX_HALVINGS} halvings", r)
        x, r, norm = cand, rc, nc

    if max(abs(r[0]), abs(r[1])) < NEWTON_TOL:
        return SeluSolution(x[0], x[1], NEWTON_MAX_ITER, r)
    raise ConvergenceError(f"no convergence in {NEWTON_MAX_ITER} iterations", r)


def depth_aware_eps(L: int) -> tuple[float, float]:
    """eps = 0.9 / L, strictly under 1/L, with the induced network bound (1 + eps)^L."""
    if L < 1:
        raise SpecError(f"L must be >= 1, got {L}", "L")
    eps = 0.9 / L
    return eps, (1.0 + eps) ** L


# ---------------------------------------------------------------------------
# residual branches
# ---------------------------------------------------------------------------


def fixup_scale(L: int, m: int, p: float, n: int, family: str = "gaussian") -> GainRecommendation:
    """Per-layer scale of an m-layer residual branch so that the branch phi is L^-p.

    The resulting block phi is 1 + (alpha / 2)^m with alpha = 2 L^(-p/m).
    """
    if L < 1 or m < 1 or n < 1:
        raise SpecError(f"L, m, n must be >= 1, got L={L}, m={m}, n={n}")
    if not p > 1:
        raise SpecError(f"p must exceed 1 for the residual sum to stay bounded, got {p}", "p")
    shrink = L ** (-p / m)
    alpha = 2.0 * shrink
    if family == "gaussian":
        sigma2 = shrink * 2.0 / n
        name, values = "sigma2", {"sigma2": sigma2, "downsample_sigma2": 1.0 / n}
        linear = DenseGaussian(n, n, 0.0, sigma2)
    elif family == "orthogonal":
        beta = L ** (-p / (2 * m)) * math.sqrt(2.0)
        name, values = "beta", {"beta": beta, "downsample_beta": 1.0}
        linear = Orthogonal(beta, n, n)
    else:
        raise SpecError(f"unsupported family {family!r}; choose gaussian or orthogonal", "family")
    values["alpha"] = alpha

    branch = Serial([part for _ in range(m) for part in (linear, ReLU(0.5))])
    block = block_composite(Parallel([Serial([Identity()]), branch]), n)
    predicted = 1.0 + (alpha / 2.0) ** m
    notes = [f"block phi 1 + (alpha/2)^m = {predicted!r}",
             "scalar multipliers and biases of the residual branch are not modelled"]
    return GainRecommendation(name, values, block.moments.phi, block.moments.varphi, notes)
