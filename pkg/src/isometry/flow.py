"""Forward propagation of activation second moments and stability estimates.

Through a general linear transform the mean square of the activations is
multiplied by the transform's phi. Normalisation layers reset it to 1, which
binds their phi to the inverse of the incoming second moment.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import SpecError
from .graph import NetworkGraph, Serial, normalize_block
from .moments import DataNorm, SMN, component_moments, selu_moments, structure_flags

NEUTRAL_TOL = 1e-9
EFFECTIVE_DEPTH_THRESHOLD = 1e-6
PLUS_ONE_C = 2.0


@dataclass(frozen=True)
class FlowState:
    alpha2: float
    layer_index: int
    kind: str = ""
    phi: float = 1.0
    block_index: int = 0


def _chain_flow(parts, alpha2: float, dim: int, where: str) -> list[tuple[str, float, float]]:
    steps = []
    cur_dim = dim
    for k, comp in enumerate(parts):
        if isinstance(comp, (DataNorm, SMN)):
            # the normalised output has unit second moment whatever came in
            phi = 1.0 / alpha2
            alpha2 = 1.0
        else:
            if not structure_flags(comp).general_linear:
                raise SpecError(f"{comp.kind} is not a general linear transform; "
                                "its second moment does not scale by phi", f"{where}[{k}]")
            phi = component_moments(comp, cur_dim).phi
            alpha2 = alpha2 * phi
        cur_dim = comp.dims(cur_dim)[0]
        steps.append((comp.kind, phi, alpha2))
    return steps


def propagate_alpha2(g: NetworkGraph, alpha2_in: float = 1.0) -> list[FlowState]:
    """Second moment after every component (serial blocks) or every block (parallel blocks).

    Parallel branches see the same input; their outputs are summed, so the
    block output second moment is the sum of the branch values (branches
    are uncorrelated when at most one is non-central).
    """
    if not alpha2_in > 0:
        raise SpecError(f"alpha2_in must be > 0, got {alpha2_in}", "alpha2_in")
    states = []
    alpha2 = alpha2_in
    layer = 0
    for i, block in enumerate(g.blocks):
        block = normalize_block(block)
        if isinstance(block, Serial):
            for kind, phi, a2 in _chain_flow(block.parts, alpha2, g.dims[i], f"blocks[{i}].serial"):
                layer += 1
                states.append(FlowState(a2, layer, kind, phi, i))
            alpha2 = states[-1].alpha2
        else:
            outs = [_chain_flow(b.parts, alpha2, g.dims[i], f"blocks[{i}].parallel[{k}]")[-1][2]
                    for k, b in enumerate(block.branches)]
            new = math.fsum(outs)
            layer += 1
            states.append(FlowState(new, layer, "Parallel", new / alpha2, i))
            alpha2 = new
    return states


def resnet_alpha2_profile(num_blocks: int, downsample_at: Sequence[int] = ()) -> tuple[list[Fraction], list[Fraction]]:
    """Second moments of a residual network whose branches end in batch normalisation.

    Each block adds a unit-second-moment branch to the shortcut, so alpha2
    grows by 1; a downsampling block normalises its shortcut too and resets
    alpha2 to 2. Returns exact fractions: the alpha2 sequence (length
    num_blocks + 1) and the per-block phi = alpha2[l + 1] / alpha2[l].
    """
    if num_blocks < 0:
        raise SpecError(f"num_blocks must be >= 0, got {num_blocks}")
    ds = list(downsample_at)
    if ds != sorted(ds) or any(not 0 <= d < num_blocks for d in ds):
        raise SpecError(f"downsample_at must be sorted indices in [0, {num_blocks}), got {ds}")
    alpha2 = [Fraction(1)]
    for l in range(num_blocks):
        alpha2.append(Fraction(2) if l in ds else alpha2[-1] + 1)
    phis = [alpha2[l + 1] / alpha2[l] for l in range(num_blocks)]
    return alpha2, phis


class NormalizationClass(str, enum.Enum):
    PARTIAL = "partial_normalized"
    OVER = "over_normalized"
    NEUTRAL = "neutral"
    MIXED = "mixed"
    NONE = "none"

    def __str__(self):
        return self.value


def classify_point(h_value: float, alpha2: float, beta: float = 1.0) -> NormalizationClass:
    """Where one layer's phi sits relative to the exact normalising value beta / alpha2."""
    target = beta / alpha2
    if abs(h_value - target) <= NEUTRAL_TOL:
        return NormalizationClass.NEUTRAL
    if alpha2 < beta:
        if 1.0 < h_value < target:
            return NormalizationClass.PARTIAL
        if h_value > target:
            return NormalizationClass.OVER
    else:
        if target < h_value < 1.0:
            return NormalizationClass.PARTIAL
        if 0.0 < h_value < target:
            return NormalizationClass.OVER
    return NormalizationClass.NONE


def classify_normalization(h: Callable[[float], float], beta: float = 1.0,
                           probe_points: Sequence[float] = (0.5, 2.0)) -> tuple[NormalizationClass, list]:
    """Classify a map alpha2 -> phi over probe points; returns the unanimous class (or mixed) and per-probe classes."""
    if not probe_points:
        raise SpecError("need at least one probe point")
    per = []
    for a in probe_points:
        if not a > 0:
            raise SpecError(f"probe points must be positive, got {a}")
        if a == beta:
            raise SpecError(f"probe {a} equals beta; both definitions are empty there")
        per.append((a, classify_point(h(a), a, beta)))
    classes = {c for _, c in per}
    verdict = classes.pop() if len(classes) == 1 else NormalizationClass.MIXED
    return verdict, per


def selu_block_h(lam: float, alpha: float, gamma0: float = 1.0) -> Callable[[float], float]:
    """phi of a [linear, SeLU] block as a function of the incoming second moment.

    The linear part scales the second moment by gamma0, so the SeLU sees
    pre-activation variance gamma0 * alpha2.
    """
    def h(alpha2: float) -> float:
        return gamma0 * selu_moments(lam, alpha, gamma0 * alpha2)[0]
    return h


# ---------------------------------------------------------------------------
# error accumulation
# ---------------------------------------------------------------------------


@dataclass
class ShallowTrickSummary:
    mean: float
    std: float
    effective_depth: int
    samples: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "effective_depth": self.effective_depth,
                "trials": int(self.samples.size)}


def effective_depth(coef: float, mean_abs_err: float, L: int, threshold: float = EFFECTIVE_DEPTH_THRESHOLD) -> int:
    """Smallest order i whose expected term C(L, i) * (coef * E|err|)^i drops below threshold."""
    x = coef * mean_abs_err
    if x == 0.0:
        return 0
    log_x = math.log(x)
    log_thr = math.log(threshold)
    for i in range(L + 1):
        log_term = math.lgamma(L + 1) - math.lgamma(i + 1) - math.lgamma(L - i + 1) + i * log_x
        if log_term < log_thr:
            return i
    return L


def shallow_trick_estimate(omega: float, tau: float, L: int, error_draws: Callable, trials: int,
                           seed: int = 0, mode: str = "relative") -> ShallowTrickSummary:
    """Distribution of prod_i (1 + (1 - omega) gamma_i), or prod_i (1 + tau delta_i) in absolute mode.

    ``error_draws(rng, L)`` returns the L per-layer errors of one trial; trial
    t uses its own generator keyed by ``seed ^ t``.
    """
    if not 0.0 <= omega <= 1.0:
        raise SpecError(f"omega must lie in [0, 1], got {omega}", "omega")
    if trials < 1 or L < 1:
        raise SpecError(f"trials and L must be >= 1, got {trials}, {L}")
    if mode == "relative":
        coef = 1.0 - omega
    elif mode == "absolute":
        coef = tau
    else:
        raise SpecError(f"mode must be relative or absolute, got {mode!r}", "mode")
    samples = np.empty(trials)
    mean_abs = 0.0
    for t in range(trials):
        rng = np.random.Generator(np.random.Philox(key=seed ^ t))
        errs = np.asarray(error_draws(rng, L), dtype=float)
        if errs.shape != (L,):
            raise SpecError(f"error_draws must return {L} values, got shape {errs.shape}")
        samples[t] = np.prod(1.0 + coef * errs)
        mean_abs += np.abs(errs).mean()
    mean_abs /= trials
    return ShallowTrickSummary(float(samples.mean()), float(samples.std()),
                               effective_depth(coef, mean_abs, L), samples)


def constant_errors(value: float) -> Callable:
    def draw(rng, L):
        return np.full(L, value)
    return draw


def gaussian_errors(mean: float, std: float) -> Callable:
    def draw(rng, L):
        return rng.normal(mean, std, size=L)
    return draw


@dataclass
class PlusOneReport:
    ok: bool
    bound: float
    first_order: float
    remainder: float
    threshold: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def plus_one_check(branch_phi: float, L: int, p: float, C: float = PLUS_ONE_C) -> PlusOneReport:
    """Whether a residual branch is small enough, branch_phi <= C / L^p with p > 1, for L blocks.

    ``bound`` is the network phi (1 + branch_phi)^L = 1 + L * branch_phi + remainder.
    """
    if L < 1 or not p > 0:
        raise SpecError(f"need L >= 1 and p > 0, got L={L}, p={p}")
    if branch_phi < 0:
        raise SpecError(f"branch_phi must be >= 0, got {branch_phi}")
    threshold = C / L**p
    ok = p > 1 and branch_phi <= threshold
    first = 1.0 + L * branch_phi
    bound = math.exp(L * math.log1p(branch_phi))
    # expm1 keeps the remainder accurate when branch_phi is tiny
    remainder = math.expm1(L * math.log1p(branch_phi)) - L * branch_phi
    return PlusOneReport(ok, bound, first, remainder, threshold)
