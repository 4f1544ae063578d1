"""Spectrum-moments of network components.

For a Jacobian ``J`` of shape (m, n) the two spectrum-moments are

    phi    = E[tr(J J^T)] / m                  (mean eigenvalue of J J^T)
    varphi = E[tr((J J^T)^2)] / m - phi**2     (eigenvalue variance)

This module holds the value types and the closed forms for every component of
the library. ``varphi=None`` means the value is not available analytically.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields
from typing import ClassVar, Optional, Union

from scipy.special import erfcx

from .errors import SpecError
from .kernel import ConvGeometry, effective_kernel_size

VARPHI_EPS = 1e-9
# below this width the Wishart formulas for non-zero-mean dense layers are unreliable
ASYMPTOTIC_MIN_DIM = 64

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

TANH_NOTE = "tanh linearised around 0: assumes activations concentrated near zero (deep regime)"
SELU_NOTE = "SeLU structure flags (expectant orthogonal, non-central) are extrapolated from other element-wise activations"


@dataclass(frozen=True)
class Moments:
    phi: float
    varphi: Optional[float]
    out_dim: int = 1
    in_dim: int = 1
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if not math.isfinite(self.phi) or self.phi < 0:
            raise ValueError(f"phi must be finite and >= 0, got {self.phi}")
        if self.varphi is not None and self.varphi < -VARPHI_EPS * max(1.0, self.phi**2):
            raise ValueError(f"varphi must be >= 0 up to rounding, got {self.varphi}")
        if self.out_dim < 1 or self.in_dim < 1:
            raise ValueError(f"dimensions must be positive, got {self.out_dim}x{self.in_dim}")

    @property
    def varphi_known(self) -> bool:
        return self.varphi is not None

    def to_dict(self) -> dict:
        return {
            "phi": self.phi,
            "varphi": self.varphi,
            "out_dim": self.out_dim,
            "in_dim": self.in_dim,
            "notes": list(self.notes),
        }


class Invariance(enum.IntEnum):
    """Order up to which interposed Haar unitaries leave the moments unchanged."""

    NONE = 0
    FIRST = 1
    SECOND = 2
    INFINITE = 3

    def __str__(self):
        return self.name.lower()


@dataclass(frozen=True)
class StructureFlags:
    expectant_orthogonal: bool
    central: bool
    unitary_invariance_order: Invariance = Invariance.NONE
    r_diagonal: bool = False
    general_linear: bool = False

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["unitary_invariance_order"] = str(self.unitary_invariance_order)
        return d


# ---------------------------------------------------------------------------
# component descriptions
# ---------------------------------------------------------------------------


def _check(cond: bool, message: str, param: str):
    if not cond:
        raise SpecError(message, f"params.{param}")


def _finite(spec, *names):
    for name in names:
        value = getattr(spec, name)
        _check(isinstance(value, (int, float)) and math.isfinite(value), f"must be a finite number, got {value!r}", name)


def _positive_int(spec, *names):
    for name in names:
        value = getattr(spec, name)
        _check(isinstance(value, int) and not isinstance(value, bool) and value >= 1,
               f"must be a positive integer, got {value!r}", name)


@dataclass(frozen=True)
class Component:
    """Base class of the component library; concrete kinds are the subclasses."""

    kind: ClassVar[str] = ""
    elementwise: ClassVar[bool] = False

    def dims(self, dim: Optional[int] = None) -> tuple[int, int]:
        """(out_dim, in_dim); element-wise parts take ``dim`` from their context."""
        d = 1 if dim is None else dim
        return d, d

    def params(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class ReLU(Component):
    kind: ClassVar[str] = "ReLU"
    elementwise: ClassVar[bool] = True
    p: float = 0.5

    def __post_init__(self):
        _finite(self, "p")
        _check(0.0 <= self.p <= 1.0, f"must lie in [0, 1], got {self.p}", "p")


@dataclass(frozen=True)
class LeakyReLU(Component):
    kind: ClassVar[str] = "LeakyReLU"
    elementwise: ClassVar[bool] = True
    p: float = 0.5
    gamma: float = 0.01

    def __post_init__(self):
        _finite(self, "p", "gamma")
        _check(0.0 <= self.p <= 1.0, f"must lie in [0, 1], got {self.p}", "p")
        _check(0.0 <= self.gamma <= 1.0, f"must lie in [0, 1], got {self.gamma}", "gamma")


@dataclass(frozen=True)
class Tanh(Component):
    kind: ClassVar[str] = "Tanh"
    elementwise: ClassVar[bool] = True


@dataclass(frozen=True)
class SPReLU(Component):
    """PReLU rescaled by 1/sqrt(1 + alpha^2), at a fixed alpha snapshot and p = 1/2."""

    kind: ClassVar[str] = "SPReLU"
    elementwise: ClassVar[bool] = True
    alpha: float = 0.25

    def __post_init__(self):
        _finite(self, "alpha")
        _check(self.alpha >= 0.0, f"must be >= 0, got {self.alpha}", "alpha")


@dataclass(frozen=True)
class SeLU(Component):
    kind: ClassVar[str] = "SeLU"
    elementwise: ClassVar[bool] = True
    lam: float = SELU_LAMBDA
    alpha: float = SELU_ALPHA
    input_var: float = 1.0

    def __post_init__(self):
        _finite(self, "lam", "alpha", "input_var")
        _check(self.input_var > 0, f"must be > 0, got {self.input_var}", "input_var")


@dataclass(frozen=True)
class DenseGaussian(Component):
    """Fully connected layer with an (m, n) kernel of i.i.d. N(mu, sigma2) entries."""

    kind: ClassVar[str] = "DenseGaussian"
    m: int = 1
    n: int = 1
    mu: float = 0.0
    sigma2: float = 1.0

    def __post_init__(self):
        _positive_int(self, "m", "n")
        _finite(self, "mu", "sigma2")
        _check(self.sigma2 > 0, f"must be > 0, got {self.sigma2}", "sigma2")

    def dims(self, dim=None):
        return self.m, self.n


@dataclass(frozen=True)
class Conv2D(Component):
    kind: ClassVar[str] = "Conv2D"
    c_out: int = 1
    c_in: int = 1
    k_h: int = 3
    k_w: int = 3
    s_h: int = 1
    s_w: int = 1
    p_h: int = 0
    p_w: int = 0
    h_in: int = 8
    w_in: int = 8
    sigma2: float = 1.0

    def __post_init__(self):
        _positive_int(self, "c_out", "c_in", "k_h", "k_w", "s_h", "s_w", "h_in", "w_in")
        for name in ("p_h", "p_w"):
            value = getattr(self, name)
            _check(isinstance(value, int) and value >= 0, f"must be a non-negative integer, got {value!r}", name)
        _finite(self, "sigma2")
        _check(self.sigma2 > 0, f"must be > 0, got {self.sigma2}", "sigma2")
        self.geometry  # validates output size and padding

    @property
    def geometry(self) -> ConvGeometry:
        return ConvGeometry(self.k_h, self.k_w, self.s_h, self.s_w, self.p_h, self.p_w, self.h_in, self.w_in)

    def dims(self, dim=None):
        g = self.geometry
        return self.c_out * g.h_out * g.w_out, self.c_in * self.h_in * self.w_in


@dataclass(frozen=True)
class Orthogonal(Component):
    """Transform with orthogonal rows scaled by beta: K K^T = beta^2 I (requires m <= n)."""

    kind: ClassVar[str] = "Orthogonal"
    beta: float = 1.0
    m: int = 1
    n: int = 1

    def __post_init__(self):
        _finite(self, "beta")
        _check(self.beta > 0, f"must be > 0, got {self.beta}", "beta")
        _positive_int(self, "m", "n")
        _check(self.m <= self.n, f"orthogonal rows need m <= n, got m={self.m}, n={self.n}", "m")

    def dims(self, dim=None):
        return self.m, self.n


@dataclass(frozen=True)
class DataNorm(Component):
    kind: ClassVar[str] = "DataNorm"
    sigma_B2: float = 1.0
    m: int = 1

    def __post_init__(self):
        _finite(self, "sigma_B2")
        _check(self.sigma_B2 > 0, f"must be > 0, got {self.sigma_B2}", "sigma_B2")
        _positive_int(self, "m")

    def dims(self, dim=None):
        return self.m, self.m


@dataclass(frozen=True)
class SMN(Component):
    """Second moment normalisation; ``alpha2`` is the root-mean-square of the input."""

    kind: ClassVar[str] = "SMN"
    alpha2: float = 1.0
    m: int = 1

    def __post_init__(self):
        _finite(self, "alpha2")
        _check(self.alpha2 > 0, f"must be > 0, got {self.alpha2}", "alpha2")
        _positive_int(self, "m")

    def dims(self, dim=None):
        return self.m, self.m


@dataclass(frozen=True)
class Identity(Component):
    kind: ClassVar[str] = "Identity"
    m: Optional[int] = None

    def __post_init__(self):
        if self.m is not None:
            _positive_int(self, "m")

    def dims(self, dim=None):
        d = self.m if self.m is not None else (1 if dim is None else dim)
        return d, d


ComponentSpec = Union[ReLU, LeakyReLU, Tanh, SPReLU, SeLU, DenseGaussian, Conv2D, Orthogonal, DataNorm, SMN, Identity]

KINDS: dict[str, type[Component]] = {
    cls.kind: cls
    for cls in (ReLU, LeakyReLU, Tanh, SPReLU, SeLU, DenseGaussian, Conv2D, Orthogonal, DataNorm, SMN, Identity)
}


# ---------------------------------------------------------------------------
# Gaussian helpers
# ---------------------------------------------------------------------------


def normal_cdf(x: float, mean: float = 0.0, var: float = 1.0) -> float:
    """CDF of N(mean, var) at x, through the complementary error function."""
    return 0.5 * math.erfc(-(x - mean) / math.sqrt(2.0 * var))


def _exp_tail(a: float) -> float:
    """exp(a^2 / 2) * Phi(-a), evaluated without overflow for large a."""
    return 0.5 * float(erfcx(a / math.sqrt(2.0)))


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------


def selu_moments(lam: float, alpha: float, input_var: float) -> tuple[float, float, float]:
    """Closed-form statistics of SeLU at pre-activations x ~ N(0, input_var).

    Returns ``(phi, E[SeLU(x)^2], E[SeLU(x)])`` where ``phi = E[SeLU'(x)^2]``.
    """
    if not input_var > 0:
        raise SpecError(f"input_var must be > 0, got {input_var}", "input_var")
    s = math.sqrt(input_var)
    # e^{2 s^2} cdf(-2 s^2; N(0, s^2)) and e^{s^2/2} cdf(-s^2; N(0, s^2))
    tail2 = _exp_tail(2.0 * s)
    tail1 = _exp_tail(s)
    la2 = lam * lam * alpha * alpha
    phi = la2 * tail2 + 0.5 * lam * lam
    second = 0.5 * lam * lam * input_var + 0.5 * la2 + la2 * (tail2 - 2.0 * tail1)
    mean = lam * alpha * tail1 - 0.5 * lam * alpha + math.sqrt(input_var / (2.0 * math.pi)) * lam
    return phi, second, mean


def selu_derivative_fourth_moment(lam: float, alpha: float, input_var: float) -> float:
    """E[SeLU'(x)^4] for x ~ N(0, input_var); gives the eigenvalue variance of the diagonal Jacobian."""
    s = math.sqrt(input_var)
    return lam**4 * alpha**4 * _exp_tail(4.0 * s) + 0.5 * lam**4


def leaky_moments(p: float, gamma: float) -> tuple[float, float]:
    g2 = gamma * gamma
    phi = p + g2 * (1.0 - p)
    return phi, g2 * g2 * (1.0 - p) + p - phi * phi


def component_moments(spec: Component, dim: Optional[int] = None) -> Moments:
    """Analytic (phi, varphi) of one library component.

    ``dim`` sets the width of element-wise parts, which carry no dimension of
    their own; it is ignored by parts with intrinsic dimensions.
    """
    out_dim, in_dim = spec.dims(dim)

    def mk(phi, varphi, *notes):
        if varphi is not None and -VARPHI_EPS < varphi < 0:
            varphi = 0.0
        return Moments(phi, varphi, out_dim, in_dim, tuple(notes))

    if isinstance(spec, ReLU):
        return mk(spec.p, spec.p - spec.p**2)
    if isinstance(spec, LeakyReLU):
        return mk(*leaky_moments(spec.p, spec.gamma))
    if isinstance(spec, Tanh):
        return mk(1.0, 0.0, TANH_NOTE)
    if isinstance(spec, SPReLU):
        from .gains import sprelu_scale

        scale2 = sprelu_scale(spec.alpha) ** 2
        phi, varphi = leaky_moments(0.5, min(spec.alpha, 0.5))
        return mk(phi * scale2, varphi * scale2 * scale2)
    if isinstance(spec, SeLU):
        phi, _, _ = selu_moments(spec.lam, spec.alpha, spec.input_var)
        fourth = selu_derivative_fourth_moment(spec.lam, spec.alpha, spec.input_var)
        return mk(phi, fourth - phi * phi, SELU_NOTE)
    if isinstance(spec, DenseGaussian):
        m, n, mu, s2 = spec.m, spec.n, spec.mu, spec.sigma2
        if mu == 0.0:
            return mk(n * s2, m * n * s2 * s2)
        c = n / m
        phi = s2 * n + n * mu * mu
        second = m * m * s2 * s2 * (c + c * c) + 6 * n * n * mu * mu * s2 + m * n * n * mu**4
        notes = ()
        if min(m, n) < ASYMPTOTIC_MIN_DIM:
            notes = (f"non-zero-mean dense moments are asymptotic; m={m}, n={n} below {ASYMPTOTIC_MIN_DIM}",)
        return mk(phi, max(second - phi * phi, 0.0), *notes)
    if isinstance(spec, Conv2D):
        k_eff = effective_kernel_size(spec.geometry)
        return mk(spec.c_in * k_eff * spec.sigma2, None,
                  "conv varphi not available in closed form; estimate it with the Monte-Carlo verifier")
    if isinstance(spec, Orthogonal):
        return mk(spec.beta**2, 0.0)
    if isinstance(spec, DataNorm):
        return mk(1.0 / spec.sigma_B2, 2.0 / (spec.m * spec.sigma_B2**2))
    if isinstance(spec, SMN):
        return mk(1.0 / spec.alpha2**2, 0.0)
    if isinstance(spec, Identity):
        return mk(1.0, 0.0)
    raise SpecError(f"unknown component {spec!r}")


def structure_flags(spec: Component) -> StructureFlags:
    """Algebraic properties of a component's Jacobian.

    ``unitary_invariance_order`` is the order a component grants to any chain
    containing it: zero-mean Gaussian dense layers give every order, an
    orthogonal transform gives the second, element-wise parts give none.
    """
    if isinstance(spec, (ReLU, LeakyReLU, SPReLU)):
        return StructureFlags(True, False, Invariance.NONE, False, general_linear=True)
    if isinstance(spec, (Tanh, SeLU)):
        return StructureFlags(True, False, Invariance.NONE, False, general_linear=False)
    if isinstance(spec, DenseGaussian):
        if spec.mu == 0.0:
            return StructureFlags(True, True, Invariance.INFINITE, True, general_linear=True)
        # E[K^T K] has off-diagonal m * mu^2
        return StructureFlags(False, False, Invariance.NONE, False, general_linear=True)
    if isinstance(spec, Conv2D):
        return StructureFlags(True, True, Invariance.NONE, False, general_linear=True)
    if isinstance(spec, Orthogonal):
        return StructureFlags(True, True, Invariance.SECOND, True, general_linear=True)
    if isinstance(spec, (DataNorm, SMN)):
        return StructureFlags(True, False, Invariance.NONE, False, general_linear=True)
    if isinstance(spec, Identity):
        # U I = U is Haar, hence R-diagonal; inserting it changes no moment
        return StructureFlags(True, False, Invariance.INFINITE, True, general_linear=True)
    raise SpecError(f"unknown component {spec!r}")
