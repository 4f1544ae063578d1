"""Operation counts of batch normalisation versus second moment normalisation.

R[x] is a reduction and E[x] an element-wise operation over x elements; m is
the number of pre-activations, q the number of kernel entries. With m much
larger than q only the m-sized operations matter.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import SpecError


@dataclass(frozen=True)
class OpCount:
    reductions_m: int
    reductions_q: int
    elementwise_m: int
    elementwise_q: int
    # (R[m], E[m]) split into forward and backward passes
    forward_m: tuple[int, int] = (0, 0)
    backward_m: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if min(self.reductions_m, self.reductions_q, self.elementwise_m, self.elementwise_q) < 0:
            raise ValueError("operation counts must be non-negative")

    @property
    def total_m(self) -> int:
        return self.reductions_m + self.elementwise_m

    @property
    def total_q(self) -> int:
        return self.reductions_q + self.elementwise_q

    def to_dict(self) -> dict:
        return {
            "R[m]": self.reductions_m,
            "R[q]": self.reductions_q,
            "E[m]": self.elementwise_m,
            "E[q]": self.elementwise_q,
            "forward": {"R[m]": self.forward_m[0], "E[m]": self.forward_m[1]},
            "backward": {"R[m]": self.backward_m[0], "E[m]": self.backward_m[1]},
            "total_m": self.total_m,
        }


_COUNTS = {
    "BN": OpCount(reductions_m=4, reductions_q=0, elementwise_m=9, elementwise_q=0,
                  forward_m=(2, 4), backward_m=(2, 5)),
    "SMN": OpCount(reductions_m=3, reductions_q=2, elementwise_m=7, elementwise_q=2,
                   forward_m=(1, 3), backward_m=(2, 4)),
}


def normalization_op_count(method: str) -> OpCount:
    key = method.upper()
    if key not in _COUNTS:
        raise SpecError(f"unknown normalisation {method!r}; choose BN or SMN", "method")
    return _COUNTS[key]


@dataclass(frozen=True)
class CostComparison:
    bn: OpCount
    smn: OpCount

    @property
    def speedup(self) -> float:
        """Relative saving measured against the cheaper method: (13 - 10) / 10."""
        return (self.bn.total_m - self.smn.total_m) / self.smn.total_m

    @property
    def reduction(self) -> float:
        """The same saving measured against batch normalisation: (13 - 10) / 13."""
        return (self.bn.total_m - self.smn.total_m) / self.bn.total_m

    def to_dict(self) -> dict:
        return {
            "BN": self.bn.to_dict(),
            "SMN": self.smn.to_dict(),
            "speedup": self.speedup,
            "reduction_vs_bn": self.reduction,
            "note": "R[q] and E[q] are excluded from the totals because q << m",
        }


def compare_costs() -> CostComparison:
    return CostComparison(normalization_op_count("BN"), normalization_op_count("SMN"))
