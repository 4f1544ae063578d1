"""Serial/parallel network graphs and moment composition across them.

A network is a serial chain of blocks; each block is either a serial chain of
components or a parallel sum of serial branches. Products compose by

    phi    = prod(phi_i)
    varphi = phi**2 * sum((m_L / m_i) * varphi_i / phi_i**2)

and sums of branches by

    phi    = sum(phi_i)
    varphi = phi**2 + sum(varphi_i - phi_i**2)

Each composition step checks the structural prerequisites that make these
formulas valid and records why in a trace.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

from .errors import DimensionError, PrerequisiteViolation, SpecError
from .moments import (
    Component,
    Identity,
    Invariance,
    Moments,
    StructureFlags,
    Tanh,
    component_moments,
    structure_flags,
)


class Verdict(enum.IntEnum):
    """How well the prerequisites behind a composed value are established. Larger is worse."""

    PROVEN = 0
    ASSUMED = 1
    VIOLATED = 2

    def __str__(self):
        return self.name.lower()


@dataclass(frozen=True)
class Composite:
    moments: Moments
    flags: StructureFlags
    verdict: Verdict = Verdict.PROVEN
    trace: tuple[str, ...] = ()


PartLike = Union[Composite, tuple]


def _as_composite(part: PartLike) -> Composite:
    if isinstance(part, Composite):
        return part
    moments, flags = part
    return Composite(moments, flags)


def _is_plain_rotation(c: Composite) -> bool:
    # J J^T = I exactly and not Haar-random: contributes nothing to either moment
    # and must not lend unitary invariance to its neighbours
    m = c.moments
    return (m.phi == 1.0 and m.varphi == 0.0 and m.out_dim == m.in_dim
            and not c.flags.central)


# ---------------------------------------------------------------------------
# composition rules
# ---------------------------------------------------------------------------


def compose_serial(parts: Sequence[PartLike], force_varphi: bool = False) -> Composite:
    """Compose a chain of parts listed in application order (first applied first).

    ``varphi`` is reported when the chain is at least second-moment unitarily
    invariant, or when at most one part is non-trivial (nothing to compose).
    Otherwise it is ``None``, unless ``force_varphi`` asks for the formula
    value anyway, in which case the verdict drops to ``ASSUMED``.
    """
    items = [_as_composite(p) for p in parts]
    if not items:
        raise SpecError("serial chain must contain at least one part")
    for k in range(1, len(items)):
        prev, cur = items[k - 1].moments, items[k].moments
        if cur.in_dim != prev.out_dim:
            raise DimensionError(
                f"part {k} expects input dim {cur.in_dim} but part {k - 1} outputs {prev.out_dim}"
            )

    verdict = max(c.verdict for c in items)
    trace = [t for c in items for t in c.trace]
    notes = tuple(dict.fromkeys(n for c in items for n in c.moments.notes))
    out_dim, in_dim = items[-1].moments.out_dim, items[0].moments.in_dim

    kept = [c for c in items if not _is_plain_rotation(c)]
    if len(kept) < len(items):
        trace.append(f"serial: {len(items) - len(kept)} identity-like part(s) dropped (J J^T = I)")
    if not kept:
        flags = items[0].flags
        return Composite(Moments(1.0, 0.0, out_dim, in_dim, notes), flags, verdict, tuple(trace))

    flags = StructureFlags(
        expectant_orthogonal=all(c.flags.expectant_orthogonal for c in kept),
        central=any(c.flags.central for c in kept),
        unitary_invariance_order=max(c.flags.unitary_invariance_order for c in kept),
        r_diagonal=any(c.flags.r_diagonal for c in kept),
        general_linear=all(c.flags.general_linear for c in kept),
    )

    if any(c.moments.phi == 0.0 for c in kept):
        trace.append("serial: a part has phi = 0, the product Jacobian vanishes")
        return Composite(Moments(0.0, 0.0, out_dim, in_dim, notes), flags, verdict, tuple(trace))

    phi = math.prod(c.moments.phi for c in kept)

    if len(kept) == 1:
        trace.append("serial: single non-trivial part, moments carried over exactly")
        return Composite(Moments(phi, kept[0].moments.varphi, out_dim, in_dim, notes),
                         flags, verdict, tuple(trace))

    # first-moment invariance: every part after the first applied is expectant orthogonal
    late_eo = all(c.flags.expectant_orthogonal for c in kept[1:])
    if late_eo:
        trace.append("serial phi: independent parts, all but the first expectant orthogonal -> 1st-order invariant")
    else:
        verdict = max(verdict, Verdict.ASSUMED)
        trace.append("serial phi: a non-leading part is not expectant orthogonal; product rule assumed")

    varphi: Optional[float]
    if any(c.moments.varphi is None for c in kept):
        varphi = None
        trace.append("serial varphi: unknown (a part has no closed-form varphi)")
    else:
        m_last = kept[-1].moments.out_dim
        varphi = phi * phi * sum(
            (m_last / c.moments.out_dim) * c.moments.varphi / c.moments.phi**2 for c in kept
        )
        order = flags.unitary_invariance_order
        if order >= Invariance.SECOND:
            trace.append(f"serial varphi: chain is {order}-order unitarily invariant")
        elif force_varphi:
            verdict = max(verdict, Verdict.ASSUMED)
            trace.append("serial varphi: 2nd-order invariance not established; value computed on request")
        else:
            varphi = None
            trace.append("serial varphi: unknown (2nd-order invariance not established)")

    if varphi is not None and varphi < 0:
        varphi = 0.0
    return Composite(Moments(phi, varphi, out_dim, in_dim, notes), flags, verdict, tuple(trace))


def compose_parallel(branches: Sequence[PartLike], force_varphi: bool = False) -> Composite:
    """Compose branches whose outputs are summed.

    Raises PrerequisiteViolation when more than one branch is non-central,
    because the cross terms of the sum then do not vanish in expectation.
    """
    items = [_as_composite(b) for b in branches]
    if len(items) < 2:
        raise SpecError("parallel block needs at least two branches")
    shape = (items[0].moments.out_dim, items[0].moments.in_dim)
    for k, c in enumerate(items[1:], 1):
        if (c.moments.out_dim, c.moments.in_dim) != shape:
            raise DimensionError(
                f"branch {k} has shape {c.moments.out_dim}x{c.moments.in_dim}, branch 0 has {shape[0]}x{shape[1]}"
            )

    non_central = [k for k, c in enumerate(items) if not c.flags.central]
    if len(non_central) > 1:
        raise PrerequisiteViolation(
            f"branches {non_central} are all non-central; the sum rule needs at most one"
        )

    verdict = max(c.verdict for c in items)
    trace = [t for c in items for t in c.trace]
    trace.append("parallel phi: at most one non-central branch, cross terms vanish")
    notes = tuple(dict.fromkeys(n for c in items for n in c.moments.notes))

    flags = StructureFlags(
        expectant_orthogonal=all(c.flags.expectant_orthogonal for c in items),
        central=all(c.flags.central for c in items),
        unitary_invariance_order=min(c.flags.unitary_invariance_order for c in items),
        r_diagonal=all(c.flags.r_diagonal for c in items),
        general_linear=all(c.flags.general_linear for c in items),
    )

    phi = math.fsum(c.moments.phi for c in items)
    varphi: Optional[float]
    if any(c.moments.varphi is None for c in items):
        varphi = None
        trace.append("parallel varphi: unknown (a branch has no closed-form varphi)")
    else:
        varphi = phi * phi + sum(c.moments.varphi - c.moments.phi**2 for c in items)
        ok = flags.r_diagonal and flags.unitary_invariance_order >= Invariance.SECOND
        if ok:
            trace.append("parallel varphi: R-diagonal branches, 2nd-order invariant sum")
        elif force_varphi:
            verdict = max(verdict, Verdict.ASSUMED)
            trace.append("parallel varphi: R-diagonality or 2nd-order invariance missing; value computed on request")
        else:
            varphi = None
            trace.append("parallel varphi: unknown (R-diagonality or 2nd-order invariance missing)")
        if varphi is not None and varphi < 0:
            varphi = 0.0

    return Composite(Moments(phi, varphi, shape[0], shape[1], notes), flags, verdict, tuple(trace))


# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Serial:
    parts: tuple[Component, ...]

    def __init__(self, parts: Iterable[Component]):
        object.__setattr__(self, "parts", tuple(parts))
        if not self.parts:
            raise SpecError("serial chain must contain at least one component")


@dataclass(frozen=True)
class Parallel:
    branches: tuple[Serial, ...]

    def __init__(self, branches: Iterable[Union[Serial, Iterable[Component]]]):
        bs = tuple(b if isinstance(b, Serial) else Serial(b) for b in branches)
        object.__setattr__(self, "branches", bs)
        if len(self.branches) < 2:
            raise SpecError("parallel block needs at least two branches")


Block = Union[Serial, Parallel]


def normalize_block(block: Block) -> Block:
    """A serial chain holding only a parallel block is that parallel block."""
    if isinstance(block, Serial) and len(block.parts) == 1 and isinstance(block.parts[0], Parallel):
        return block.parts[0]
    return block


def _chain_dims(parts: Sequence[Component], dim: int, where: str) -> int:
    cur = dim
    for k, part in enumerate(parts):
        out, inp = part.dims(cur)
        if inp != cur:
            raise DimensionError(f"component {part.kind} expects input dim {inp}, receives {cur}", f"{where}[{k}]")
        cur = out
    return cur


def block_out_dim(block: Block, dim: int, where: str = "block") -> int:
    block = normalize_block(block)
    if isinstance(block, Serial):
        return _chain_dims(block.parts, dim, f"{where}.serial")
    outs = {_chain_dims(b.parts, dim, f"{where}.parallel[{k}]") for k, b in enumerate(block.branches)}
    if len(outs) != 1:
        raise DimensionError(f"parallel branches disagree on output dim: {sorted(outs)}", where)
    return outs.pop()


@dataclass(frozen=True)
class NetworkGraph:
    """Blocks applied in order; ``dims[i]`` is the width entering block i, ``dims[-1]`` the output."""

    blocks: tuple[Block, ...]
    dims: tuple[int, ...]

    def __init__(self, blocks: Iterable[Block], dims: Optional[Sequence[int]] = None, in_dim: Optional[int] = None):
        blocks = tuple(normalize_block(b) for b in blocks)
        if not blocks:
            raise SpecError("network needs at least one block", "blocks")
        if dims is None:
            if in_dim is None:
                in_dim = _infer_in_dim(blocks)
            dims = [in_dim]
            for i, b in enumerate(blocks):
                dims.append(block_out_dim(b, dims[-1], f"blocks[{i}]"))
        dims = tuple(int(d) for d in dims)
        if len(dims) != len(blocks) + 1:
            raise DimensionError(f"need {len(blocks) + 1} boundary dims for {len(blocks)} blocks, got {len(dims)}", "dims")
        if any(d < 1 for d in dims):
            raise DimensionError(f"dims must be positive, got {list(dims)}", "dims")
        for i, b in enumerate(blocks):
            out = block_out_dim(b, dims[i], f"blocks[{i}]")
            if out != dims[i + 1]:
                raise DimensionError(f"block outputs dim {out}, dims[{i + 1}] is {dims[i + 1]}", f"blocks[{i}]")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "dims", dims)


def _infer_in_dim(blocks) -> int:
    first = blocks[0]
    chains = [first.parts] if isinstance(first, Serial) else [b.parts for b in first.branches]
    for parts in chains:
        for part in parts:
            if not part.elementwise and not (isinstance(part, Identity) and part.m is None):
                return part.dims()[1]
            # element-wise parts keep the width, so keep looking downstream
    raise SpecError("cannot infer the input width from element-wise parts; pass dims or in_dim")


def component_part(comp: Component, dim: int) -> Composite:
    return Composite(component_moments(comp, dim), structure_flags(comp))


def _chain_composite(parts: Sequence[Component], dim: int, force_varphi: bool) -> Composite:
    items = []
    cur = dim
    for comp in parts:
        c = component_part(comp, cur)
        if isinstance(comp, Tanh):
            c = Composite(c.moments, c.flags, c.verdict, ("tanh: linearised Jacobian used",))
        items.append(c)
        cur = c.moments.out_dim
    return compose_serial(items, force_varphi)


def block_composite(block: Block, dim: int, force_varphi: bool = False) -> Composite:
    block = normalize_block(block)
    if isinstance(block, Serial):
        return _chain_composite(block.parts, dim, force_varphi)
    return compose_parallel([_chain_composite(b.parts, dim, force_varphi) for b in block.branches], force_varphi)


@dataclass
class BlockReport:
    index: int
    moments: Optional[Moments]
    verdict: Verdict
    isometric: Optional[bool]
    trace: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "moments": None if self.moments is None else self.moments.to_dict(),
            "verdict": str(self.verdict),
            "block_dynamical_isometry": self.isometric,
            "trace": list(self.trace),
        }


@dataclass
class CompositionResult:
    moments: Optional[Moments]
    prerequisite_verdict: Verdict
    trace: tuple[str, ...]
    per_block: list[BlockReport] = field(default_factory=list)
    flags: Optional[StructureFlags] = None

    @property
    def all_isometric(self) -> bool:
        return all(b.isometric for b in self.per_block)

    def to_dict(self) -> dict:
        return {
            "moments": None if self.moments is None else self.moments.to_dict(),
            "prerequisite_verdict": str(self.prerequisite_verdict),
            "trace": list(self.trace),
            "per_block": [b.to_dict() for b in self.per_block],
            "flags": None if self.flags is None else self.flags.to_dict(),
        }


def is_block_isometric(m: Moments, tol_phi: float = 0.05, tol_varphi: float = 0.5) -> bool:
    """phi within tol_phi of 1 and varphi at most tol_varphi; an unknown varphi is not held against the block."""
    if abs(m.phi - 1.0) > tol_phi:
        return False
    return m.varphi is None or m.varphi <= tol_varphi


def analyze_graph(g: NetworkGraph, tol_phi: float = 0.05, tol_varphi: float = 0.5,
                  force_varphi: bool = False) -> CompositionResult:
    reports = []
    composites = []
    violated = False
    for i, block in enumerate(g.blocks):
        try:
            c = block_composite(block, g.dims[i], force_varphi)
        except PrerequisiteViolation as exc:
            violated = True
            reports.append(BlockReport(i, None, Verdict.VIOLATED, False, (f"block {i}: {exc}",)))
            continue
        composites.append(c)
        iso = is_block_isometric(c.moments, tol_phi, tol_varphi)
        trace = c.trace
        if c.moments.varphi is None:
            trace = trace + ("isometry judged on phi only (varphi unknown)",)
        reports.append(BlockReport(i, c.moments, c.verdict, iso, trace))

    if violated:
        bad = [r.index for r in reports if r.verdict == Verdict.VIOLATED]
        return CompositionResult(None, Verdict.VIOLATED,
                                 (f"addition prerequisite violated in block(s) {bad}; network moments refused",),
                                 reports)
    whole = compose_serial(composites, force_varphi)
    return CompositionResult(whole.moments, whole.verdict, whole.trace, reports, whole.flags)


def densenet_block(c_prev: int, delta: int, h_moments: Moments) -> Moments:
    """Moments of a concatenating block [x; H(x)] with c_prev input and delta new channels.

    Only phi is available; varphi is reported unknown.
    """
    if c_prev < 1 or delta < 1:
        raise SpecError(f"need c_prev >= 1 and delta >= 1, got {c_prev}, {delta}")
    c = c_prev + delta
    phi = c_prev / c + delta / c * h_moments.phi
    return Moments(phi, None, c, c_prev, h_moments.notes)


def grad_norm_profile_from_phis(block_phis: Sequence[float], thetas: Sequence[float]) -> list[float]:
    if len(block_phis) != len(thetas):
        raise SpecError(f"need one theta per block: {len(thetas)} thetas for {len(block_phis)} blocks")
    out = [0.0] * len(thetas)
    tail = 1.0
    for i in range(len(thetas) - 1, -1, -1):
        out[i] = thetas[i] * tail
        tail *= block_phis[i]
    return out


def grad_norm_profile(g: NetworkGraph, theta_moments: Sequence[Union[Moments, float]]) -> list[float]:
    """Relative expected squared update per block: theta_i times the phis of all later blocks."""
    res = analyze_graph(g)
    if res.moments is None:
        raise PrerequisiteViolation("network moments unavailable; cannot build the gradient profile")
    thetas = [t.phi if isinstance(t, Moments) else float(t) for t in theta_moments]
    return grad_norm_profile_from_phis([b.moments.phi for b in res.per_block], thetas)
