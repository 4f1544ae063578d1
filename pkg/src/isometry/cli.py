"""Command-line front end.

Exit codes: 0 success, 1 the analysis found a violation, 2 bad input,
3 convergence or internal failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from . import __version__
from .errors import BudgetError, ConvergenceError, IsometryError, PrerequisiteViolation, SpecError
from .flow import propagate_alpha2, resnet_alpha2_profile
from .gains import ACTIVATIONS, FAMILIES, closed_form_gain, depth_aware_eps, selu_solve
from .graph import Parallel, Serial, analyze_graph, grad_norm_profile_from_phis
from .kernel import ConvGeometry, brute_force_kernel_oracle, effective_kernel_size
from .mc import PHI_BAND, VARPHI_BAND, TrialConfig, sweep, verify_addition, verify_multiplication
from .smn_cost import compare_costs
from .specfile import parse_network_spec

SCHEMA_VERSION = 1

EXIT_OK, EXIT_VIOLATION, EXIT_INPUT, EXIT_FAILURE = 0, 1, 2, 3

SWEEP_PHI_FRACTION = 0.95
SWEEP_VARPHI_FRACTION = 0.90


def _fmt(x) -> str:
    if x is None:
        return "unknown"
    return f"{x:.6g}"


def _emit(args, payload: dict, lines: list[str]):
    if args.json:
        payload = {"schema_version": SCHEMA_VERSION, "command": args.command, **payload}
        print(json.dumps(payload, indent=2, allow_nan=False))
    else:
        print("\n".join(lines))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_analyze(args) -> int:
    spec = parse_network_spec(args.spec)
    tol_phi = args.tol_phi if args.tol_phi is not None else spec.analysis.tol_phi
    tol_varphi = args.tol_varphi if args.tol_varphi is not None else spec.analysis.tol_varphi
    res = analyze_graph(spec.graph, tol_phi, tol_varphi, force_varphi=args.force_varphi)

    lines = [f"{'block':>5}  {'phi':>12}  {'varphi':>12}  {'verdict':>9}  isometry"]
    for b in res.per_block:
        m = b.moments
        lines.append(f"{b.index:>5}  {_fmt(m.phi if m else None):>12}  {_fmt(m.varphi if m else None):>12}"
                     f"  {str(b.verdict):>9}  {'pass' if b.isometric else 'FAIL'}")
    payload = res.to_dict()
    if res.moments is not None:
        lines.append(f"network: phi={_fmt(res.moments.phi)} varphi={_fmt(res.moments.varphi)} "
                     f"verdict={res.prerequisite_verdict}")
        profile = grad_norm_profile_from_phis([b.moments.phi for b in res.per_block], [1.0] * len(res.per_block))
        payload["grad_norm_profile"] = profile
        spread = max(profile) / min(profile) if min(profile) > 0 else float("inf")
        lines.append("gradient-norm profile: " + " ".join(_fmt(p) for p in profile)
                     + f"  (max/min {_fmt(spread)})")
    else:
        lines.append(f"network: moments refused, verdict={res.prerequisite_verdict}")
    notes = sorted({n for b in res.per_block if b.moments for n in b.moments.notes})
    lines += [f"note: {n}" for n in notes]

    if args.forward:
        states = propagate_alpha2(spec.graph, spec.analysis.alpha2_in)
        payload["forward"] = [s.__dict__ for s in states]
        lines.append("forward second moments:")
        lines += [f"  {s.layer_index:>3} {s.kind:<14} phi={_fmt(s.phi)} alpha2={_fmt(s.alpha2)}" for s in states]

    if args.verbose:
        for b in res.per_block:
            lines += [f"  block {b.index}: {t}" for t in b.trace]
    _emit(args, payload, lines)
    return EXIT_OK if res.all_isometric else EXIT_VIOLATION


def _spec_config(args, graph) -> tuple[str, TrialConfig]:
    blocks = graph.blocks
    common = dict(seed=args.seed, trials=args.trials, input_mean=args.input_mean, input_std=args.input_std,
                  max_dim=args.max_dim, dtype=args.dtype)
    if all(isinstance(b, Serial) for b in blocks):
        comps = [c for b in blocks for c in b.parts]
        return "multiplication", TrialConfig(components=comps, dims=[graph.dims[0]], **common)
    if len(blocks) == 1 and isinstance(blocks[0], Parallel):
        return "addition", TrialConfig(branches=[b.parts for b in blocks[0].branches],
                                       dims=[graph.dims[0]], **common)
    raise SpecError("verify handles an all-serial network or a single parallel block", "blocks")


def cmd_verify(args) -> int:
    if args.spec:
        spec = parse_network_spec(args.spec)
        kind, cfg = _spec_config(args, spec.graph)
        report = (verify_multiplication if kind == "multiplication" else verify_addition)(cfg)
        lines = [
            f"{kind}: {cfg.trials} trials, seed {cfg.seed}",
            f"  phi ratio    (per-factor theory) {_fmt(report.phi_ratio)}   (library) {_fmt(report.analytic_phi_ratio)}",
            f"  varphi ratio (per-factor theory) {_fmt(report.varphi_ratio)}   (library) {_fmt(report.analytic_varphi_ratio)}",
            f"  bands phi {list(report.phi_band)} varphi {list(report.varphi_band)}: {'pass' if report.passed else 'FAIL'}",
        ]
        _emit(args, {"report": report.to_dict(), "config": cfg.to_dict()}, lines)
        return EXIT_OK if report.passed else EXIT_VIOLATION

    kinds = ["multiplication", "addition"] if args.kind == "both" else [args.kind]
    payload, lines, ok = {}, [], True
    for kind in kinds:
        res = sweep(kind, args.configs, args.seed, trials=args.trials, dtype=args.dtype)
        good = res.phi_fraction >= SWEEP_PHI_FRACTION and res.varphi_fraction >= SWEEP_VARPHI_FRACTION
        ok = ok and good
        payload[kind] = res.to_dict()
        lines.append(f"{kind}: {args.configs} configs x {args.trials} trials; phi in {list(PHI_BAND)} for "
                     f"{res.phi_fraction:.0%}, varphi in {list(VARPHI_BAND)} for {res.varphi_fraction:.0%}"
                     f" -> {'pass' if good else 'FAIL'}")
    _emit(args, payload, lines)
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_gains(args) -> int:
    rec = closed_form_gain(args.activation, args.family, args.n, args.m, args.gamma)
    lines = [f"{k} = {_fmt(v)}" for k, v in rec.values.items()]
    lines.append(f"achieved phi = {_fmt(rec.achieved_phi)}, varphi = {_fmt(rec.achieved_varphi)}")
    lines += [f"note: {n}" for n in rec.notes]
    _emit(args, rec.to_dict(), lines)
    return EXIT_OK


def cmd_selu_solve(args) -> int:
    payload = {"gamma0": args.gamma0}
    if args.depth is not None:
        eps, bound = depth_aware_eps(args.depth)
        payload.update(depth=args.depth, network_bound=bound)
    else:
        eps = args.eps
    sol = selu_solve(args.gamma0, eps)
    payload.update(eps=eps, **{"lambda": sol.lam, "alpha": sol.alpha, "iterations": sol.iterations,
                               "residuals": list(sol.residuals)})
    lines = [f"lambda = {sol.lam:.10f}", f"alpha  = {sol.alpha:.10f}", f"eps = {_fmt(eps)}"]
    if args.depth is not None:
        lines.append(f"network bound (1+eps)^L = {_fmt(payload['network_bound'])}")
    _emit(args, payload, lines)
    return EXIT_OK


def cmd_effective_kernel(args) -> int:
    geom = ConvGeometry(args.k[0], args.k[1], args.stride[0], args.stride[1], args.pad[0], args.pad[1],
                        args.input[0], args.input[1])
    value = effective_kernel_size(geom)
    payload = {"effective_kernel_size": value, "kernel_size": geom.k_h * geom.k_w,
               "output": [geom.h_out, geom.w_out]}
    lines = [f"effective kernel size = {value:.12g} of {geom.k_h * geom.k_w}"]
    code = EXIT_OK
    if args.oracle:
        oracle = brute_force_kernel_oracle(geom)
        agree = abs(oracle - value) <= 1e-9
        payload.update(oracle=oracle, agree=agree)
        lines.append(f"brute-force oracle     = {oracle:.12g} ({'agrees' if agree else 'DISAGREES'})")
        code = EXIT_OK if agree else EXIT_VIOLATION
    _emit(args, payload, lines)
    return code


def cmd_resnet_profile(args) -> int:
    alpha2, phis = resnet_alpha2_profile(args.blocks, args.downsample_at)
    payload = {"alpha2": [float(a) for a in alpha2], "phi": [float(p) for p in phis],
               "phi_exact": [str(p) for p in phis]}
    lines = ["alpha2: " + " ".join(str(a) for a in alpha2), "phi:    " + " ".join(str(p) for p in phis)]
    _emit(args, payload, lines)
    return EXIT_OK


def cmd_smn_cost(args) -> int:
    cmp = compare_costs()
    lines = [
        f"{'':>4} {'R[m]':>5} {'R[q]':>5} {'E[m]':>5} {'E[q]':>5}",
        *(f"{name:>4} {c.reductions_m:>5} {c.reductions_q:>5} {c.elementwise_m:>5} {c.elementwise_q:>5}"
          for name, c in (("BN", cmp.bn), ("SMN", cmp.smn))),
        f"m-sized operations: {cmp.bn.total_m} -> {cmp.smn.total_m}, speedup {cmp.speedup:.0%}",
        f"(measured against BN the saving is {cmp.reduction:.0%}; q-sized operations ignored)",
    ]
    _emit(args, cmp.to_dict(), lines)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isometry", description="Spectrum-moment analysis of network Jacobians.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--json", action="store_true", help="machine-readable output")
        sp.set_defaults(func=func)
        return sp

    a = add("analyze", cmd_analyze, "compose moments over a network spec")
    a.add_argument("spec")
    a.add_argument("--forward", action="store_true", help="also propagate activation second moments")
    a.add_argument("--tol-phi", type=float)
    a.add_argument("--tol-varphi", type=float)
    a.add_argument("--force-varphi", action="store_true",
                   help="report varphi even when its prerequisites are not established")
    a.add_argument("-v", "--verbose", action="store_true", help="print the justification trace")

    v = add("verify", cmd_verify, "Monte-Carlo check of the composition rules")
    v.add_argument("spec", nargs="?")
    v.add_argument("--trials", type=int, default=20)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--max-dim", type=int)
    v.add_argument("--configs", type=int, default=10, help="random configs per kind when no spec is given")
    v.add_argument("--kind", choices=("multiplication", "addition", "both"), default="both")
    v.add_argument("--input-mean", type=float, default=0.0)
    v.add_argument("--input-std", type=float, default=1.0)
    v.add_argument("--dtype", choices=("float32", "float64"), default="float64")

    g = add("gains", cmd_gains, "closed-form initialisation gains")
    g.add_argument("--activation", choices=ACTIVATIONS, required=True)
    g.add_argument("--family", choices=FAMILIES, required=True)
    g.add_argument("--n", type=int)
    g.add_argument("--m", type=int)
    g.add_argument("--gamma", type=float, default=0.0)

    s = add("selu-solve", cmd_selu_solve, "solve SeLU's lambda and alpha")
    s.add_argument("--gamma0", type=float, default=1.0)
    grp = s.add_mutually_exclusive_group(required=True)
    grp.add_argument("--eps", type=float)
    grp.add_argument("--depth", type=int, help="pick eps = 0.9 / depth")

    k = add("effective-kernel", cmd_effective_kernel, "effective kernel size of a padded convolution")
    k.add_argument("--k", type=int, nargs=2, required=True, metavar=("KH", "KW"))
    k.add_argument("--stride", type=int, nargs=2, default=(1, 1), metavar=("SH", "SW"))
    k.add_argument("--pad", type=int, nargs=2, default=(0, 0), metavar=("PH", "PW"))
    k.add_argument("--in", dest="input", type=int, nargs=2, required=True, metavar=("H", "W"))
    k.add_argument("--oracle", action="store_true", help="cross-check against the expanded matrix")

    r = add("resnet-profile", cmd_resnet_profile, "second moments of a residual network with normalised branches")
    r.add_argument("--blocks", type=int, required=True)
    r.add_argument("--downsample-at", type=int, nargs="*", default=[])

    add("smn-cost", cmd_smn_cost, "operation counts of BN versus SMN")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (SpecError, BudgetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConvergenceError as exc:
        print(f"error: {exc}; residuals {exc.residuals}", file=sys.stderr)
        return EXIT_FAILURE
    except PrerequisiteViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except IsometryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
