"""JSON network descriptions.

    {
      "dims": [512, 512],
      "blocks": [
        {"serial": [{"kind": "DenseGaussian", "params": {"m": 512, "n": 512, "sigma2": 0.0039}},
                    {"kind": "ReLU", "params": {"p": 0.5}}]},
        {"parallel": [[{"kind": "Identity"}], [...]]}
      ],
      "analysis": {"tol_phi": 0.05, "tol_varphi": 0.5, "alpha2_in": 1.0}
    }

Every error names the offending location, e.g. ``blocks[0].serial[1].params.gamma``.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import SpecError
from .graph import NetworkGraph, Parallel, Serial
from .moments import KINDS, Component, LeakyReLU, SeLU

TOP_KEYS = {"dims", "blocks", "analysis"}
ANALYSIS_KEYS = {"tol_phi", "tol_varphi", "alpha2_in"}
# JSON names that differ from the dataclass field
PARAM_ALIASES = {SeLU: {"lambda": "lam"}}


@dataclass
class AnalysisOptions:
    tol_phi: float = 0.05
    tol_varphi: float = 0.5
    alpha2_in: float = 1.0


@dataclass
class NetworkSpec:
    graph: NetworkGraph
    analysis: AnalysisOptions


def _reject_constant(name):
    raise SpecError(f"non-finite number {name} is not allowed")


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SpecError(f"expected a number, got {type(value).__name__}", path)
    if not math.isfinite(value):
        raise SpecError("number must be finite", path)
    return value


def _object(value: Any, path: str, allowed: set[str], required: set[str] = frozenset()) -> dict:
    if not isinstance(value, dict):
        raise SpecError(f"expected an object, got {type(value).__name__}", path)
    for key in value:
        if key not in allowed:
            raise SpecError(f"unknown key {key!r}; allowed: {', '.join(sorted(allowed))}", f"{path}.{key}" if path else key)
    for key in required:
        if key not in value:
            raise SpecError(f"missing key {key!r}", path or "<root>")
    return value


def _list(value: Any, path: str) -> list:
    if not isinstance(value, list):
        raise SpecError(f"expected a list, got {type(value).__name__}", path)
    return value


def _field_types(cls) -> dict[str, str]:
    return {f.name: str(f.type) for f in dataclasses.fields(cls)}


def parse_component(doc: Any, path: str) -> Component:
    doc = _object(doc, path, {"kind", "params"}, {"kind"})
    kind = doc["kind"]
    if kind not in KINDS:
        raise SpecError(f"unknown component kind {kind!r}; known: {', '.join(KINDS)}", f"{path}.kind")
    cls = KINDS[kind]
    aliases = PARAM_ALIASES.get(cls, {})
    types = _field_types(cls)
    to_json = {f: j for j, f in aliases.items()}
    json_names = {to_json.get(f, f) for f in types}
    params = _object(doc.get("params", {}), f"{path}.params", json_names)

    kwargs = {}
    for jname, value in params.items():
        fname = aliases.get(jname, jname)
        ppath = f"{path}.params.{jname}"
        _number(value, ppath)
        if "int" in types[fname] and "float" not in types[fname]:
            if not isinstance(value, int):
                raise SpecError(f"expected an integer, got {value!r}", ppath)
        kwargs[fname] = value

    if cls is LeakyReLU and "gamma" in kwargs and not 0.0 <= kwargs["gamma"] < 1.0:
        raise SpecError(f"gamma must lie in [0, 1) in network specs, got {kwargs['gamma']}", f"{path}.params.gamma")
    try:
        return cls(**kwargs)
    except SpecError as exc:
        # component validation reports paths relative to the component
        sub = exc.path or ""
        if sub and not sub.startswith("params."):
            sub = f"params.{sub}"
        raise SpecError(exc.message, f"{path}.{sub}" if sub else path) from None


def _chain(doc: Any, path: str) -> Serial:
    items = _list(doc, path)
    if not items:
        raise SpecError("chain must contain at least one component", path)
    return Serial([parse_component(c, f"{path}[{k}]") for k, c in enumerate(items)])


def parse_network_doc(doc: Any) -> NetworkSpec:
    doc = _object(doc, "", TOP_KEYS, {"blocks"})
    blocks = []
    for i, b in enumerate(_list(doc["blocks"], "blocks")):
        path = f"blocks[{i}]"
        if not isinstance(b, dict) or len(b) != 1 or next(iter(b)) not in ("serial", "parallel"):
            raise SpecError("block must be an object with exactly one key, 'serial' or 'parallel'", path)
        if "serial" in b:
            blocks.append(_chain(b["serial"], f"{path}.serial"))
        else:
            branches = _list(b["parallel"], f"{path}.parallel")
            if len(branches) < 2:
                raise SpecError("parallel block needs at least two branches", f"{path}.parallel")
            blocks.append(Parallel([_chain(br, f"{path}.parallel[{k}]") for k, br in enumerate(branches)]))

    dims = None
    if "dims" in doc:
        dims = []
        for k, d in enumerate(_list(doc["dims"], "dims")):
            if isinstance(d, bool) or not isinstance(d, int) or d < 1:
                raise SpecError(f"expected a positive integer, got {d!r}", f"dims[{k}]")
            dims.append(d)

    opts = AnalysisOptions()
    if "analysis" in doc:
        a = _object(doc["analysis"], "analysis", ANALYSIS_KEYS)
        for key, value in a.items():
            setattr(opts, key, _number(value, f"analysis.{key}"))
        if opts.alpha2_in <= 0:
            raise SpecError("must be > 0", "analysis.alpha2_in")
    return NetworkSpec(NetworkGraph(blocks, dims), opts)


def parse_network_text(text: str) -> NetworkSpec:
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise SpecError(f"malformed JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})") from None
    return parse_network_doc(doc)


def parse_network_spec(path) -> NetworkSpec:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise SpecError(f"cannot read {path}: {exc}") from None
    return parse_network_text(text)


def component_to_doc(c: Component) -> dict:
    aliases = {v: k for k, v in PARAM_ALIASES.get(type(c), {}).items()}
    params = {aliases.get(k, k): v for k, v in c.params().items() if v is not None}
    return {"kind": c.kind, "params": params}


def graph_to_doc(g: NetworkGraph) -> dict:
    blocks = []
    for b in g.blocks:
        if isinstance(b, Serial):
            blocks.append({"serial": [component_to_doc(c) for c in b.parts]})
        else:
            blocks.append({"parallel": [[component_to_doc(c) for c in br.parts] for br in b.branches]})
    return {"dims": list(g.dims), "blocks": blocks}
