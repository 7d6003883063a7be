"""JSON case files and the assembled analysis pipeline."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .converters import GFL, GFM, ConverterParams, UnifiedParams, unify_all
from .errors import InputError
from .network import (
    OMEGA0_DEFAULT,
    Injection,
    Line,
    NetworkCase,
    OperatingPoint,
    ReducedNetwork,
    reduce_case,
    solve_operating_point,
)
from .smallsignal import (
    CouplingMatrices,
    ModeSet,
    SmallSignalModel,
    build_coupling,
    build_model,
    modes,
    realize_state_space,
    state_groups,
    state_scale,
)

_num = {"type": "number"}
_id = {"type": ["string", "integer"]}
_vec = {"type": "array", "items": _num}

CASE_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["buses", "lines", "converters"],
    "properties": {
        "name": {"type": "string"},
        "buses": {"type": "array", "items": _id, "minItems": 1},
        "lines": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "to", "x"],
                "properties": {"from": _id, "to": _id, "x": _num, "r": _num},
                "additionalProperties": False,
            },
        },
        "tau": {"type": "number", "minimum": 0},
        "omega0": {"type": "number", "exclusiveMinimum": 0},
        "infinite_bus": {"oneOf": [_id, {"type": "null"}]},
        "infinite_voltage": {
            "type": "object",
            "properties": {"V": _num, "theta": _num},
            "additionalProperties": False,
        },
        "tau_tolerance": {"type": "number", "exclusiveMinimum": 0},
        "converters": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["node", "kind"],
                "properties": {
                    "node": _id,
                    "kind": {"enum": ["GFL", "GFM", "gfl", "gfm"]},
                    "kP": _num,
                    "kI": _num,
                    "J": _num,
                    "D": _num,
                    "i_d": _num,
                    "i_q": _num,
                    "P": _num,
                    "Q": _num,
                    "v_d": _num,
                },
                "additionalProperties": False,
            },
        },
        "operating_point": {
            "type": "object",
            "required": ["V", "theta", "i_d", "i_q"],
            "properties": {k: _vec for k in ("V", "theta", "i_d", "i_q", "v_d", "v_q")},
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


@dataclass
class Case:
    network: NetworkCase
    converters: list[ConverterParams]
    injections: list[Injection]
    operating_point: OperatingPoint | None = None
    name: str = "case"

    @property
    def n(self) -> int:
        return self.network.n_gfl

    @property
    def m(self) -> int:
        return self.network.n_gfm


@dataclass
class System:
    """Everything derived from a case, built once and treated as read-only."""

    case: Case
    rn: ReducedNetwork
    op: OperatingPoint
    unified: list[UnifiedParams]
    coupling: CouplingMatrices
    model: SmallSignalModel
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def params(self) -> list[ConverterParams]:
        return self.case.converters

    def A(self, part: str = "full") -> np.ndarray:
        key = ("A", part)
        if key not in self._cache:
            self._cache[key] = realize_state_space(self.model, part)
        return self._cache[key]

    def modes(self, part: str = "full") -> ModeSet:
        key = ("modes", part)
        if key not in self._cache:
            self._cache[key] = modes(self.A(part), state_groups(self.model, part), state_scale(self.model, part))
        return self._cache[key]


def _format_error(err: jsonschema.ValidationError) -> str:
    path = "/".join(str(p) for p in err.absolute_path) or "<root>"
    return f"{path}: {err.message}"


def case_from_dict(data: dict, name: str | None = None) -> Case:
    errors = sorted(jsonschema.Draft7Validator(CASE_SCHEMA).iter_errors(data), key=str)
    if errors:
        raise InputError("invalid case file:\n  " + "\n  ".join(_format_error(e) for e in errors))
    convs = data["converters"]
    # GFL block first, file order kept within each block
    order = sorted(range(len(convs)), key=lambda k: 0 if convs[k]["kind"].upper() == GFL else 1)
    params, injections = [], []
    for k in order:
        c = convs[k]
        kind = c["kind"].upper()
        params.append(
            ConverterParams(kind, c["node"], kP=c.get("kP"), kI=c.get("kI"), J=c.get("J"), D=c.get("D"))
        )
        if kind == GFL:
            injections.append(
                Injection(GFL, i_d=c.get("i_d"), i_q=c.get("i_q"), P=c.get("P"), Q=c.get("Q"))
            )
        else:
            injections.append(Injection(GFM, P=c.get("P", 0.0), v_d=c.get("v_d", 1.0)))
    tau = float(data.get("tau", 0.0))
    lines = [
        Line(l["from"], l["to"], float(l["x"]), float(l.get("r", tau * l["x"]))) for l in data["lines"]
    ]
    iv = data.get("infinite_voltage", {})
    net = NetworkCase(
        buses=list(data["buses"]),
        lines=lines,
        converter_nodes=[p.node for p in params],
        n_gfl=sum(p.is_gfl for p in params),
        tau=tau,
        omega0=float(data.get("omega0", OMEGA0_DEFAULT)),
        infinite_bus=data.get("infinite_bus"),
        infinite_voltage=iv.get("V", 1.0) * complex(math.cos(iv.get("theta", 0.0)), math.sin(iv.get("theta", 0.0))),
        tau_tolerance=float(data.get("tau_tolerance", 0.10)),
    )
    net.check()
    op = None
    if "operating_point" in data:
        o = data["operating_point"]
        N = len(convs)
        for key, vals in o.items():
            if len(vals) != N:
                raise InputError(f"operating_point/{key}: expected {N} values, got {len(vals)}")
        pick = lambda key, default: np.asarray(o.get(key, default), float)[order]
        op = OperatingPoint(
            V=pick("V", None),
            theta=pick("theta", None),
            i_d=pick("i_d", None),
            i_q=pick("i_q", None),
            v_d=pick("v_d", o["V"]),
            v_q=pick("v_q", [0.0] * N),
        )
    return Case(net, params, injections, op, name or data.get("name", "case"))


def case_to_dict(case: Case) -> dict:
    net = case.network
    d: dict[str, Any] = {
        "name": case.name,
        "buses": list(net.buses),
        "lines": [{"from": l.frm, "to": l.to, "x": l.x, "r": l.r} for l in net.lines],
        "tau": net.tau,
        "omega0": net.omega0,
        "infinite_bus": net.infinite_bus,
    }
    v = complex(net.infinite_voltage)
    if v != 1:
        d["infinite_voltage"] = {"V": abs(v), "theta": math.atan2(v.imag, v.real)}
    if net.tau_tolerance != 0.10:
        d["tau_tolerance"] = net.tau_tolerance
    convs = []
    for p, inj in zip(case.converters, case.injections):
        c: dict[str, Any] = {"node": p.node, "kind": p.kind}
        if p.is_gfl:
            c.update(kP=p.kP, kI=p.kI)
            for key in ("i_d", "i_q", "P", "Q"):
                if getattr(inj, key) is not None:
                    c[key] = getattr(inj, key)
        else:
            c.update(J=p.J, D=p.D, v_d=inj.v_d, P=inj.P or 0.0)
        convs.append(c)
    d["converters"] = convs
    if case.operating_point is not None:
        d["operating_point"] = case.operating_point.to_dict()
    return d


def load_case(source: str | Path | dict) -> Case:
    """Load a case from a dict, a JSON path, or the name of a bundled case."""
    if isinstance(source, dict):
        return case_from_dict(source)
    path = Path(source)
    if not path.exists():
        bundled = resources.files("gfmgfl") / "cases" / f"{source}.json"
        if bundled.is_file():
            return case_from_dict(json.loads(bundled.read_text()), name=str(source))
        raise InputError(f"case file not found: {source}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return case_from_dict(data, name=data.get("name", path.stem) if isinstance(data, dict) else None)


def bundled_cases() -> list[str]:
    root = resources.files("gfmgfl") / "cases"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def build_system(case: Case, *, approximate: bool = False) -> System:
    rn = reduce_case(case.network)
    op = case.operating_point
    if op is None:
        op = solve_operating_point(rn, case.injections)
    unified = unify_all(case.converters, op.v_d, case.network.omega0)
    cm = build_coupling(rn, op)
    model = build_model(cm, unified, approximate=approximate)
    return System(case, rn, op, unified, cm, model)


# ---------------------------------------------------------------------------
# parameter paths used by sweeps

PARAM_PATHS = ("gfm.D", "gfm.J", "gfl.kP", "gfl.kI", "gfl.phi", "tau")


def set_parameter(case: Case, path: str, value: float) -> Case:
    """Copy of ``case`` with one scalar applied to every addressed converter."""
    if path not in PARAM_PATHS:
        raise InputError(f"unknown parameter path {path!r}; choose from {', '.join(PARAM_PATHS)}")
    new = copy.deepcopy(case)
    if path == "tau":
        new.network.tau = float(value)
        new.network.lines = [Line(l.frm, l.to, l.x, value * l.x) for l in new.network.lines]
        return new
    group, attr = path.split(".")
    if attr == "phi":
        injs = []
        for inj in new.injections:
            if inj.kind == GFL:
                if inj.i_d is None and inj.i_q is None:
                    raise InputError("gfl.phi sweeps need current set-points (i_d, i_q)")
                mag = math.hypot(inj.i_d or 0.0, inj.i_q or 0.0)
                inj = Injection(GFL, i_d=mag * math.cos(value), i_q=mag * math.sin(value))
            injs.append(inj)
        new.injections = injs
        op = new.operating_point
        if op is not None:
            n = new.n
            mag = op.I[:n]
            op.i_d[:n] = mag * np.cos(value)
            op.i_q[:n] = mag * np.sin(value)
        return new
    kind = GFL if group == "gfl" else GFM
    new.converters = [p.replace(**{attr: float(value)}) if p.kind == kind else p for p in new.converters]
    return new
