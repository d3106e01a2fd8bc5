"""Radial distribution case: buses, branches, classed loads and DG placements."""

from __future__ import annotations

import json
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from importlib import resources

import jsonschema
import numpy as np

from .dgcost import DGUnit, Technology, TechnologyCatalog, default_catalog
from .errors import CaseFormatError, CaseValidationError, TopologyError

DEFAULT_V_MIN = 0.90
DEFAULT_V_MAX = 1.05

_NUM = {"type": "number"}

CASE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["buses", "branches", "loads", "classes"],
    "properties": {
        "name": {"type": "string"},
        "base_mva": {"type": "number", "exclusiveMinimum": 0},
        "buses": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "kind"],
                "properties": {
                    "id": {"type": "integer"},
                    "kind": {"enum": ["slack", "load"]},
                    "base_kv": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
        "branches": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["from_bus", "to_bus", "resistance", "reactance"],
                "properties": {
                    "from_bus": {"type": "integer"},
                    "to_bus": {"type": "integer"},
                    "resistance": _NUM,
                    "reactance": _NUM,
                },
            },
        },
        "loads": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["bus_id", "p_nominal", "class_id"],
                "properties": {
                    "bus_id": {"type": "integer"},
                    "p_nominal": _NUM,
                    "q_nominal": _NUM,
                    "class_id": {"type": "string"},
                },
            },
        },
        "dg_units": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "bus_id"],
                "properties": {
                    "id": {"type": "string"},
                    "bus_id": {"type": "integer"},
                    "technology": {"type": "string"},
                    "a": _NUM,
                    "b": _NUM,
                    "c_fixed": _NUM,
                    "p_min": _NUM,
                    "p_max": _NUM,
                },
            },
        },
        "classes": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "limits": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"v_min": _NUM, "v_max": _NUM},
        },
    },
}


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str = "load"  # "slack" | "load"
    base_kv: float = 12.66


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    resistance: float  # pu
    reactance: float  # pu


@dataclass(frozen=True)
class LoadPoint:
    bus_id: int
    p_nominal: float  # kW
    q_nominal: float  # kvar
    class_id: str


@dataclass(frozen=True)
class NetworkCase:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    loads: tuple[LoadPoint, ...]
    dg_units: tuple[DGUnit, ...]
    classes: tuple[str, ...]
    base_mva: float = 1.0
    v_min: float = DEFAULT_V_MIN
    v_max: float = DEFAULT_V_MAX
    name: str = ""
    _order: tuple[Branch, ...] = field(default=(), repr=False, compare=False)

    @property
    def slack_bus(self) -> Bus:
        return next(b for b in self.buses if b.kind == "slack")

    @property
    def base_kva(self) -> float:
        return self.base_mva * 1000.0

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def ordered_branches(self) -> tuple[Branch, ...]:
        """Branches oriented parent->child, parent-before-child."""
        return self._order or validate_radial(self)

    def with_technology(self, tech: Technology) -> "NetworkCase":
        return replace(self, dg_units=tuple(u.with_technology(tech) for u in self.dg_units))

    def with_technologies(self, assignment: dict[str, Technology]) -> "NetworkCase":
        units = tuple(u.with_technology(assignment[u.id]) if u.id in assignment else u
                      for u in self.dg_units)
        return replace(self, dg_units=units)

    def without_dg(self) -> "NetworkCase":
        return replace(self, dg_units=())

    def class_members(self, class_id: str) -> list[LoadPoint]:
        if class_id not in self.classes:
            raise KeyError(f"unknown class {class_id!r}")
        return [ld for ld in self.loads if ld.class_id == class_id]


def validate_radial(case: NetworkCase) -> tuple[Branch, ...]:
    """Order branches outward from the slack bus.

    Each returned branch is oriented so that ``from_bus`` is the parent. Raises
    :class:`TopologyError` if the graph has a cycle or unreachable buses.
    """
    ids = {b.id for b in case.buses}
    adj = defaultdict(list)
    for br in case.branches:
        if br.from_bus == br.to_bus:
            raise TopologyError(f"not radial: cycle detected (self-loop at bus {br.from_bus})")
        adj[br.from_bus].append(br)
        adj[br.to_bus].append(br)

    root = case.slack_bus.id
    seen = {root}
    used = set()
    order = []
    queue = deque([root])
    while queue:
        bus = queue.popleft()
        for br in adj[bus]:
            if id(br) in used:
                continue
            used.add(id(br))
            child = br.to_bus if br.from_bus == bus else br.from_bus
            if child in seen:
                raise TopologyError(f"not radial: cycle detected through branch {br.from_bus}-{br.to_bus}")
            seen.add(child)
            order.append(br if br.from_bus == bus else replace(br, from_bus=bus, to_bus=child))
            queue.append(child)

    missing = ids - seen
    if missing:
        inner = sum(1 for br in case.branches if br.from_bus in missing and br.to_bus in missing)
        if inner >= len(missing):
            raise TopologyError(f"not radial: cycle detected among buses cut off from the slack; "
                                f"disconnected buses: {sorted(missing)}")
        raise TopologyError(f"disconnected buses: {sorted(missing)}")
    if len(case.branches) != len(case.buses) - 1:
        raise TopologyError(
            f"not radial: {len(case.branches)} branches for {len(case.buses)} buses"
        )
    return tuple(order)


def class_nominal_load(case: NetworkCase, class_id: str, multiplier: float = 1.0) -> float:
    """Total nominal real load of a class (kW), scaled by ``multiplier``."""
    if multiplier < 0:
        raise ValueError("multiplier must be >= 0")
    return multiplier * sum(ld.p_nominal for ld in case.class_members(class_id))


def bus_loads(case: NetworkCase, class_loads: dict[str, float]) -> tuple[np.ndarray, np.ndarray]:
    """Spread class totals onto buses in proportion to nominal bus loads.

    Returns per-bus (P kW, Q kvar) arrays indexed like ``case.buses``; Q keeps
    each load point's nominal power factor.
    """
    p = np.zeros(case.n_bus)
    q = np.zeros(case.n_bus)
    idx = case.bus_index
    for cls in case.classes:
        total = class_loads.get(cls, 0.0)
        members = case.class_members(cls)
        nominal = sum(ld.p_nominal for ld in members)
        if total < 0:
            raise ValueError(f"class {cls}: negative load {total}")
        if total == 0:
            continue
        if nominal <= 0:
            raise CaseValidationError(f"class {cls} has no nominal load to scale")
        scale = total / nominal
        for ld in members:
            k = idx[ld.bus_id]
            p[k] += ld.p_nominal * scale
            q[k] += ld.q_nominal * scale
    return p, q


def check_case(case: NetworkCase) -> NetworkCase:
    """Check every case invariant; return the case with its branch order cached."""
    slacks = [b for b in case.buses if b.kind == "slack"]
    if len(slacks) != 1:
        raise CaseValidationError(f"exactly one slack bus required, found {len(slacks)}")
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        raise CaseValidationError("bus ids must be unique")
    known = set(ids)
    for br in case.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                raise CaseValidationError(f"branch {br.from_bus}-{br.to_bus} references unknown bus {end}")
        if br.resistance < 0 or br.reactance < 0:
            raise CaseValidationError(f"branch {br.from_bus}-{br.to_bus}: negative impedance")
    if len(set(case.classes)) != len(case.classes):
        raise CaseValidationError("duplicate class ids")
    for ld in case.loads:
        if ld.bus_id not in known:
            raise CaseValidationError(f"load references unknown bus {ld.bus_id}")
        if ld.p_nominal < 0:
            raise CaseValidationError(f"load at bus {ld.bus_id}: p_nominal must be >= 0")
        if ld.class_id not in case.classes:
            raise CaseValidationError(f"load at bus {ld.bus_id}: undeclared class {ld.class_id!r}")
    unit_ids = [u.id for u in case.dg_units]
    if len(set(unit_ids)) != len(unit_ids):
        raise CaseValidationError("DG unit ids must be unique")
    for u in case.dg_units:
        if u.bus_id not in known:
            raise CaseValidationError(f"DG {u.id} references unknown bus {u.bus_id}")
    if not 0 < case.v_min < case.v_max:
        raise CaseValidationError(f"need 0 < v_min < v_max, got {case.v_min}, {case.v_max}")
    if case.base_mva <= 0:
        raise CaseValidationError("base_mva must be > 0")
    order = validate_radial(case)
    return replace(case, _order=order)


def case_from_dict(data: dict, catalog: TechnologyCatalog | None = None) -> NetworkCase:
    try:
        jsonschema.validate(data, CASE_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise CaseFormatError(f"field {where}: {exc.message}") from None

    units = []
    for spec in data.get("dg_units", []):
        explicit = {k: spec[k] for k in ("a", "b", "c_fixed", "p_min", "p_max") if k in spec}
        tag = spec.get("technology")
        if tag is not None and len(explicit) < 5:
            if catalog is None:
                catalog = default_catalog()
            try:
                tech = catalog.get_technology(tag)
            except KeyError as exc:
                raise CaseValidationError(f"DG {spec['id']}: {exc.args[0]}") from None
            base = {"a": tech.a, "b": tech.b, "c_fixed": tech.c_fixed,
                    "p_min": tech.p_min, "p_max": tech.p_max}
            base.update(explicit)
            explicit = base
        elif len(explicit) < 5:
            raise CaseValidationError(f"DG {spec['id']}: needs a technology or all of a, b, c_fixed, p_min, p_max")
        try:
            units.append(DGUnit(id=spec["id"], bus_id=spec["bus_id"], technology=tag or "custom", **explicit))
        except ValueError as exc:
            raise CaseValidationError(str(exc)) from None

    limits = data.get("limits", {})
    case = NetworkCase(
        buses=tuple(Bus(b["id"], b["kind"], b.get("base_kv", 12.66)) for b in data["buses"]),
        branches=tuple(Branch(**br) for br in data["branches"]),
        loads=tuple(LoadPoint(ld["bus_id"], ld["p_nominal"], ld.get("q_nominal", 0.0), ld["class_id"])
                    for ld in data["loads"]),
        dg_units=tuple(units),
        classes=tuple(data["classes"]),
        base_mva=data.get("base_mva", 1.0),
        v_min=limits.get("v_min", DEFAULT_V_MIN),
        v_max=limits.get("v_max", DEFAULT_V_MAX),
        name=data.get("name", ""),
    )
    return check_case(case)


def load_case(path, catalog: TechnologyCatalog | None = None) -> NetworkCase:
    """Read and validate a JSON case file."""
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return case_from_dict(data, catalog)


def shipped_case_path(name: str = "ieee33.case"):
    return resources.files("dgretail") / "data" / name
