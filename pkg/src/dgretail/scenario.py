"""Scenario files (24 hourly inputs plus options) and CSV result files."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema

from .dgcost import TechnologyCatalog, default_catalog
from .dispatch import DispatchOptions
from .equilibrium import DailyResults, EquilibriumConfig, HourInputs
from .errors import ScenarioError
from .network import NetworkCase

HOURS_PER_DAY = 24
BETA_RANGE = (-1.0, 0.0)

_NUM = {"type": "number"}
_NUM_OR_MAP = {"oneOf": [_NUM, {"type": "object", "additionalProperties": _NUM}]}

OPTION_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "price_tol": {"type": "number", "exclusiveMinimum": 0},
        "max_iters": {"type": "integer", "minimum": 1},
        "damping": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "availability": {"enum": ["proportional", "pooled"]},
        "dg_pricing": {"enum": ["schedule", "flat-mc"]},
        "wholesale_at_spot": {"type": "boolean"},
        "price_cap_factor": {"type": "number", "exclusiveMinimum": 1},
        "markup": {"type": "number", "minimum": 0},
        "demand_floor": {"type": "boolean"},
        "voltage_penalty": {"type": "number", "minimum": 0},
        "cost_scale": {"type": "number", "exclusiveMinimum": 0},
    },
}

SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["hours", "beta"],
    "properties": {
        "name": {"type": "string"},
        "beta": _NUM_OR_MAP,
        "technology": {"oneOf": [{"type": "string"}, {"type": "null"},
                                 {"type": "object", "additionalProperties": {"type": "string"}}]},
        "options": OPTION_SCHEMA,
        "hours": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["load_multiplier", "spot_price"],
                "properties": {
                    "hour": {"type": "integer"},
                    "load_multiplier": _NUM_OR_MAP,
                    "spot_price": _NUM,
                },
            },
        },
    },
}

ALL = "*"


def _expand(value, classes, what):
    if not isinstance(value, dict):
        return {c: float(value) for c in classes}
    if ALL in value and len(value) == 1:
        return {c: float(value[ALL]) for c in classes}
    unknown = set(value) - set(classes)
    missing = set(classes) - set(value)
    if unknown or missing:
        raise ScenarioError(f"{what}: classes {sorted(value)} do not match case classes {list(classes)}")
    return {c: float(value[c]) for c in classes}


@dataclass(frozen=True)
class Scenario:
    name: str
    hours: tuple  # HourInputs, multipliers may be keyed by "*" until bound
    beta: dict
    technology: object = None  # None | technology tag | {unit id: tag}
    options: dict = field(default_factory=dict)

    @property
    def config(self) -> EquilibriumConfig:
        opts = dict(self.options)
        dispatch = DispatchOptions(
            wholesale_at_spot=opts.pop("wholesale_at_spot", False),
            voltage_penalty=opts.pop("voltage_penalty", DispatchOptions.voltage_penalty),
        )
        opts.pop("cost_scale", None)
        return EquilibriumConfig(dispatch=dispatch, **opts)

    def with_options(self, **changes) -> "Scenario":
        return replace(self, options={**self.options, **changes})

    def bind(self, classes) -> "Scenario":
        """Expand system-wide multipliers and elasticities onto ``classes``."""
        hours = tuple(HourInputs(h.hour, _expand(h.multipliers, classes, f"hour {h.hour} load_multiplier"),
                                 h.spot_price) for h in self.hours)
        return replace(self, hours=hours, beta=_expand(self.beta, classes, "beta"))

    def catalog(self) -> TechnologyCatalog:
        return default_catalog(self.options.get("cost_scale", 1.0))

    def apply_technology(self, case: NetworkCase, catalog: TechnologyCatalog | None = None) -> NetworkCase:
        """Return ``case`` with the scenario's DG technology assignment applied."""
        if self.technology is None and self.options.get("cost_scale", 1.0) == 1.0:
            return case
        catalog = catalog or self.catalog()
        if self.technology is None:
            assignment = {u.id: catalog.get_technology(u.technology) for u in case.dg_units
                          if u.technology in catalog}
        elif isinstance(self.technology, str):
            assignment = {u.id: catalog.get_technology(self.technology) for u in case.dg_units}
        else:
            unknown = set(self.technology) - {u.id for u in case.dg_units}
            if unknown:
                raise ScenarioError(f"technology assignment names unknown DG units {sorted(unknown)}")
            assignment = {uid: catalog.get_technology(tag) for uid, tag in self.technology.items()}
        return case.with_technologies(assignment)


def scenario_from_dict(data: dict, check_beta: bool = True) -> Scenario:
    try:
        jsonschema.validate(data, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"field {where}: {exc.message}") from None

    rows = data["hours"]
    if len(rows) != HOURS_PER_DAY:
        raise ScenarioError(f"scenario must have exactly {HOURS_PER_DAY} hours, got {len(rows)}")
    hours = []
    for k, row in enumerate(rows):
        mult = row["load_multiplier"]
        values = mult.values() if isinstance(mult, dict) else [mult]
        if any(v < 0 for v in values):
            raise ScenarioError(f"hours/{k}/load_multiplier: must be >= 0")
        if row["spot_price"] <= 0:
            raise ScenarioError(f"hours/{k}/spot_price: must be > 0")
        hours.append(HourInputs(row.get("hour", k), mult if isinstance(mult, dict) else {ALL: mult},
                                float(row["spot_price"])))

    beta = data["beta"]
    beta_values = beta.values() if isinstance(beta, dict) else [beta]
    if check_beta:
        lo, hi = BETA_RANGE
        for b in beta_values:
            if not lo <= b <= hi:
                raise ScenarioError(f"beta: {b} outside [{lo}, {hi}] (elasticity must be non-positive)")
    scenario = Scenario(
        name=data.get("name", ""),
        hours=tuple(hours),
        beta=beta if isinstance(beta, dict) else {ALL: beta},
        technology=data.get("technology"),
        options=dict(data.get("options", {})),
    )
    try:
        scenario.config
    except ValueError as exc:
        raise ScenarioError(f"options: {exc}") from None
    return scenario


def load_scenario(path, check_beta: bool = True) -> Scenario:
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(data, check_beta)


def shipped_scenario_path(name: str = "default.scenario"):
    return resources.files("dgretail") / "data" / name


# --- results -----------------------------------------------------------------

def _f(x) -> str:
    return f"{x:.6f}"


def hourly_header(results: DailyResults) -> list:
    return (["hour", "class", "price", "load", "p_wholesale"]
            + [f"p_dg_{u}" for u in results.unit_ids]
            + ["profit", "losses", "iterations", "converged"])


def export_results(results: DailyResults, path) -> tuple:
    """Write ``hourly.csv`` and ``summary.csv`` into directory ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    hourly = out / "hourly.csv"
    summary = out / "summary.csv"
    with open(hourly, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(hourly_header(results))
        for h in results.solved:
            for c in results.classes:
                d = h.decisions[c]
                w.writerow([h.hour, c, _f(d.price), _f(d.load), _f(d.p_wholesale)]
                           + [_f(x) for x in d.p_dg]
                           + [_f(d.profit), _f(h.dispatch.total_loss), h.iterations,
                              "true" if h.converged else "false"])
    profits = results.daily_profit()
    prices = results.mean_price()
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["retailer", "technology", "daily_profit", "mean_price", "partial"])
        for c in results.classes:
            w.writerow([c, results.technology, _f(profits[c]), _f(prices[c]),
                        "true" if results.partial else "false"])
    return hourly, summary


def read_results(path) -> tuple:
    """Parse the two CSV files written by :func:`export_results`."""
    out = Path(path)
    with open(out / "hourly.csv", newline="") as fh:
        hourly = list(csv.DictReader(fh))
    with open(out / "summary.csv", newline="") as fh:
        summary = list(csv.DictReader(fh))
    return hourly, summary


def export_trace(results: DailyResults, path) -> Path:
    """Per-iteration prices and dispatch summary for every hour."""
    target = Path(path) / "trace.csv"
    with open(target, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour", "iteration", "class", "price", "p_wholesale", "p_dg_total", "losses"])
        for h in results.solved:
            for k, (prices, disp) in enumerate(zip(h.price_trace, h.dispatch_trace), start=1):
                for c in results.classes:
                    w.writerow([h.hour, k, c, _f(prices[c]), _f(disp[0]), _f(disp[1]), _f(disp[2])])
    return target
