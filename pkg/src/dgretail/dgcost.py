"""Quadratic DG cost curves and the technology catalog.

Units throughout: ``a`` in $/kW^2h, ``b`` in $/kWh, ``c_fixed`` in $/h and
power in kW, so that marginal costs share the $/kWh scale of spot and retail
prices.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

CATALOG_ENV = "DGRETAIL_CATALOG"

# Slack allowed when checking p against unit limits (kW).
LIMIT_TOL = 1e-9


@dataclass(frozen=True)
class Technology:
    name: str
    a: float
    b: float
    c_fixed: float
    p_min: float
    p_max: float

    def __post_init__(self):
        if self.a < 0:
            raise ValueError(f"technology {self.name!r}: a must be >= 0 (convex cost)")
        if not 0 <= self.p_min <= self.p_max:
            raise ValueError(f"technology {self.name!r}: need 0 <= p_min <= p_max")


@dataclass(frozen=True)
class DGUnit:
    """A DG unit placed on a bus, with cost C(p) = a p^2 + b p + c_fixed."""

    id: str
    bus_id: int
    a: float
    b: float
    c_fixed: float
    p_min: float
    p_max: float
    technology: str = "custom"

    def __post_init__(self):
        if self.a < 0:
            raise ValueError(f"DG {self.id}: a must be >= 0 (convex cost)")
        if self.p_min < 0 or self.p_min > self.p_max:
            raise ValueError(f"DG {self.id}: need 0 <= p_min <= p_max")

    @classmethod
    def from_technology(cls, unit_id: str, bus_id: int, tech: Technology) -> "DGUnit":
        return cls(unit_id, bus_id, tech.a, tech.b, tech.c_fixed, tech.p_min, tech.p_max, tech.name)

    def with_technology(self, tech: Technology) -> "DGUnit":
        return replace(self, a=tech.a, b=tech.b, c_fixed=tech.c_fixed,
                       p_min=tech.p_min, p_max=tech.p_max, technology=tech.name)


class TechnologyCatalog(dict):
    """Mapping of technology tag -> :class:`Technology`."""

    @classmethod
    def from_csv(cls, path, scale: float = 1.0) -> "TechnologyCatalog":
        with open(path, newline="") as fh:
            return cls._parse(csv.DictReader(fh), str(path), scale)

    @classmethod
    def _parse(cls, reader, source, scale):
        catalog = cls()
        expected = {"technology", "a", "b", "c", "p_max", "p_min"}
        if set(reader.fieldnames or ()) != expected:
            raise ValueError(f"{source}: catalog header must be {sorted(expected)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                tech = Technology(
                    name=row["technology"].strip(),
                    a=float(row["a"]) * scale,
                    b=float(row["b"]) * scale,
                    c_fixed=float(row["c"]) * scale,
                    p_min=float(row["p_min"]),
                    p_max=float(row["p_max"]),
                )
            except ValueError as exc:
                raise ValueError(f"{source}:{lineno}: {exc}") from None
            if tech.name in catalog:
                raise ValueError(f"{source}:{lineno}: duplicate technology {tech.name!r}")
            catalog[tech.name] = tech
        return catalog

    def get_technology(self, name: str) -> Technology:
        try:
            return self[name]
        except KeyError:
            raise KeyError(f"unknown DG technology {name!r}; known: {sorted(self)}") from None


def default_catalog(scale: float = 1.0) -> TechnologyCatalog:
    """Load the shipped five-row catalog, or the file named by ``$DGRETAIL_CATALOG``."""
    override = os.environ.get(CATALOG_ENV)
    if override:
        return TechnologyCatalog.from_csv(Path(override), scale)
    ref = resources.files("dgretail") / "data" / "table1.catalog"
    with ref.open(newline="") as fh:
        return TechnologyCatalog._parse(csv.DictReader(fh), "table1.catalog", scale)


def _check_limits(unit: DGUnit, p: float):
    if p < unit.p_min - LIMIT_TOL or p > unit.p_max + LIMIT_TOL:
        raise ValueError(f"DG {unit.id}: p={p} kW outside [{unit.p_min}, {unit.p_max}]")


def cost(unit: DGUnit, p: float) -> float:
    """Generation cost in $/h at output ``p`` kW."""
    _check_limits(unit, p)
    return unit.a * p * p + unit.b * p + unit.c_fixed


def marginal_cost(unit: DGUnit, p: float) -> float:
    """dC/dp in $/kWh."""
    _check_limits(unit, p)
    return 2.0 * unit.a * p + unit.b


def variable_cost(unit: DGUnit, p: float) -> float:
    """Integral of the marginal-cost line from 0 to ``p`` (no fixed term)."""
    return unit.a * p * p + unit.b * p


def inverse_marginal(unit: DGUnit, price: float) -> float:
    """Output at which marginal cost equals ``price``, clamped to the unit limits."""
    if unit.a == 0.0:
        return unit.p_max if price > unit.b else unit.p_min
    p = (price - unit.b) / (2.0 * unit.a)
    return min(max(p, unit.p_min), unit.p_max)
