"""Retailer profit maximization for one customer class.

The retailer picks its sale price; demand follows the linear elastic curve
around the nominal point, and the load is bought from DG units and the
wholesale market at least cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dgcost import DGUnit, marginal_cost

MARKUP = 0.10
PRICE_CAP_FACTOR = 20.0
BALANCE_TOL = 1e-6  # kW

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class DemandModel:
    load_nominal: float  # kW
    price_nominal: float  # $/kWh
    beta: float  # elasticity, <= 0
    floor: bool = True

    def __post_init__(self):
        if self.price_nominal <= 0:
            raise ValueError("price_nominal must be > 0")
        if self.load_nominal < 0:
            raise ValueError("load_nominal must be >= 0")
        if self.beta > 0:
            raise ValueError("beta must be <= 0")

    @property
    def choke_price(self) -> float:
        """Price at which demand reaches zero (inf for perfectly inelastic demand)."""
        if self.beta == 0:
            return math.inf
        return self.price_nominal * (1.0 - 1.0 / self.beta)

    @property
    def slope(self) -> float:
        """dLoad/dPrice in kW per $/kWh."""
        return self.beta * self.load_nominal / self.price_nominal


def demand(model: DemandModel, price: float) -> float:
    """Class load (kW) at ``price``."""
    if price <= 0:
        raise ValueError("price must be > 0")
    raw = model.load_nominal * (1.0 + model.beta * (price - model.price_nominal) / model.price_nominal)
    return max(0.0, raw) if model.floor else raw


def nominal_price(unit_cost: float, markup: float = MARKUP) -> float:
    """Sale price at nominal demand: unit supply cost plus the markup."""
    if unit_cost <= 0:
        raise ValueError("unit_cost must be > 0")
    return (1.0 + markup) * unit_cost


@dataclass(frozen=True)
class SupplyTerms:
    """What a class retailer can buy in one hour.

    ``dg_pricing`` is ``"schedule"`` (pay the integral of each unit's
    marginal-cost line) or ``"flat-mc"`` (pay the marginal cost at the DSO
    dispatch point per kWh).
    """

    spot_price: float
    units: tuple[DGUnit, ...] = ()
    availability: tuple[float, ...] = ()  # kW per unit
    dispatch_point: tuple[float, ...] = ()  # kW per unit, for flat-mc
    dg_pricing: str = "schedule"

    def __post_init__(self):
        if self.spot_price <= 0:
            raise ValueError("spot_price must be > 0")
        if len(self.availability) != len(self.units):
            raise ValueError("one availability per unit required")
        for u, avail in zip(self.units, self.availability):
            if avail < 0 or avail > u.p_max + 1e-9:
                raise ValueError(f"DG {u.id}: availability {avail} outside [0, p_max]")
        if self.dg_pricing not in ("schedule", "flat-mc"):
            raise ValueError(f"unknown dg_pricing {self.dg_pricing!r}")
        if self.dg_pricing == "flat-mc" and len(self.dispatch_point) != len(self.units):
            raise ValueError("flat-mc pricing needs the dispatch point of every unit")

    def flat_prices(self) -> np.ndarray:
        return np.array([marginal_cost(u, min(max(x, u.p_min), u.p_max))
                         for u, x in zip(self.units, self.dispatch_point)])

    def purchase_cost(self, i: int, q: float) -> float:
        """$/h paid to unit ``i`` for ``q`` kW."""
        u = self.units[i]
        if self.dg_pricing == "flat-mc":
            return self.flat_prices()[i] * q
        return u.a * q * q + u.b * q

    def supply_cost(self, p_wholesale: float, p_dg) -> float:
        return self.spot_price * p_wholesale + sum(self.purchase_cost(i, q) for i, q in enumerate(p_dg))


@dataclass
class RetailerDecision:
    class_id: str
    price: float  # $/kWh
    load: float  # kW
    p_wholesale: float  # kW
    p_dg: np.ndarray  # kW per unit
    income: float  # $/h
    cost: float  # $/h
    profit: float  # $/h
    price_nominal: float = 0.0
    load_nominal: float = 0.0
    at_cap: bool = False
    supply: SupplyTerms | None = field(default=None, repr=False)

    def check(self, tol: float = BALANCE_TOL):
        if abs(self.load - self.p_wholesale - float(np.sum(self.p_dg))) > tol:
            raise ValueError(f"class {self.class_id}: load {self.load} != wholesale + DG purchases")
        if self.p_wholesale < -tol:
            raise ValueError(f"class {self.class_id}: negative wholesale purchase")
        if self.supply is not None:
            for q, avail in zip(self.p_dg, self.supply.availability):
                if q < -tol or q > avail + tol:
                    raise ValueError(f"class {self.class_id}: DG purchase {q} outside [0, {avail}]")


def _dg_quantities(supply: SupplyTerms, lam: float) -> np.ndarray:
    out = np.empty(len(supply.units))
    for i, (u, avail) in enumerate(zip(supply.units, supply.availability)):
        if u.a > 0:
            out[i] = min(max((lam - u.b) / (2 * u.a), 0.0), avail)
        else:
            out[i] = avail if lam > u.b else 0.0
    return out


def dg_crossover(supply: SupplyTerms) -> np.ndarray:
    """Purchases from each unit up to where its price meets the spot price."""
    if supply.dg_pricing == "flat-mc":
        prices = supply.flat_prices()
        return np.where(prices < supply.spot_price, np.asarray(supply.availability, float), 0.0)
    return _dg_quantities(supply, supply.spot_price)


def allocate_supply(load: float, supply: SupplyTerms) -> tuple[float, np.ndarray]:
    """Least-cost split of ``load`` into (wholesale kW, DG kW per unit).

    DG units are loaded up to the point where their marginal purchase price
    meets the spot price; wholesale covers the rest. When that DG quantity
    already exceeds the load, units are trimmed back to a common marginal
    price below spot.
    """
    if load < 0:
        raise ValueError("load must be >= 0")
    m = len(supply.units)
    if load == 0 or m == 0:
        return float(load), np.zeros(m)

    full = dg_crossover(supply)
    if full.sum() <= load:
        return float(load - full.sum()), full

    if supply.dg_pricing == "flat-mc":
        prices = supply.flat_prices()
        q = np.zeros(m)
        left = load
        for i in np.argsort(prices, kind="stable"):
            take = min(full[i], left)
            q[i] = take
            left -= take
        return max(0.0, float(load - q.sum())), q

    return 0.0, _fill_to(load, supply)


def _fill_to(load: float, supply: SupplyTerms) -> np.ndarray:
    """DG purchases at the common marginal price lam < spot where they sum to ``load``.

    Total purchase is piecewise linear in lam between the units' breakpoints
    (b_i, b_i + 2 a_i avail_i) with jumps at b_i for linear-cost units, so the
    crossing is located exactly.
    """
    units, avail = supply.units, np.asarray(supply.availability, float)
    points = sorted({u.b for u in units} | {u.b + 2 * u.a * x for u, x in zip(units, avail) if u.a > 0})

    def linear_part(lam):
        return sum(min(max((lam - u.b) / (2 * u.a), 0.0), x) for u, x in zip(units, avail) if u.a > 0)

    def step_part(lam, inclusive):
        return sum(x for u, x in zip(units, avail)
                   if u.a == 0 and (u.b < lam or (inclusive and u.b == lam)))

    prev_lam, prev_val = points[0], linear_part(points[0]) + step_part(points[0], True)
    if load <= step_part(points[0], False) + linear_part(points[0]):
        lam = points[0]
    else:
        lam = None
        for pt in points:
            left = linear_part(pt) + step_part(pt, False)
            right = linear_part(pt) + step_part(pt, True)
            if load <= left:
                # linear between prev and pt
                lam = prev_lam + (load - prev_val) * (pt - prev_lam) / (left - prev_val)
                break
            if load <= right:
                lam = pt
                break
            prev_lam, prev_val = pt, right
        if lam is None:  # unreachable when load < crossover total
            lam = points[-1]

    q = np.array([min(max((lam - u.b) / (2 * u.a), 0.0), x) if u.a > 0 else (x if u.b < lam else 0.0)
                  for u, x in zip(units, avail)])
    left = load - q.sum()
    # linear-cost units priced exactly at the margin share the remainder, cheapest first
    for i in sorted(range(len(units)), key=lambda k: units[k].b):
        if left <= 0:
            break
        if units[i].a == 0 and units[i].b == lam:
            take = min(avail[i] - q[i], left)
            q[i] += take
            left -= take
    if abs(left) > 0 and q.sum() > 0:
        # rounding residue goes to an interior unit so the class balance is exact
        interior = [i for i in range(len(units)) if 0 < q[i] < avail[i]] or [int(np.argmax(q))]
        q[interior[0]] = min(max(q[interior[0]] + left, 0.0), avail[interior[0]])
    return q


def supply_cost(load: float, supply: SupplyTerms) -> float:
    p_w, q = allocate_supply(load, supply)
    return supply.supply_cost(p_w, q)


def average_supply_cost(load: float, supply: SupplyTerms) -> float:
    """$/kWh cost of serving ``load`` at least cost (spot price for zero load)."""
    if load <= 0:
        return supply.spot_price
    return supply_cost(load, supply) / load


def profit(decision: RetailerDecision) -> float:
    """Income minus wholesale and DG purchase payments, in $/h."""
    decision.check()
    if decision.supply is None:
        raise ValueError("decision carries no supply terms")
    income = decision.price * decision.load
    return income - decision.supply.supply_cost(decision.p_wholesale, decision.p_dg)


def _reduced_profit(price: float, model: DemandModel, supply: SupplyTerms) -> float:
    load = max(0.0, demand(model, price))
    return price * load - supply_cost(load, supply)


def _golden_max(fn, lo: float, hi: float, rel_tol: float = 1e-13) -> float:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > rel_tol * max(1.0, abs(b)):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def _decision(class_id, price, model, supply, at_cap) -> RetailerDecision:
    load = max(0.0, demand(model, price))
    p_w, q = allocate_supply(load, supply)
    income = price * load
    spend = supply.supply_cost(p_w, q)
    return RetailerDecision(class_id, price, load, p_w, q, float(income), float(spend), float(income - spend),
                            model.price_nominal, model.load_nominal, at_cap, supply)


def solve_class(model: DemandModel, supply: SupplyTerms, class_id: str = "",
                price_cap_factor: float = PRICE_CAP_FACTOR) -> RetailerDecision:
    """Profit-maximizing price and purchase split for one class.

    Reduced profit p*D(p) - cost(D(p)) is concave in p (linear demand, convex
    least-cost supply). When the optimum has the spot price as its marginal
    cost and the cap does not bind, the closed form (choke + spot)/2 is exact;
    otherwise a golden-section search runs over [0, min(cap, choke)].
    """
    cap = price_cap_factor * model.price_nominal
    if model.load_nominal == 0:
        m = len(supply.units)
        return RetailerDecision(class_id, model.price_nominal, 0.0, 0.0, np.zeros(m), 0.0, 0.0, 0.0,
                                model.price_nominal, 0.0, False, supply)
    hi = min(cap, model.choke_price)
    if not math.isfinite(hi):
        raise ValueError("price cap must be finite")

    dg_full = float(dg_crossover(supply).sum()) if supply.units else 0.0
    closed = 0.5 * (model.choke_price + supply.spot_price)
    if closed < cap and demand(model, closed) >= dg_full:
        return _decision(class_id, closed, model, supply, False)

    fn = lambda p: _reduced_profit(p, model, supply)  # noqa: E731
    price = _golden_max(fn, 0.0, hi)
    if fn(hi) >= fn(price):
        price = hi
    price = max(price, 1e-12)
    return _decision(class_id, price, model, supply, price >= cap * (1 - 1e-12))
