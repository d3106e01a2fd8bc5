"""Fixed-point iteration between DSO dispatch and retailer pricing."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dispatch import DispatchOptions, DispatchProblem, DispatchResult, solve_phase1
from .errors import EquilibriumError
from .network import NetworkCase, class_nominal_load
from .pricing import (MARKUP, PRICE_CAP_FACTOR, DemandModel, RetailerDecision, SupplyTerms,
                      average_supply_cost, nominal_price, solve_class)

log = logging.getLogger(__name__)

AVAILABILITY_RULES = ("proportional", "pooled")


@dataclass(frozen=True)
class EquilibriumConfig:
    price_tol: float = 1e-4  # relative
    max_iters: int = 50
    damping: float = 0.5
    availability: str = "proportional"
    dg_pricing: str = "schedule"
    price_cap_factor: float = PRICE_CAP_FACTOR
    markup: float = MARKUP
    demand_floor: bool = True
    dispatch: DispatchOptions = field(default_factory=DispatchOptions)

    def __post_init__(self):
        if self.price_tol <= 0:
            raise ValueError("price_tol must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.availability not in AVAILABILITY_RULES:
            raise ValueError(f"availability must be one of {AVAILABILITY_RULES}")


@dataclass(frozen=True)
class HourInputs:
    hour: int
    multipliers: dict  # class -> load multiplier
    spot_price: float  # $/kWh


@dataclass
class HourlyEquilibrium:
    hour: int
    converged: bool
    iterations: int
    class_prices: dict
    dispatch: DispatchResult
    decisions: dict  # class -> RetailerDecision
    class_loads: dict  # Phase-1 input loads of the final iteration
    nominal_loads: dict
    spot_price: float
    price_trace: list = field(default_factory=list)  # per-iteration {class: price}
    dispatch_trace: list = field(default_factory=list)  # per-iteration (P_W kW, sum P_dg kW, loss kW, KKT)
    residual: float = 0.0
    damping: float = 1.0
    damping_halvings: int = 0

    @property
    def total_profit(self) -> float:
        return sum(d.profit for d in self.decisions.values())


def _shares(case: NetworkCase, loads: dict) -> dict:
    total = sum(loads[c] for c in case.classes)
    if total <= 0:
        return {c: 1.0 / len(case.classes) for c in case.classes}
    return {c: loads[c] / total for c in case.classes}


def _class_decision(case, c, avail, dispatch, nominal, spot, beta, config) -> RetailerDecision:
    supply = SupplyTerms(
        spot_price=spot,
        units=tuple(case.dg_units),
        availability=tuple(float(x) for x in avail),
        dispatch_point=tuple(float(x) for x in dispatch.p_dg),
        dg_pricing=config.dg_pricing,
    )
    unit_cost = average_supply_cost(nominal[c], supply)
    model = DemandModel(nominal[c], nominal_price(unit_cost, config.markup), beta[c], config.demand_floor)
    return solve_class(model, supply, c, config.price_cap_factor)


def retailer_round(case: NetworkCase, dispatch: DispatchResult, class_loads: dict, nominal: dict,
                   spot: float, beta: dict, config: EquilibriumConfig) -> dict:
    """Solve every class retailer against one DSO dispatch."""
    p_dg = np.asarray(dispatch.p_dg, float)
    if config.availability == "proportional":
        shares = _shares(case, class_loads)
        return {c: _class_decision(case, c, p_dg * shares[c], dispatch, nominal, spot, beta, config)
                for c in case.classes}

    # pooled: first-come in class order, then coordinate ascent until purchases settle
    purchases = {c: np.zeros(len(p_dg)) for c in case.classes}
    decisions = {}
    for _ in range(100):
        moved = 0.0
        for c in case.classes:
            others = sum(purchases[k] for k in case.classes if k != c)
            avail = np.clip(p_dg - others, 0.0, None)
            dec = _class_decision(case, c, avail, dispatch, nominal, spot, beta, config)
            moved = max(moved, float(np.max(np.abs(dec.p_dg - purchases[c]), initial=0.0)))
            purchases[c] = dec.p_dg
            decisions[c] = dec
        if moved < 1e-9:
            break
    return decisions


def _oscillating(deltas: list) -> bool:
    if len(deltas) < 4:
        return False
    last = np.array(deltas[-4:])
    signs = np.sign(last)
    return bool(np.any(np.all(signs[1:] * signs[:-1] < 0, axis=0)))


def solve_hour(case: NetworkCase, inputs: HourInputs, beta: dict,
               config: EquilibriumConfig | None = None, initial_prices: dict | None = None) -> HourlyEquilibrium:
    """Iterate dispatch and pricing until class prices stop moving.

    Prices start at the spot price unless ``initial_prices`` is given. Each
    iteration dispatches the network at the current prices and loads, prices
    every class against that dispatch, then moves prices and loads a
    ``damping`` fraction of the way to the retailers' answer. Converged when
    the largest relative gap between the retailers' prices and the prices fed
    in is at most ``price_tol``; the reported prices are the retailers'.
    """
    config = config or EquilibriumConfig()
    spot = inputs.spot_price
    nominal = {c: class_nominal_load(case, c, inputs.multipliers[c]) for c in case.classes}
    prices = dict(initial_prices) if initial_prices else {c: spot for c in case.classes}
    loads = dict(nominal)
    damping = config.damping
    halvings = 0
    trace = []
    dispatch_trace = []
    deltas = []
    p_start = None
    converged = False
    residual = np.inf

    for it in range(1, config.max_iters + 1):
        try:
            problem = DispatchProblem(case, loads, prices, spot)
            dispatch = solve_phase1(problem, config.dispatch, p_start)
            decisions = retailer_round(case, dispatch, loads, nominal, spot, beta, config)
        except Exception as exc:
            raise EquilibriumError(f"hour {inputs.hour}, iteration {it}: {exc}", inputs.hour, it) from exc
        p_start = dispatch.p_dg
        new = {c: decisions[c].price for c in case.classes}
        trace.append(new)
        dispatch_trace.append((dispatch.p_wholesale, float(np.sum(dispatch.p_dg)), dispatch.total_loss,
                               dispatch.kkt_residual))
        residual = max(abs(new[c] - prices[c]) / prices[c] for c in case.classes)
        if residual <= config.price_tol:
            converged = True
            break
        deltas.append([new[c] - prices[c] for c in case.classes])
        if _oscillating(deltas):
            damping *= 0.5
            halvings += 1
            deltas.clear()
            log.info("hour %d: price oscillation, damping halved to %g", inputs.hour, damping)
        prices = {c: (1 - damping) * prices[c] + damping * new[c] for c in case.classes}
        loads = {c: (1 - damping) * loads[c] + damping * decisions[c].load for c in case.classes}

    if not converged:
        log.warning("hour %d: no convergence after %d iterations (residual %.3g)",
                    inputs.hour, config.max_iters, residual)
    return HourlyEquilibrium(
        hour=inputs.hour,
        converged=converged,
        iterations=it,
        class_prices=new,
        dispatch=dispatch,
        decisions=decisions,
        class_loads=loads,
        nominal_loads=nominal,
        spot_price=spot,
        price_trace=trace,
        dispatch_trace=dispatch_trace,
        residual=float(residual),
        damping=damping,
        damping_halvings=halvings,
    )


def extra_round(case: NetworkCase, eq: HourlyEquilibrium, beta: dict,
                config: EquilibriumConfig | None = None) -> dict:
    """One more dispatch + pricing round from a converged state; returns new prices."""
    config = config or EquilibriumConfig()
    loads = {c: eq.decisions[c].load for c in case.classes}
    problem = DispatchProblem(case, loads, eq.class_prices, eq.spot_price)
    dispatch = solve_phase1(problem, config.dispatch, eq.dispatch.p_dg)
    decisions = retailer_round(case, dispatch, loads, eq.nominal_loads, eq.spot_price, beta, config)
    return {c: decisions[c].price for c in case.classes}


def technology_label(case: NetworkCase) -> str:
    techs = {u.technology for u in case.dg_units}
    if not techs:
        return "none"
    return techs.pop() if len(techs) == 1 else "mixed"


@dataclass
class DailyResults:
    classes: tuple
    unit_ids: tuple
    technology: str
    hours: list  # HourlyEquilibrium, or None where the hour failed
    failures: dict = field(default_factory=dict)  # hour -> message

    @property
    def partial(self) -> bool:
        return bool(self.failures) or any(h is None or not h.converged for h in self.hours)

    @property
    def solved(self) -> list:
        return [h for h in self.hours if h is not None]

    def daily_profit(self) -> dict:
        """$ per class over the day (hours are one hour long)."""
        return {c: sum(h.decisions[c].profit for h in self.solved) for c in self.classes}

    def mean_price(self) -> dict:
        solved = self.solved
        if not solved:
            return {c: float("nan") for c in self.classes}
        return {c: sum(h.class_prices[c] for h in solved) / len(solved) for c in self.classes}

    def total_profit(self) -> float:
        return sum(self.daily_profit().values())

    def purchase_split(self) -> dict:
        """class -> list of (hour, wholesale kW, DG kW per unit)."""
        return {c: [(h.hour, h.decisions[c].p_wholesale, tuple(h.decisions[c].p_dg)) for h in self.solved]
                for c in self.classes}


def solve_day(case: NetworkCase, scenario, config: EquilibriumConfig | None = None,
              workers: int = 1) -> DailyResults:
    """Solve every scenario hour independently; failed hours are recorded, not raised."""
    config = config or scenario.config
    scenario = scenario.bind(case.classes)

    def run(inputs):
        try:
            return solve_hour(case, inputs, scenario.beta, config), None
        except Exception as exc:  # collected per hour
            return None, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outcomes = list(pool.map(run, scenario.hours))
    else:
        outcomes = [run(h) for h in scenario.hours]

    hours, failures = [], {}
    for inputs, (eq, err) in zip(scenario.hours, outcomes):
        hours.append(eq)
        if err is not None:
            failures[inputs.hour] = err
    return DailyResults(tuple(case.classes), tuple(u.id for u in case.dg_units),
                        technology_label(case), hours, failures)
