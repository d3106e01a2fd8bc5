"""Acceptance suite: one PASS/FAIL line per criterion, printed at the end of the run.

Run alone with ``pytest tests/test_acceptance.py``; the summary block is
written by the terminal-summary hook in ``conftest.py``.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import random_small_case
from dgretail.dgcost import DGUnit
from dgretail.dispatch import DispatchProblem, effective_wholesale_price, solve_phase1
from dgretail.equilibrium import EquilibriumConfig, extra_round, solve_day
from dgretail.network import class_nominal_load
from dgretail.pricing import DemandModel, SupplyTerms, demand, solve_class
from dgretail.powerflow import solve_dispatch
from oracles import dispatch_objective, grid_class, grid_dispatch, newton_raphson, nodal_injections

LINES = {}
REPORTS = []
TIE = 1e-9  # relative slack when comparing daily profits that tie exactly in exact arithmetic


@contextmanager
def criterion(key, text):
    try:
        yield
    except BaseException as exc:
        LINES[key] = f"FAIL  {key:>3}  {text}  ({type(exc).__name__}: {str(exc).splitlines()[0][:120]})"
        raise
    LINES[key] = f"PASS  {key:>3}  {text}"


@pytest.fixture(scope="module")
def days(ieee33, catalog, default_scenario):
    """Daily results under default options: the shipped case as-is, DG removed, and every technology."""
    cfg = default_scenario.config
    start = time.perf_counter()
    shipped = solve_day(ieee33, default_scenario, cfg)
    elapsed = time.perf_counter() - start
    out = {"shipped": shipped, "none": solve_day(ieee33.without_dg(), default_scenario, cfg)}
    for name in catalog:
        out[name] = solve_day(ieee33.with_technology(catalog[name]), default_scenario, cfg)
    return out, elapsed


def test_c1_power_flow_matches_newton(ieee33):
    with criterion("1", "sweep vs Newton-Raphson on 50 random injection sets: |dV| <= 1e-4 pu, "
                        "|dLoss| <= 0.1 kW, < 10 s"):
        rng = np.random.default_rng(1)
        start = time.perf_counter()
        worst_v = worst_loss = 0.0
        for _ in range(50):
            loads = {c: class_nominal_load(ieee33, c, rng.uniform(0.5, 1.5)) for c in ieee33.classes}
            dg = [rng.uniform(0, u.p_max) for u in ieee33.dg_units]
            sol = solve_dispatch(ieee33, dg, loads)
            vm, _, loss, _ = newton_raphson(ieee33, *nodal_injections(ieee33, dg, loads))
            worst_v = max(worst_v, float(np.max(np.abs(sol.voltage_magnitude - vm))))
            worst_loss = max(worst_loss, abs(sol.total_loss - loss))
        elapsed = time.perf_counter() - start
        assert worst_v <= 1e-4, worst_v
        assert worst_loss <= 0.1, worst_loss
        assert elapsed < 10, elapsed


def test_c2_phase1_optimality(days):
    with criterion("2", "Phase 1 within 0.1% of 5 kW grid on 20 small instances; KKT <= 1e-4 on every "
                        "shipped-scenario solve; < 60 s"):
        rng = np.random.default_rng(2)
        start = time.perf_counter()
        for _ in range(20):
            case = random_small_case(rng)
            assert case.n_bus <= 6 and len(case.dg_units) <= 2
            loads = {c: class_nominal_load(case, c, 1.0) for c in case.classes}
            prices = {c: float(rng.uniform(0.06, 0.2)) for c in case.classes}
            res = solve_phase1(DispatchProblem(case, loads, prices))
            w = effective_wholesale_price(loads, prices)
            best, _ = grid_dispatch(case, loads, w)
            ours = float(dispatch_objective(case, res.p_dg[None, :], loads, w)[0])
            assert ours == pytest.approx(res.objective, rel=1e-8)
            assert ours <= best * (1 + 1e-3), (ours, best)
        elapsed = time.perf_counter() - start
        assert elapsed < 60, elapsed

        results, _ = days
        worst = max(t[3] for r in results.values() for h in r.solved for t in h.dispatch_trace)
        assert worst <= 1e-4, worst


def test_c3_phase2_closed_form_and_grid():
    with criterion("3", "no-DG example gives 3.45 / 51 kW / 130.05 $/h to 1e-6; 100 grid-search "
                        "instances within 0.01%"):
        d = solve_class(DemandModel(100.0, 1.0, -0.2), SupplyTerms(0.9))
        assert abs(d.price - 3.45) <= 1e-6 * 3.45
        assert abs(d.load - 51.0) <= 1e-6 * 51.0
        assert abs(d.profit - 130.05) <= 1e-6 * 130.05
        best, price, _ = grid_class(100.0, 1.0, -0.2, 0.9, 6.0)
        assert abs(price - 3.45) <= 1e-4

        rng = np.random.default_rng(3)
        for _ in range(100):
            l_nom, p_nom = rng.uniform(20, 500), rng.uniform(0.05, 0.3)
            beta = -float(np.exp(rng.uniform(np.log(0.01), np.log(0.25))))
            spot = rng.uniform(0.03, 0.12)
            if rng.random() < 0.8:
                unit = DGUnit("G", 2, rng.uniform(0, 3e-4), rng.uniform(0.02, 0.1), 0.3, 0.0, 400.0)
                avail = float(rng.uniform(0, 400))
                supply, terms = SupplyTerms(spot, (unit,), (avail,)), (unit.a, unit.b)
            else:
                supply, terms, avail = SupplyTerms(spot), None, 0.0
            model = DemandModel(l_nom, p_nom, beta)
            d = solve_class(model, supply)
            best, _, _ = grid_class(l_nom, p_nom, beta, spot, min(20 * p_nom, model.choke_price), terms, avail)
            assert d.profit >= best - 1e-4 * abs(best), (d.profit, best)
            assert abs(d.profit - best) <= 1e-4 * abs(best), (d.profit, best)


def test_c4_demand_model_exact():
    with criterion("4", "demand(p_N) == L_N exactly; finite-difference slope == beta L_N / p_N to 1e-9"):
        rng = np.random.default_rng(4)
        for _ in range(200):
            m = DemandModel(rng.uniform(1, 1000), rng.uniform(0.01, 2.0), -rng.uniform(0.001, 1.0))
            assert demand(m, m.price_nominal) == m.load_nominal
            h = 1e-3 * m.price_nominal
            fd = (demand(m, m.price_nominal + h) - demand(m, m.price_nominal - h)) / (2 * h)
            exact = m.beta * m.load_nominal / m.price_nominal
            assert abs(fd - exact) <= 1e-9 * abs(exact), (fd, exact)


def test_c5_fixed_point(ieee33, catalog, days):
    with criterion("5", "shipped scenario: all 24 hours converge within 50 iterations in < 30 s; every "
                        "converged hour moves <= price_tol under one extra round"):
        results, elapsed = days
        shipped = results["shipped"]
        assert not shipped.failures
        assert all(h.converged and h.iterations <= 50 for h in shipped.hours)
        assert elapsed < 30, elapsed
        cfg = EquilibriumConfig()
        beta = {c: -0.2 for c in ieee33.classes}
        cases = {"shipped": ieee33, "none": ieee33.without_dg()}
        cases.update({name: ieee33.with_technology(catalog[name]) for name in catalog})
        for key, r in results.items():
            case = cases[key]
            for h in r.solved:
                if not h.converged:
                    continue
                new = extra_round(case, h, beta, cfg)
                moved = max(abs(new[c] - h.class_prices[c]) / h.class_prices[c] for c in case.classes)
                assert moved <= cfg.price_tol, (key, h.hour, moved)


def _totals(results):
    return {k: r.total_profit() for k, r in results.items() if k != "shipped"}


def test_c6a_no_dg_profit_is_highest(days, catalog):
    with criterion("6a", "daily profit with DG disabled >= with any Table-I technology"):
        totals = _totals(days[0])
        for name in catalog:
            assert totals["none"] >= totals[name] * (1 - TIE), (name, totals)


def test_c6b_technology_ordering(days, catalog):
    with criterion("6b", "Gas ICE-power only gives the highest and Fuel cell-CHP the lowest daily profit"):
        totals = _totals(days[0])
        tech = {name: totals[name] for name in catalog}
        for name, value in tech.items():
            assert tech["Gas ICE-power only"] >= value * (1 - TIE), (name, tech)
            assert tech["Fuel cell-CHP"] <= value * (1 + TIE), (name, tech)


def test_c6c_class_a_most_profitable(days):
    with criterion("6c", "class A daily profit >= classes B and C (every run)"):
        for key, r in days[0].items():
            p = r.daily_profit()
            assert p["A"] >= p["B"] and p["A"] >= p["C"], (key, p)


def test_c6d_profit_falls_with_elasticity():
    with criterion("6d", "single-class optimal profit non-increasing in |beta| over -0.25 ... -0.01"):
        betas = np.linspace(-0.01, -0.25, 49)  # increasing |beta|
        profits = [solve_class(DemandModel(100.0, 1.0, b), SupplyTerms(0.9)).profit for b in betas]
        assert np.all(np.diff(profits) <= 0), profits


@pytest.mark.parametrize("flag", [{"availability": "pooled"}, {"dg_pricing": "flat-mc"},
                                  {"wholesale_at_spot": True}])
def test_c6_orderings_under_option_flags(ieee33, catalog, default_scenario, flag):
    """Reported only: orderings under non-default flags do not gate the build."""
    sc = default_scenario.with_options(**flag)
    totals = {"none": solve_day(ieee33.without_dg(), sc).total_profit()}
    for name in catalog:
        totals[name] = solve_day(ieee33.with_technology(catalog[name]), sc).total_profit()
    tech = {k: v for k, v in totals.items() if k != "none"}
    checks = {
        "6a": all(totals["none"] >= v * (1 - TIE) for v in tech.values()),
        "6b": (tech["Gas ICE-power only"] >= max(tech.values()) * (1 - TIE)
               and tech["Fuel cell-CHP"] <= min(tech.values()) * (1 + TIE)),
    }
    label = ",".join(f"{k}={v}" for k, v in flag.items())
    REPORTS.append(f"INFO  {label}: " + "  ".join(f"{k} {'holds' if ok else 'fails'}" for k, ok in checks.items()))


def test_c7_conservation(days):
    with criterion("7", "every converged hour: |P_W + sum P_dg - P_loss - sum Load| <= 1e-2 kW; "
                        "per-class purchase balance <= 1e-6 kW"):
        for key, r in days[0].items():
            for h in r.solved:
                if not h.converged:
                    continue
                d = h.dispatch
                gap = d.p_wholesale + float(np.sum(d.p_dg)) - d.total_loss - sum(h.class_loads.values())
                assert abs(gap) <= 1e-2, (key, h.hour, gap)
                for c, dec in h.decisions.items():
                    assert abs(dec.load - dec.p_wholesale - float(np.sum(dec.p_dg))) <= 1e-6, (key, h.hour, c)
