import numpy as np
import pytest

from conftest import feeder_dict
from dgretail.equilibrium import (EquilibriumConfig, HourInputs, _oscillating, extra_round, solve_day,
                                  solve_hour)
from dgretail.network import case_from_dict
from dgretail.scenario import scenario_from_dict

NOMINAL_HOUR = HourInputs(hour=19, multipliers={"A": 1.0, "B": 1.0, "C": 1.0}, spot_price=0.07)


def flat_scenario(spot=0.06, mult=0.8, beta=-0.2, **options):
    hours = [{"hour": h, "load_multiplier": mult, "spot_price": spot} for h in range(24)]
    return scenario_from_dict({"name": "flat", "beta": beta, "hours": hours, "options": options})


def single_class_case(**dg):
    units = [{"id": "G", "bus_id": 2, "technology": "Gas ICE-power only", **dg}] if dg else []
    return case_from_dict(feeder_dict(3, r=0.01, x=0.01, loads=[(2, 200.0, 50.0, "A"), (3, 100.0, 30.0, "A")],
                                      dg=units))


def test_no_dg_single_class_converges_to_monopoly_price():
    case = single_class_case()
    spot = 0.08
    eq = solve_hour(case, HourInputs(0, {"A": 1.0}, spot), {"A": -0.2}, EquilibriumConfig(damping=1.0))
    assert eq.converged
    assert eq.iterations <= 3
    p_nom = 1.1 * spot  # spot-only supply cost, 10 % markup
    choke = p_nom * (1 + 1 / 0.2)
    assert eq.class_prices["A"] == pytest.approx((choke + spot) / 2, rel=1e-9)
    assert np.all(eq.dispatch.p_dg == 0) or len(eq.dispatch.p_dg) == 0
    assert eq.decisions["A"].p_wholesale == pytest.approx(eq.decisions["A"].load)


def test_default_damping_still_converges_without_dg():
    case = single_class_case()
    eq = solve_hour(case, HourInputs(0, {"A": 1.0}, 0.08), {"A": -0.2})
    assert eq.converged
    assert eq.damping == 0.5
    assert eq.residual <= 1e-4


def test_near_inelastic_converges_at_cap():
    case = single_class_case()
    cfg = EquilibriumConfig(damping=1.0)
    eq = solve_hour(case, HourInputs(0, {"A": 1.0}, 0.08), {"A": -0.001}, cfg)
    assert eq.converged
    d = eq.decisions["A"]
    assert d.at_cap
    assert d.price == pytest.approx(cfg.price_cap_factor * d.price_nominal, rel=1e-9)


def test_restart_from_perturbed_prices(ieee33, catalog):
    case = ieee33.with_technology(catalog["Gas ICE-power only"])
    beta = {c: -0.2 for c in case.classes}
    base = solve_hour(case, NOMINAL_HOUR, beta)
    assert base.converged
    start = {c: 1.05 * p for c, p in base.class_prices.items()}
    again = solve_hour(case, NOMINAL_HOUR, beta, initial_prices=start)
    assert again.converged
    for c in case.classes:
        assert abs(again.class_prices[c] - base.class_prices[c]) / base.class_prices[c] <= 1e-4


@pytest.mark.parametrize("tech", ["Fuel cell-CHP", "Microturbine-CHP", "Gas ICE-power only"])
def test_converged_hour_is_a_fixed_point(ieee33, catalog, tech):
    case = ieee33.with_technology(catalog[tech])
    beta = {c: -0.2 for c in case.classes}
    cfg = EquilibriumConfig()
    eq = solve_hour(case, NOMINAL_HOUR, beta, cfg)
    assert eq.converged
    new = extra_round(case, eq, beta, cfg)
    for c in case.classes:
        assert abs(new[c] - eq.class_prices[c]) / eq.class_prices[c] <= cfg.price_tol


def test_dispatch_and_decisions_are_consistent(ieee33, catalog):
    case = ieee33.with_technology(catalog["Fuel cell-CHP"])
    eq = solve_hour(case, NOMINAL_HOUR, {c: -0.2 for c in case.classes})
    offered = sum(np.asarray(d.supply.availability) for d in eq.decisions.values())
    assert offered == pytest.approx(eq.dispatch.p_dg, abs=1e-9)
    for c in case.classes:
        assert eq.decisions[c].load == pytest.approx(eq.class_loads[c], rel=1e-3)


def test_pooled_purchases_respect_unit_output(ieee33, catalog):
    case = ieee33.with_technology(catalog["Fuel cell-CHP"])
    eq = solve_hour(case, NOMINAL_HOUR, {c: -0.2 for c in case.classes},
                    EquilibriumConfig(availability="pooled"))
    bought = sum(d.p_dg for d in eq.decisions.values())
    assert np.all(bought <= eq.dispatch.p_dg + 1e-6)


def test_trace_is_deterministic(ieee33, catalog):
    case = ieee33.with_technology(catalog["Gas ICE-CHP"])
    beta = {c: -0.2 for c in case.classes}
    one = solve_hour(case, NOMINAL_HOUR, beta)
    two = solve_hour(case, NOMINAL_HOUR, beta)
    assert one.price_trace == two.price_trace
    assert one.dispatch_trace == two.dispatch_trace


def test_iteration_cap_reports_unconverged():
    eq = solve_hour(single_class_case(), HourInputs(0, {"A": 1.0}, 0.08), {"A": -0.2},
                    EquilibriumConfig(max_iters=1))
    assert not eq.converged
    assert eq.iterations == 1
    assert len(eq.price_trace) == 1


def test_oscillation_detector():
    assert _oscillating([[1.0], [-1.0], [1.0], [-1.0]])
    assert not _oscillating([[1.0], [-1.0], [-1.0], [1.0]])
    assert not _oscillating([[1.0], [-1.0], [1.0]])
    assert _oscillating([[0.1, 1.0], [0.1, -1.0], [0.1, 1.0], [0.1, -1.0]])


def test_flat_day_gives_identical_hours(ieee33):
    results = solve_day(ieee33, flat_scenario())
    first = results.hours[0]
    assert not results.partial
    for h in results.hours[1:]:
        assert h.class_prices == first.class_prices
        assert np.array_equal(h.dispatch.p_dg, first.dispatch.p_dg)


def test_day_aggregates(ieee33):
    results = solve_day(ieee33, flat_scenario())
    per_hour = {c: results.hours[0].decisions[c].profit for c in ieee33.classes}
    for c, total in results.daily_profit().items():
        assert total == pytest.approx(24 * per_hour[c], rel=1e-12)
    split = results.purchase_split()
    assert len(split["A"]) == 24


def test_failed_hour_is_collected_not_raised():
    case = single_class_case(p_min=350.0)
    hours = [{"hour": h, "load_multiplier": 3.0 if h else 0.5, "spot_price": 0.06} for h in range(24)]
    scenario = scenario_from_dict({"beta": -0.2, "hours": hours})
    results = solve_day(case, scenario)
    assert list(results.failures) == [0]
    assert "hour 0" in results.failures[0]
    assert results.hours[0] is None
    assert len(results.solved) == 23
    assert results.partial


def test_threaded_day_matches_serial(ieee33):
    sc = flat_scenario()
    serial = solve_day(ieee33, sc)
    threaded = solve_day(ieee33, sc, workers=4)
    assert serial.daily_profit() == threaded.daily_profit()


@pytest.mark.parametrize("kwargs", [{"price_tol": 0}, {"max_iters": 0}, {"damping": 0}, {"damping": 1.5},
                                    {"availability": "greedy"}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        EquilibriumConfig(**kwargs)
