import json

import numpy as np
import pytest

from dgretail.dgcost import default_catalog
from dgretail.network import case_from_dict, load_case, shipped_case_path
from dgretail.scenario import load_scenario, shipped_scenario_path


@pytest.fixture(scope="session")
def ieee33():
    return load_case(shipped_case_path())


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture(scope="session")
def default_scenario(ieee33):
    return load_scenario(shipped_scenario_path()).bind(ieee33.classes)


@pytest.fixture(scope="session")
def case_dict():
    with open(shipped_case_path()) as fh:
        return json.load(fh)


def feeder_dict(n_bus=2, r=0.05, x=0.0, loads=(), dg=(), classes=("A",), v_min=0.9, v_max=1.05):
    """Chain feeder 1-2-...-n. ``loads`` are (bus, kW, kvar, class); ``dg`` are dicts."""
    return {
        "name": "toy",
        "base_mva": 1.0,
        "buses": [{"id": 1, "kind": "slack", "base_kv": 12.66}]
                 + [{"id": k, "kind": "load", "base_kv": 12.66} for k in range(2, n_bus + 1)],
        "branches": [{"from_bus": k, "to_bus": k + 1, "resistance": r, "reactance": x}
                     for k in range(1, n_bus)],
        "loads": [{"bus_id": b, "p_nominal": p, "q_nominal": q, "class_id": c} for b, p, q, c in loads],
        "dg_units": list(dg),
        "classes": list(classes),
        "limits": {"v_min": v_min, "v_max": v_max},
    }


def random_small_case(rng, max_bus=6, max_dg=2):
    """Random radial feeder with at most ``max_bus`` buses and ``max_dg`` Table-I units."""
    techs = list(default_catalog())
    n = int(rng.integers(3, max_bus + 1))
    parents = [int(rng.integers(1, k)) for k in range(2, n + 1)]
    data = {
        "name": "random",
        "base_mva": 1.0,
        "buses": [{"id": 1, "kind": "slack", "base_kv": 12.66}]
                 + [{"id": k, "kind": "load", "base_kv": 12.66} for k in range(2, n + 1)],
        "branches": [{"from_bus": p, "to_bus": k, "resistance": float(rng.uniform(0.005, 0.03)),
                      "reactance": float(rng.uniform(0.005, 0.03))}
                     for k, p in zip(range(2, n + 1), parents)],
        "loads": [{"bus_id": k, "p_nominal": float(rng.uniform(50, 300)),
                   "q_nominal": float(rng.uniform(10, 150)), "class_id": "AB"[k % 2]}
                  for k in range(2, n + 1)],
        "dg_units": [{"id": f"G{j}", "bus_id": int(rng.integers(2, n + 1)),
                      "technology": techs[int(rng.integers(len(techs)))]}
                     for j in range(int(rng.integers(1, max_dg + 1)))],
        "classes": ["A", "B"],
        "limits": {"v_min": 0.9, "v_max": 1.05},
    }
    return case_from_dict(data)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    if module is None or not (module.LINES or module.REPORTS):
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(module.LINES, key=lambda k: (int(k[0]), k)):
        terminalreporter.write_line(module.LINES[key])
    for line in module.REPORTS:
        terminalreporter.write_line(line)
