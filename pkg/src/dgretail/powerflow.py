"""Backward/forward sweep load flow for radial feeders.

Loads are constant-power. The slack bus is held at 1.0 pu, angle 0. Powers
enter and leave this module in kW/kvar; internally everything is per-unit on
the case base.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError
from .network import NetworkCase, bus_loads

DEFAULT_TOL = 1e-3  # kW
DEFAULT_MAX_ITER = 100


@dataclass(frozen=True)
class InjectionSet:
    """Net nodal injections, indexed like ``case.buses`` (DG positive, load negative)."""

    p: np.ndarray  # kW
    q: np.ndarray  # kvar


@dataclass
class PowerFlowSolution:
    voltage: np.ndarray  # complex pu
    branch_flow: np.ndarray  # complex kVA at the sending end, per ordered branch
    total_loss: float  # kW
    slack_injection: complex  # kVA
    converged: bool
    iterations: int
    mismatch_trace: list = field(default_factory=list)  # kVA, one entry per check

    @property
    def voltage_magnitude(self) -> np.ndarray:
        return np.abs(self.voltage)

    @property
    def voltage_angle(self) -> np.ndarray:
        return np.angle(self.voltage)

    @property
    def max_mismatch(self) -> float:
        return self.mismatch_trace[-1] if self.mismatch_trace else 0.0


class Feeder:
    """Sweep matrices for one radial topology."""

    def __init__(self, case: NetworkCase):
        idx = case.bus_index
        order = case.ordered_branches()
        n = case.n_bus
        self.slack = idx[case.slack_bus.id]
        self.from_idx = np.array([idx[br.from_bus] for br in order], dtype=int)
        self.to_idx = np.array([idx[br.to_bus] for br in order], dtype=int)
        self.z = np.array([complex(br.resistance, br.reactance) for br in order])
        if np.any(self.z == 0):
            raise ValueError("zero-impedance branch cannot be solved")

        # subtree[b, k] = 1 if bus k lies downstream of branch b (its child side)
        parent_branch = {int(t): b for b, t in enumerate(self.to_idx)}
        subtree = np.zeros((len(order), n))
        for k in range(n):
            node = k
            while node != self.slack:
                b = parent_branch[node]
                subtree[b, k] = 1.0
                node = int(self.from_idx[b])
        self.subtree = subtree

        y = 1.0 / self.z
        ybus = np.zeros((n, n), dtype=complex)
        f, t = self.from_idx, self.to_idx
        np.add.at(ybus, (f, f), y)
        np.add.at(ybus, (t, t), y)
        np.add.at(ybus, (f, t), -y)
        np.add.at(ybus, (t, f), -y)
        self.ybus = ybus


_FEEDERS: dict = {}


def feeder_for(case: NetworkCase) -> Feeder:
    key = (case.buses, case.branches)
    feeder = _FEEDERS.get(key)
    if feeder is None:
        if len(_FEEDERS) > 64:
            _FEEDERS.clear()
        feeder = _FEEDERS[key] = Feeder(case)
    return feeder


def _sweep(fd: Feeder, s_inj: np.ndarray, tol_pu: float, max_iter: int):
    """Core sweep on a (n_bus, batch) array of per-unit injections.

    Returns (voltages, mismatch trace in pu, sweeps run, converged).
    """
    mask = np.ones(s_inj.shape[0], dtype=bool)
    mask[fd.slack] = False
    v = np.ones(s_inj.shape, dtype=complex)
    trace = []
    it = 0
    while True:
        s_calc = v * np.conj(fd.ybus @ v)
        mismatch = float(np.max(np.abs(s_calc[mask] - s_inj[mask]), initial=0.0))
        trace.append(mismatch)
        if mismatch <= tol_pu:
            return v, trace, it, True
        if it >= max_iter:
            return v, trace, it, False
        # backward: accumulate load currents up the tree; forward: drop voltages out
        i_load = np.conj(-s_inj / v)
        i_load[fd.slack] = 0.0
        i_branch = fd.subtree @ i_load
        v = 1.0 - fd.subtree.T @ (fd.z[:, None] * i_branch)
        it += 1


def solve_sweep(case: NetworkCase, injections: InjectionSet,
                tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> PowerFlowSolution:
    """Solve the load flow; raise :class:`ConvergenceError` after ``max_iter`` sweeps.

    ``tol`` bounds the largest nodal complex power mismatch in kVA over the
    non-slack buses.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    fd = feeder_for(case)
    base = case.base_kva
    s_inj = (np.asarray(injections.p, float) + 1j * np.asarray(injections.q, float)) / base
    v, trace, it, converged = _sweep(fd, s_inj[:, None], tol / base, max_iter)
    v = v[:, 0]
    s_slack = complex(v[fd.slack] * np.conj(fd.ybus[fd.slack] @ v)) * base
    i_branch = (v[fd.from_idx] - v[fd.to_idx]) / fd.z
    flow = v[fd.from_idx] * np.conj(i_branch) * base
    loss = float(np.sum(fd.z.real * np.abs(i_branch) ** 2)) * base
    sol = PowerFlowSolution(v, flow, loss, s_slack, converged, it, [m * base for m in trace])
    if not converged:
        raise ConvergenceError(
            f"sweep did not converge in {max_iter} iterations (mismatch {sol.max_mismatch:.3g} kVA)", sol)
    return sol


def batch_losses(case: NetworkCase, p_inj: np.ndarray, q_inj: np.ndarray,
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
    """Losses (kW) and voltage magnitudes for a batch of injection sets.

    ``p_inj``/``q_inj`` have shape (n_bus, batch) in kW/kvar.
    """
    fd = feeder_for(case)
    base = case.base_kva
    v, trace, _, converged = _sweep(fd, (p_inj + 1j * q_inj) / base, tol / base, max_iter)
    if not converged:
        raise ConvergenceError(f"batched sweep did not converge (mismatch {trace[-1] * base:.3g} kVA)")
    i_branch = (v[fd.from_idx] - v[fd.to_idx]) / fd.z[:, None]
    loss = (fd.z.real[:, None] * np.abs(i_branch) ** 2).sum(axis=0) * base
    return loss, np.abs(v)


def check_voltage_limits(sol: PowerFlowSolution, case: NetworkCase) -> list[int]:
    """Ids of buses whose voltage magnitude lies outside [v_min, v_max]."""
    vm = sol.voltage_magnitude
    return [b.id for b, mag in zip(case.buses, vm) if mag < case.v_min or mag > case.v_max]


def injections_for(case: NetworkCase, dg_outputs, class_loads: dict[str, float]) -> InjectionSet:
    """Build nodal injections from per-unit DG output (kW) and class totals (kW).

    DG units run at unity power factor.
    """
    p_load, q_load = bus_loads(case, class_loads)
    p = -p_load
    idx = case.bus_index
    for unit, out in zip(case.dg_units, dg_outputs):
        p[idx[unit.bus_id]] += out
    return InjectionSet(p, -q_load)


def solve_dispatch(case: NetworkCase, dg_outputs, class_loads, tol=DEFAULT_TOL,
                   max_iter=DEFAULT_MAX_ITER) -> PowerFlowSolution:
    return solve_sweep(case, injections_for(case, dg_outputs, class_loads), tol, max_iter)


def loss_with_dispatch(case: NetworkCase, dg_outputs, class_loads: dict[str, float],
                       tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> float:
    """Total real loss (kW) for the given dispatch and class loads."""
    if len(dg_outputs) != len(case.dg_units):
        raise ValueError("one output per DG unit required")
    for unit, out in zip(case.dg_units, dg_outputs):
        if out < unit.p_min - 1e-9 or out > unit.p_max + 1e-9:
            raise ValueError(f"DG {unit.id}: output {out} kW outside limits")
    if any(v < 0 for v in class_loads.values()):
        raise ValueError("class loads must be >= 0")
    return solve_dispatch(case, dg_outputs, class_loads, tol, max_iter).total_loss
