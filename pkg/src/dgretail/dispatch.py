"""Distribution operating-cost minimization (the DSO dispatch).

Decision variables are the DG outputs; wholesale injection is the balancing
slack, P_W = sum(load) + P_loss - sum(P_dg) >= 0. The objective is

    w * P_W + sum_i C_i(P_i) + voltage penalty

where ``w`` is the load-share-weighted class price (or the spot price under
the ``wholesale_at_spot`` option).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dgcost import DGUnit, cost
from .errors import InfeasibleError
from .network import NetworkCase, bus_loads
from .powerflow import DEFAULT_MAX_ITER, batch_losses, solve_dispatch

# Sweep tolerance used inside the optimizer (kW); tighter than the default so
# finite-difference loss factors are not swamped by solver noise.
INNER_PF_TOL = 1e-7


@dataclass(frozen=True)
class DispatchOptions:
    wholesale_at_spot: bool = False
    voltage_penalty: float = 1e4  # $/pu^2
    loss_tol: float = 0.1  # kW, outer loss-loop criterion
    step_tol: float = 1e-5  # kW, largest DG move at convergence
    fd_step: float = 1.0  # kW, incremental-loss finite difference
    max_outer: int = 100
    lossless: bool = False  # copper-plate: no losses, no voltage limits
    kkt_tol: float = 1e-4


@dataclass(frozen=True)
class DispatchProblem:
    case: NetworkCase
    class_loads: dict  # kW per class
    class_prices: dict  # $/kWh per class
    spot_price: float | None = None

    def __post_init__(self):
        for c in self.case.classes:
            if self.class_loads.get(c, 0.0) < 0:
                raise ValueError(f"class {c}: load must be >= 0")
            if self.class_prices.get(c, 1.0) <= 0:
                raise ValueError(f"class {c}: price must be > 0")

    @property
    def total_load(self) -> float:
        return sum(self.class_loads.get(c, 0.0) for c in self.case.classes)


@dataclass
class DispatchResult:
    p_dg: np.ndarray  # kW per DG unit
    p_wholesale: float  # kW
    total_loss: float  # kW
    objective: float  # $/h
    kkt_residual: float
    voltage_feasible: bool
    balance_price: float = 0.0  # $/kWh, multiplier on the balance row
    loss_factors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    outer_iterations: int = 0
    min_voltage: float = 1.0
    max_voltage: float = 1.0
    voltage_violations: list = field(default_factory=list)


def effective_wholesale_price(class_loads: dict, class_prices: dict) -> float:
    """Load-share-weighted average of class prices."""
    total = sum(class_loads.values())
    if total <= 0:
        raise ValueError("effective price undefined for zero total load")
    return sum(load / total * class_prices[c] for c, load in class_loads.items())


def wholesale_price(problem: DispatchProblem, opts: DispatchOptions) -> float:
    if opts.wholesale_at_spot:
        if problem.spot_price is None:
            raise ValueError("wholesale_at_spot requires a spot price")
        return problem.spot_price
    loads = {c: problem.class_loads.get(c, 0.0) for c in problem.case.classes}
    if sum(loads.values()) <= 0:
        return float(np.mean([problem.class_prices[c] for c in problem.case.classes]))
    return effective_wholesale_price(loads, problem.class_prices)


def _penalty(vm: np.ndarray, case: NetworkCase, weight: float) -> np.ndarray:
    low = np.clip(case.v_min - vm, 0.0, None)
    high = np.clip(vm - case.v_max, 0.0, None)
    return weight * (low ** 2 + high ** 2).sum(axis=0)


class _Evaluator:
    """Losses, penalty and their DG gradients for one dispatch problem."""

    def __init__(self, problem: DispatchProblem, opts: DispatchOptions):
        self.case = problem.case
        self.opts = opts
        p_load, q_load = bus_loads(self.case, problem.class_loads)
        self.p_base = -p_load
        self.q_base = -q_load
        idx = self.case.bus_index
        self.unit_bus = np.array([idx[u.bus_id] for u in self.case.dg_units], dtype=int)

    def evaluate(self, p: np.ndarray, gradient: bool = True):
        """Return (loss, penalty, d loss/dp, d penalty/dp, voltage magnitudes)."""
        m = len(p)
        if self.opts.lossless:
            return 0.0, 0.0, np.zeros(m), np.zeros(m), np.ones(self.case.n_bus)
        h = self.opts.fd_step
        shifts = [np.zeros(m)]
        if gradient:
            for i in range(m):
                e = np.zeros(m)
                e[i] = h
                shifts += [e, -e]
        cols = len(shifts)
        p_inj = np.repeat(self.p_base[:, None], cols, axis=1)
        for k, s in enumerate(shifts):
            np.add.at(p_inj[:, k], self.unit_bus, p + s)
        q_inj = np.repeat(self.q_base[:, None], cols, axis=1)
        loss, vm = batch_losses(self.case, p_inj, q_inj, INNER_PF_TOL, DEFAULT_MAX_ITER)
        pen = _penalty(vm, self.case, self.opts.voltage_penalty)
        dloss = (loss[1::2] - loss[2::2]) / (2 * h)
        dpen = (pen[1::2] - pen[2::2]) / (2 * h)
        return float(loss[0]), float(pen[0]), dloss, dpen, vm[:, 0]


def _unit_response(units, lam, loss_f, dpen):
    """DG outputs minimizing C_i(p) - (lam*(1 - LF_i) - dPen_i) * p within limits."""
    out = np.empty(len(units))
    for i, u in enumerate(units):
        value = lam * (1.0 - loss_f[i]) - dpen[i]
        if u.a > 0:
            out[i] = min(max((value - u.b) / (2 * u.a), u.p_min), u.p_max)
        else:
            out[i] = u.p_max if value > u.b else u.p_min
    return out


def _balanced_step(units, w, load, loss0, p0, loss_f, dpen):
    """Coordinate-wise minimizer of the loss-linearized problem.

    Returns (p, lam) with lam = w unless the wholesale floor binds, in which
    case lam < w is found by bisection so that P_W = 0.
    """
    def wholesale(p):
        return load + loss0 + loss_f @ (p - p0) - p.sum()

    p = _unit_response(units, w, loss_f, dpen)
    if wholesale(p) >= 0:
        return p, w
    lo = -1.0 - abs(w)
    while wholesale(_unit_response(units, lo, loss_f, dpen)) < 0:
        if lo < -1e6:
            raise InfeasibleError("DG minimum output exceeds load plus losses; export is not modeled")
        lo *= 2
    hi = w
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if wholesale(_unit_response(units, mid, loss_f, dpen)) < 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-15 * max(1.0, abs(w)):
            break
    p = _unit_response(units, lo, loss_f, dpen)
    # linear-cost units sitting exactly at the margin absorb what is left
    slack = wholesale(p)
    for i, u in enumerate(units):
        if slack <= 0:
            break
        if u.a == 0 and p[i] < u.p_max:
            add = min(u.p_max - p[i], slack / max(1.0 - loss_f[i], 1e-9))
            p[i] += add
            slack = wholesale(p)
    return p, lo


def _objective(units, w, p, p_wholesale, pen):
    return w * p_wholesale + sum(cost(u, float(x)) for u, x in zip(units, p)) + pen


def _stationarity(units, p, lam, loss_f, dpen):
    """Per-unit KKT violation (in $/kWh) for multiplier ``lam``."""
    res = np.empty(len(units))
    for i, u in enumerate(units):
        g = 2 * u.a * p[i] + u.b - (lam * (1.0 - loss_f[i]) - dpen[i])
        at_min = p[i] <= u.p_min + 1e-9
        at_max = p[i] >= u.p_max - 1e-9
        if at_min and at_max:
            res[i] = 0.0
        elif at_min:
            res[i] = max(0.0, -g)
        elif at_max:
            res[i] = max(0.0, g)
        else:
            res[i] = abs(g)
    return res


def _residual(units, p, w, p_wholesale, loss_f, dpen, balance_tol=1e-2):
    """Max normalized KKT violation, choosing the best admissible multiplier.

    With P_W > 0 the multiplier must equal ``w``; with P_W at its floor any
    lam <= w is admissible.
    """
    if not units:
        return 0.0
    candidates = [w]
    if p_wholesale <= balance_tol:
        for i, u in enumerate(units):
            denom = 1.0 - loss_f[i]
            if denom > 0:
                lam = (2 * u.a * p[i] + u.b + dpen[i]) / denom
                if lam < w:
                    candidates.append(lam)
    scale = abs(w) if w != 0 else 1.0
    return min(float(np.max(_stationarity(units, p, lam, loss_f, dpen))) for lam in candidates) / scale


def solve_phase1(problem: DispatchProblem, opts: DispatchOptions | None = None,
                 p_start=None) -> DispatchResult:
    """Minimize distribution operating cost for one hour.

    Projected coordinate descent on DG outputs: each outer iteration refreshes
    losses, incremental-loss factors and the voltage-penalty gradient from the
    sweep load flow, then sets every unit to its exact minimizer of the
    linearized problem (merit order with loss penalty factors). Steps that
    raise the true objective are halved.
    """
    opts = opts or DispatchOptions()
    case = problem.case
    units = list(case.dg_units)
    w = wholesale_price(problem, opts)
    load = problem.total_load
    ev = _Evaluator(problem, opts)

    if p_start is None:
        p = _unit_response(units, w, np.zeros(len(units)), np.zeros(len(units)))
    else:
        p = np.clip(np.asarray(p_start, float), [u.p_min for u in units], [u.p_max for u in units])
    loss, pen, loss_f, dpen, vm = ev.evaluate(p)
    if load + loss - p.sum() < 0:
        p, _ = _balanced_step(units, w, load, loss, p, loss_f, dpen)
        loss, pen, loss_f, dpen, vm = ev.evaluate(p)
    f = _objective(units, w, p, load + loss - p.sum(), pen)

    outer = 0
    for outer in range(1, opts.max_outer + 1):
        target, lam = _balanced_step(units, w, load, loss, p, loss_f, dpen)
        theta = 1.0
        while True:
            trial = p + theta * (target - p)
            t_loss, t_pen, t_lf, t_dpen, t_vm = ev.evaluate(trial)
            t_pw = load + t_loss - trial.sum()
            t_f = _objective(units, w, trial, max(t_pw, 0.0), t_pen)
            if t_f <= f + 1e-9 * max(1.0, abs(f)) or theta < 1e-6:
                break
            theta *= 0.5
        step = float(np.max(np.abs(trial - p), initial=0.0))
        dloss = abs(t_loss - loss)
        p, loss, pen, loss_f, dpen, vm, f = trial, t_loss, t_pen, t_lf, t_dpen, t_vm, t_f
        if dloss < opts.loss_tol and step < opts.step_tol:
            break

    # report wholesale from an independent full load-flow at the final point
    if opts.lossless:
        p_w, loss, viol, vmin, vmax = load - p.sum(), 0.0, [], 1.0, 1.0
    else:
        sol = solve_dispatch(case, p, problem.class_loads, tol=INNER_PF_TOL)
        p_w = sol.slack_injection.real
        loss = sol.total_loss
        vmag = sol.voltage_magnitude
        viol = [b.id for b, v in zip(case.buses, vmag) if v < case.v_min or v > case.v_max]
        vmin, vmax = float(vmag.min()), float(vmag.max())
    if p_w < 0:
        if p_w < -1e-2:
            raise InfeasibleError(f"dispatch requires wholesale export ({p_w:.3f} kW)")
        p_w = 0.0
    lam = w if p_w > 1e-2 else min(w, lam)
    residual = _residual(units, p, w, p_w, loss_f, dpen)
    return DispatchResult(
        p_dg=p,
        p_wholesale=float(p_w),
        total_loss=float(loss),
        objective=float(_objective(units, w, p, p_w, pen)),
        kkt_residual=residual,
        voltage_feasible=not viol,
        balance_price=float(lam),
        loss_factors=loss_f,
        outer_iterations=outer,
        min_voltage=vmin,
        max_voltage=vmax,
        voltage_violations=viol,
    )


def kkt_residual(problem: DispatchProblem, result: DispatchResult,
                 opts: DispatchOptions | None = None) -> float:
    """Normalized stationarity/complementarity violation of ``result``.

    Loss factors and penalty gradients are recomputed at ``result.p_dg``.
    """
    opts = opts or DispatchOptions()
    units = list(problem.case.dg_units)
    w = wholesale_price(problem, opts)
    _, _, loss_f, dpen, _ = _Evaluator(problem, opts).evaluate(np.asarray(result.p_dg, float))
    return _residual(units, np.asarray(result.p_dg, float), w, result.p_wholesale, loss_f, dpen)


def dispatch_cost(units: list[DGUnit], p_dg) -> float:
    return sum(cost(u, float(x)) for u, x in zip(units, p_dg))
