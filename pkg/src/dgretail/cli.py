"""Command-line driver: validate cases, run days, and sweep technologies or elasticities."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .equilibrium import DailyResults, solve_day
from .errors import CaseFormatError, CaseValidationError, ScenarioError
from .network import load_case, validate_radial
from .pricing import DemandModel, SupplyTerms, solve_class
from .scenario import export_results, export_trace, load_scenario

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_SOLVER = 3

log = logging.getLogger("dgretail")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class UsageError(Exception):
    pass


def _add_overrides(p: argparse.ArgumentParser):
    g = p.add_argument_group("option overrides (take precedence over the scenario file)")
    g.add_argument("--price-tol", type=float)
    g.add_argument("--max-iters", type=int)
    g.add_argument("--damping", type=float)
    g.add_argument("--availability", choices=["proportional", "pooled"])
    g.add_argument("--dg-pricing", choices=["schedule", "flat-mc"])
    g.add_argument("--wholesale-at-spot", action="store_true", default=None)
    g.add_argument("--price-cap-factor", type=float)
    g.add_argument("--markup", type=float)
    g.add_argument("--no-demand-floor", dest="demand_floor", action="store_false", default=None)
    g.add_argument("--voltage-penalty", type=float)
    g.add_argument("--cost-scale", type=float)
    p.add_argument("--workers", type=int, default=1, help="hours solved concurrently")


def _add_inputs(p: argparse.ArgumentParser):
    p.add_argument("case", type=Path)
    p.add_argument("scenario", type=Path)
    _add_overrides(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dgretail", description="Retail electricity pricing with DG on radial feeders.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check a case file")
    p.add_argument("case", type=Path)

    p = sub.add_parser("run", help="solve the 24-hour scenario and write CSV results")
    _add_inputs(p)
    p.add_argument("--out", type=Path, default=Path("results"))
    p.add_argument("--trace", action="store_true", help="also write per-iteration trace.csv")

    p = sub.add_parser("no-dg", help="same as run, with every DG unit removed")
    _add_inputs(p)
    p.add_argument("--out", type=Path, default=Path("results-no-dg"))
    p.add_argument("--trace", action="store_true")

    p = sub.add_parser("sweep-tech", help="daily retailer profit for each catalog technology")
    _add_inputs(p)
    p.add_argument("--out", type=Path, help="also write tech_sweep.csv here")

    p = sub.add_parser("sweep-beta", help="daily retailer profit over a range of elasticities")
    _add_inputs(p)
    p.add_argument("--range", dest="beta_range", default="-0.25:-0.01:25",
                   help="start:stop:steps, inclusive (default -0.25:-0.01:25)")
    p.add_argument("--out", type=Path, help="also write beta_sweep.csv here")
    return parser


def _overrides(args) -> dict:
    names = ["price_tol", "max_iters", "damping", "availability", "dg_pricing", "wholesale_at_spot",
             "price_cap_factor", "markup", "demand_floor", "voltage_penalty", "cost_scale"]
    return {k: getattr(args, k) for k in names if getattr(args, k, None) is not None}


def _load_inputs(args):
    case = load_case(args.case)
    scenario = load_scenario(args.scenario)
    overrides = _overrides(args)
    if overrides:
        scenario = scenario.with_options(**overrides)
        try:
            scenario.config
        except ValueError as exc:
            raise ScenarioError(f"options: {exc}") from None
    return case, scenario.bind(case.classes)


def parse_range(text: str) -> np.ndarray:
    try:
        start, stop, steps = text.split(":")
        start, stop, steps = float(start), float(stop), int(steps)
    except ValueError:
        raise UsageError(f"--range must be start:stop:steps, got {text!r}") from None
    if steps < 1:
        raise UsageError("--range needs at least one step")
    return np.linspace(start, stop, steps)


def _report_failures(results: DailyResults) -> bool:
    bad = False
    for hour, message in sorted(results.failures.items()):
        print(f"hour {hour}: failed: {message}", file=sys.stderr)
        bad = True
    for h in results.solved:
        if not h.converged:
            print(f"hour {h.hour}: not converged after {h.iterations} iterations "
                  f"(residual {h.residual:.3g})", file=sys.stderr)
            bad = True
    return bad


def _print_table(header, rows, out=None):
    out = out or sys.stdout
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    for row in [header, *rows]:
        print("  ".join(str(x).rjust(w) for x, w in zip(row, widths)), file=out)


def _summary_rows(results: DailyResults):
    profit, price = results.daily_profit(), results.mean_price()
    return [[c, f"{profit[c]:.6f}", f"{price[c]:.6f}"] for c in results.classes]


def cmd_validate(args) -> int:
    case = load_case(args.case)
    order = validate_radial(case)
    print(f"{args.case}: ok ({case.n_bus} buses, {len(order)} branches, "
          f"{len(case.dg_units)} DG units, classes {', '.join(case.classes)})")
    return EXIT_OK


def _run(args, disable_dg: bool) -> int:
    case, scenario = _load_inputs(args)
    case = case.without_dg() if disable_dg else scenario.apply_technology(case)
    results = solve_day(case, scenario, workers=args.workers)
    hourly, summary = export_results(results, args.out)
    if args.trace:
        export_trace(results, args.out)
    _print_table(["retailer", "daily_profit", "mean_price"], _summary_rows(results))
    print(f"wrote {hourly} and {summary}")
    return EXIT_SOLVER if _report_failures(results) else EXIT_OK


def cmd_run(args) -> int:
    return _run(args, disable_dg=False)


def cmd_no_dg(args) -> int:
    return _run(args, disable_dg=True)


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(x) for x in row) + "\n")


def cmd_sweep_tech(args) -> int:
    case, scenario = _load_inputs(args)
    catalog = scenario.catalog()
    header = ["technology", *case.classes, "total"]
    rows, failed = [], False
    for name in catalog:
        results = solve_day(case.with_technology(catalog[name]), scenario, workers=args.workers)
        failed |= _report_failures(results)
        profit = results.daily_profit()
        rows.append([name, *(f"{profit[c]:.6f}" for c in case.classes), f"{sum(profit.values()):.6f}"])
    _print_table(header, rows)
    if args.out:
        _write_csv(args.out / "tech_sweep.csv", header, rows)
    return EXIT_SOLVER if failed else EXIT_OK


def single_class_profit(beta: float, load_nominal: float = 100.0, price_nominal: float = 1.0,
                        spot: float = 0.9) -> float:
    """Closed-form optimal profit of one no-DG class, used as the analytic column of sweep-beta."""
    return solve_class(DemandModel(load_nominal, price_nominal, beta), SupplyTerms(spot)).profit


def cmd_sweep_beta(args) -> int:
    betas = parse_range(args.beta_range)
    case, scenario = _load_inputs(args)
    case = scenario.apply_technology(case)
    header = ["beta", *case.classes, "total", "single_class"]
    rows, failed = [], False
    for beta in betas:
        sc = replace(scenario, beta={c: float(beta) for c in case.classes})
        results = solve_day(case, sc, workers=args.workers)
        failed |= _report_failures(results)
        profit = results.daily_profit()
        rows.append([f"{beta:.6f}", *(f"{profit[c]:.6f}" for c in case.classes),
                     f"{sum(profit.values()):.6f}", f"{single_class_profit(float(beta)):.6f}"])
    _print_table(header, rows)
    if args.out:
        _write_csv(args.out / "beta_sweep.csv", header, rows)
    return EXIT_SOLVER if failed else EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "run": cmd_run,
    "no-dg": cmd_no_dg,
    "sweep-tech": cmd_sweep_tech,
    "sweep-beta": cmd_sweep_beta,
}


def _join_range(argv):
    # "--range -0.25:-0.01:25" would otherwise be read as an unknown option
    out, it = [], iter(argv)
    for tok in it:
        if tok == "--range":
            out.append(f"--range={next(it, '')}")
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    argv = _join_range(sys.argv[1:] if argv is None else list(argv))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"dgretail: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CaseFormatError, CaseValidationError, ScenarioError) as exc:
        print(f"dgretail: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"dgretail: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
