"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 invalid scenario or override,
3 solver failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from typing import Sequence

import numpy as np

from . import __version__
from .assignment import SolverError
from .equity import SmoothingSpec
from .optimizer import (
    DELTA_CONVENTION,
    evaluate_pipeline,
    maximize_mem,
    sweep_compliance,
    sweep_demand_scale,
    sweep_hierarchy_depth,
    sweep_weights,
)
from .scenario_io import (
    ResultBundle,
    Scenario,
    ScenarioError,
    Table,
    default_out_dir,
    generate_synthetic,
    load_scenario,
    mem_report_tables,
    write_results,
    write_scenario,
)

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2, 3

SWEEP_DEFAULTS = {
    "weight": None,
    "compliance": "0.5,0.6,0.7,0.8,0.9,1.0",
    "demand": "0.5,1,2,3,4,6",
    "hierarchy": "2,10,30,100",
}

OUTPUT_COLUMNS = """\
output files (all CSV files use '.' decimals and LF line endings):
  metadata.json   command, scenario path, effective configuration, every
                  CLI override, solver gap and convergence, conventions
  eval-mem, solve:
    mi.csv        node_id, population, kappa, mi
                  (one row per trip origin; mi is the mobility index)
    access.csv    node_id, mode, service_type, sigma, sigma_normalized
                  (services reachable within the mode threshold, raw and
                  divided by the maximum over nodes)
  solve:
    flows.csv     edge, tail, head, flow_<mode>_vph (compliant, per mode),
                  noncompliant_vph, total_vph, time_min
    od_times.csv  origin, destination, class, level, demand_vph, time_min
                  (class is a mode id or 'noncompliant'; level is NA for
                  compliant classes and for the Wardrop model)
  optimize:
    grid.csv      w_<mode> per mode, mem, delta_pv_min, feasible
  sweep:
    sweep.csv     first column is the swept parameter (w_public,
                  compliance_rate, demand_scale or hierarchy_depth), then
                  mem, delta_pv_min (compliant private minus non-compliant
                  mean time), mean_time_public_min,
                  mean_time_compliant_private_min, mean_time_noncompliant_min;
                  the hierarchy axis adds distance_to_wardrop_vph (largest
                  per-edge gap to Wardrop flow); the demand axis instead
                  reports demand_scale, total_demand_vph, improvement,
                  best_rate, mem_baseline, mem_optimized, w_<mode>
  gen:
    the six scenario CSV tables plus config.json

environment:
  MOBILITY_EQUITY_OUT   default for --out (fallback: ./results)
"""


_UNSET = object()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _lambda(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'inf', got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("lambda must be positive")
    return value


def _smoothing(text: str):
    if text.lower() == "exact":
        return None
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive number or 'exact', got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("k must be positive")
    return value


def _rate(text: str) -> float:
    value = float(text)
    if not 0 <= value <= 1:
        raise argparse.ArgumentTypeError("must be in [0, 1]")
    return value


def _add_scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", required=True, metavar="DIR", help="scenario directory")
    p.add_argument("--out", default=None, metavar="DIR", help="output directory (default: $MOBILITY_EQUITY_OUT or ./results)")
    g = p.add_argument_group("scenario overrides (recorded in metadata.json)")
    g.add_argument("--weights", metavar="W", help="mode weights, 'public=0.6,private=0.4' or positional '0.6,0.4' in modes.csv order")
    g.add_argument("--rho", type=_rate, metavar="R", help="compliance rate of private vehicles in [0, 1]")
    g.add_argument("--L", dest="depth", type=int, metavar="L", help="cognitive hierarchy depth (levels 0..L)")
    g.add_argument("--lambda", dest="lam", type=_lambda, metavar="X", help="upper bound on delta_pv in minutes, or 'inf'")
    g.add_argument("--k", dest="smoothing_k", type=_smoothing, default=_UNSET, metavar="K", help="sigmoid steepness per minute, or 'exact' for the step indicator")
    g.add_argument("--model", choices=("ch", "wardrop"), help="non-compliant driver model")
    g.add_argument("--tolerance", type=float, metavar="T", help="Frank-Wolfe relative gap target")
    g.add_argument("--max-iters", type=int, metavar="N", help="Frank-Wolfe iteration cap")
    g.add_argument("--rounds", type=int, metavar="K", help="compliant / non-compliant coupling rounds")
    g.add_argument("--public-share", type=_rate, metavar="S", help="re-split each trip's demand so this share uses the public mode")
    p.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes for grids and sweeps (default 1)")
    p.add_argument("--svg", action="store_true", help="also write SVG line charts for sweeps")
    p.add_argument("-v", "--verbose", action="store_true", help="log one line per evaluated point to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="mobility-equity",
        description="Evaluate and optimize mobility equity on multi-modal road networks.",
        epilog=OUTPUT_COLUMNS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    fmt = argparse.RawDescriptionHelpFormatter

    p = sub.add_parser("eval-mem", help="route the scenario once and report MEM", epilog=OUTPUT_COLUMNS, formatter_class=fmt)
    _add_scenario_flags(p)

    p = sub.add_parser("solve", help="route the scenario and export edge flows and trip times", epilog=OUTPUT_COLUMNS, formatter_class=fmt)
    _add_scenario_flags(p)

    p = sub.add_parser("optimize", help="grid search for MEM-maximizing mode weights", epilog=OUTPUT_COLUMNS, formatter_class=fmt)
    _add_scenario_flags(p)
    p.add_argument("--grid-res", type=int, default=21, metavar="R", help="points per weight axis on the simplex (default 21)")

    p = sub.add_parser("sweep", help="MEM over one parameter axis", epilog=OUTPUT_COLUMNS, formatter_class=fmt)
    _add_scenario_flags(p)
    p.add_argument("--axis", required=True, choices=("weight", "compliance", "demand", "hierarchy"), help="parameter to sweep")
    p.add_argument("--values", type=_float_list, metavar="V", help="comma-separated axis values; defaults: compliance "
                   f"{SWEEP_DEFAULTS['compliance']}, demand {SWEEP_DEFAULTS['demand']}, hierarchy {SWEEP_DEFAULTS['hierarchy']}")
    p.add_argument("--steps", type=int, default=11, metavar="N", help="public-weight points for --axis weight (default 11)")
    p.add_argument("--rates", type=_float_list, default=[0.6, 0.7, 0.8, 0.9], metavar="R", help="compliance rates searched per scale for --axis demand")
    p.add_argument("--grid-res", type=int, default=11, metavar="R", help="weight grid resolution for --axis demand (default 11)")

    p = sub.add_parser("gen", help="write a synthetic grid scenario", epilog=OUTPUT_COLUMNS, formatter_class=fmt)
    p.add_argument("--seed", type=int, default=1, help="random seed (default 1)")
    p.add_argument("--grid", type=int, default=4, metavar="N", help="grid side, N x N nodes (default 4)")
    p.add_argument("--demand-scale", type=float, default=1.0, metavar="X", help="multiplier on sampled trip demand (default 1)")
    p.add_argument("--public-share", type=_rate, default=0.3, metavar="S", help="public share of trip demand (default 0.3)")
    p.add_argument("--out", default=None, metavar="DIR", help="scenario directory to write (default: $MOBILITY_EQUITY_OUT or ./results)")
    return parser


def _parse_weights(text: str, scenario: Scenario) -> dict[str, float]:
    ids = [m.id for m in scenario.modes]
    parts = [p.strip() for p in text.split(",") if p.strip()]
    out = {}
    try:
        if all("=" in p for p in parts):
            for p in parts:
                key, value = p.split("=", 1)
                if key not in ids:
                    raise ScenarioError(f"unknown mode {key!r} in --weights", field="weights")
                out[key] = float(value)
        else:
            if len(parts) != len(ids):
                raise ScenarioError(f"--weights needs {len(ids)} values ({', '.join(ids)})", field="weights")
            out = dict(zip(ids, (float(p) for p in parts)))
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"bad --weights value {text!r}", field="weights") from None
    if any(v < 0 or not math.isfinite(v) for v in out.values()):
        raise ScenarioError("weights must be finite and non-negative", field="weights")
    return out


def apply_overrides(scenario: Scenario, args) -> tuple[Scenario, dict]:
    """Apply CLI overrides; return the new scenario and what was overridden."""
    used = {}
    changes = {}
    settings = {}
    if args.weights is not None:
        w = _parse_weights(args.weights, scenario)
        scenario = scenario.with_weights(w)
        used["weights"] = w
    if args.rho is not None:
        changes["compliance_rate"] = used["compliance_rate"] = args.rho
    if args.depth is not None:
        if args.depth < 0:
            raise ScenarioError("--L must be non-negative", field="hierarchy_depth")
        changes["hierarchy_depth"] = used["hierarchy_depth"] = args.depth
        if scenario.level_fractions is not None and len(scenario.level_fractions) != args.depth + 1:
            changes["level_fractions"] = None
            used["level_fractions"] = None
    if args.lam is not None:
        changes["lam"] = used["lambda"] = args.lam
    if args.smoothing_k is not _UNSET:
        changes["smoothing"] = SmoothingSpec(args.smoothing_k)
        used["smoothing_k"] = args.smoothing_k
    for flag, key in (("model", "noncompliant_model"), ("tolerance", "tolerance"), ("max_iters", "max_iters"), ("rounds", "rounds")):
        value = getattr(args, flag)
        if value is not None:
            settings[key] = used[key] = value
    if settings.get("tolerance") is not None and not settings["tolerance"] > 0:
        raise ScenarioError("--tolerance must be positive", field="tolerance")
    if settings.get("max_iters") is not None and settings["max_iters"] < 0:
        raise ScenarioError("--max-iters must be non-negative", field="max_iters")
    if settings.get("rounds") is not None and settings["rounds"] < 1:
        raise ScenarioError("--rounds must be at least 1", field="rounds")
    if settings:
        changes["settings"] = dataclasses.replace(scenario.settings, **settings)
    if changes:
        scenario = scenario.replace(**changes)
    if args.public_share is not None:
        try:
            scenario = scenario.with_public_share(args.public_share)
        except ValueError as exc:
            raise ScenarioError(str(exc), field="public_share") from None
        used["public_share"] = args.public_share
    return scenario, used


def _metadata(args, scenario: Scenario, overrides: dict) -> dict:
    return {
        "command": args.command,
        "version": __version__,
        "scenario": args.scenario,
        "overrides": overrides,
        "config": scenario.config_dict(),
        "weights": scenario.weights,
        "delta_pv_convention": DELTA_CONVENTION,
        "units": {"time": "minutes", "flow": "vehicles/hour", "cost": "dollars per passenger-mile"},
    }


def _fmt_delta(delta) -> str:
    return "NA" if delta is None else f"{delta:.6g}"


def _flows_table(scenario: Scenario, ev) -> Table:
    g = scenario.graph
    res = ev.equilibrium.compliant
    modes = [m.id for m in scenario.modes]
    per_mode = {m: np.zeros(g.n_edges) for m in modes}
    for c, row in zip(res.commodities, res.flows):
        per_mode[c.mode] = per_mode[c.mode] + row
    q = ev.equilibrium.noncompliant.q if ev.equilibrium.noncompliant is not None else np.zeros(g.n_edges)
    total = ev.equilibrium.total_flow
    times = g.edge_times(total)
    table = Table(("edge", "tail", "head") + tuple(f"flow_{m}_vph" for m in modes) + ("noncompliant_vph", "total_vph", "time_min"))
    for e, edge in enumerate(g.edges):
        table.rows.append((e, edge.tail, edge.head) + tuple(float(per_mode[m][e]) for m in modes) + (float(q[e]), float(total[e]), float(times[e])))
    return table


def _od_table(scenario: Scenario, ev) -> Table:
    trips = {}
    for t in scenario.trips:
        trips.setdefault((t.origin, t.destination), len(trips))
    od = {n: od_ for od_, n in trips.items()}
    t = ev.times
    table = Table(("origin", "destination", "class", "level", "demand_vph", "time_min"))
    for (mode, trip), value in sorted(t.compliant.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        o, d = od[trip]
        table.rows.append((o, d, mode, None, float(t.compliant_demand[(mode, trip)]), float(value)))
    for (level, trip), value in sorted(t.noncompliant.items(), key=lambda kv: (kv[0][1], -1 if kv[0][0] is None else kv[0][0])):
        o, d = od[trip]
        table.rows.append((o, d, "noncompliant", level, float(t.noncompliant_rate[(level, trip)]), float(value)))
    return table


def _evaluate(args, scenario, overrides, with_flows: bool):
    ev = evaluate_pipeline(scenario)
    meta = _metadata(args, scenario, overrides)
    meta.update(
        mem=ev.mem,
        delta_pv_min=ev.delta_pv,
        solver_gap=ev.equilibrium.compliant.gap,
        solver_converged=ev.equilibrium.compliant.converged,
        solver_iterations=ev.equilibrium.compliant.iterations,
        rounds=ev.equilibrium.rounds,
        round_changes=list(ev.equilibrium.changes),
        mean_times_min=ev.class_times,
    )
    tables = mem_report_tables(ev.report)
    if with_flows:
        tables["flows"] = _flows_table(scenario, ev)
        tables["od_times"] = _od_table(scenario, ev)
    write_results(ResultBundle(meta, tables), args.out)
    print(f"MEM={ev.mem:.6f} delta_pv={_fmt_delta(ev.delta_pv)} gap={ev.equilibrium.compliant.gap:.3g} -> {args.out}")


def _optimize(args, scenario, overrides):
    if args.grid_res < 2:
        raise ScenarioError("--grid-res must be at least 2", field="grid_res")
    result = maximize_mem(scenario, args.grid_res, jobs=args.jobs)
    best = evaluate_pipeline(scenario, result.best_weights)
    meta = _metadata(args, scenario, overrides)
    meta.update(
        grid_resolution=args.grid_res,
        best_weights=result.best_weights,
        best_mem=result.best_mem,
        best_delta_pv_min=result.best_delta,
        solver_gap=best.equilibrium.compliant.gap,
        tie_break="highest MEM, then smallest delta_pv, then lexicographically smallest weights",
    )
    write_results(ResultBundle(meta, {"grid": result.to_table()}), args.out)
    weights = " ".join(f"{k}={v:.4g}" for k, v in result.best_weights.items())
    print(f"best weights {weights} MEM={result.best_mem:.6f} delta_pv={_fmt_delta(result.best_delta)} gap={best.equilibrium.compliant.gap:.3g} -> {args.out}")


def _sweep(args, scenario, overrides):
    axis = args.axis
    if axis == "weight":
        table = sweep_weights(scenario, args.steps, jobs=args.jobs)
        chart = ("w_public", ["mem"])
    else:
        values = args.values if args.values is not None else _float_list(SWEEP_DEFAULTS[axis])
        if not values:
            raise ScenarioError("--values is empty", field="values")
        if axis == "compliance":
            table = sweep_compliance(scenario, values, jobs=args.jobs)
            chart = ("compliance_rate", ["mem"])
        elif axis == "demand":
            table = sweep_demand_scale(scenario, values, args.rates, resolution=args.grid_res, jobs=args.jobs)
            chart = ("demand_scale", ["improvement"])
        else:
            if any(v != int(v) for v in values):
                raise ScenarioError("hierarchy depths must be integers", field="values")
            table = sweep_hierarchy_depth(scenario, [int(v) for v in values], jobs=args.jobs)
            chart = ("hierarchy_depth", ["distance_to_wardrop_vph"])
    meta = _metadata(args, scenario, overrides)
    meta.update(axis=axis, values=[r[0] for r in table.rows])
    if axis == "weight":
        meta["steps"] = args.steps
    if axis == "demand":
        meta.update(rates=args.rates, grid_resolution=args.grid_res)
    write_results(ResultBundle(meta, {"sweep": table.to_table()}, {"sweep": chart}), args.out, svg=args.svg)
    y = table.column(chart[1][0])
    shown = ", ".join("NA" if v is None else f"{v:.4g}" for v in y)
    print(f"sweep {axis}: {chart[1][0]} = [{shown}] -> {args.out}")


def _gen(args):
    if args.grid < 2:
        raise ScenarioError("--grid must be at least 2", field="grid")
    if not args.demand_scale > 0:
        raise ScenarioError("--demand-scale must be positive", field="demand_scale")
    scenario = generate_synthetic(args.seed, args.grid, args.demand_scale, public_share=args.public_share)
    write_scenario(scenario, args.out)
    print(f"scenario seed={args.seed} grid={args.grid}: {scenario.graph.n_nodes} nodes, {scenario.graph.n_edges} edges, {len(scenario.trips)} trips -> {args.out}")


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(message)s", stream=sys.stderr)
    if args.out is None:
        args.out = default_out_dir()
    try:
        if args.command == "gen":
            _gen(args)
            return EXIT_OK
        if getattr(args, "jobs", 1) < 1:
            raise ScenarioError("--jobs must be at least 1", field="jobs")
        scenario = load_scenario(args.scenario)
        scenario, overrides = apply_overrides(scenario, args)
        if args.command in ("eval-mem", "solve"):
            _evaluate(args, scenario, overrides, with_flows=args.command == "solve")
        elif args.command == "optimize":
            _optimize(args, scenario, overrides)
        else:
            _sweep(args, scenario, overrides)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
