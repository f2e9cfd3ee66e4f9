"""Equity evaluation pipeline, weight optimization and parameter sweeps."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Iterable, Sequence

import numpy as np

from .assignment import (
    Commodity,
    DeltaUndefined,
    EquilibriumResult,
    NonCompliantDemand,
    ODTimes,
    SolverError,
    delta_pv,
    equilibrate,
    loaded_shortest_times,
    od_travel_times,
    solve_cognitive_hierarchy,
    solve_wardrop,
    uniform_levels,
)
from .equity import MemReport, count_accessible, mem, mobility_index, normalize_access
from .scenario_io import Scenario

log = logging.getLogger(__name__)

DELTA_CONVENTION = "demand-weighted mean over vehicles (compliant private minus non-compliant)"


class InfeasibleError(SolverError):
    def __init__(self, lam: float, min_delta: float | None):
        self.lam = lam
        self.min_delta = min_delta
        super().__init__(f"no grid point satisfies delta_pv <= {lam}; smallest delta_pv found: {min_delta}")


@dataclass
class Evaluation:
    report: MemReport
    delta_pv: float | None
    equilibrium: EquilibriumResult
    times: ODTimes
    commodities: tuple[Commodity, ...]
    noncompliant: tuple[NonCompliantDemand, ...]
    class_times: dict

    @property
    def mem(self) -> float:
        return self.report.mem

    def __iter__(self):
        # allows ``report, delta = evaluate_pipeline(...)``
        return iter((self.report, self.delta_pv))


def trip_index(scenario: Scenario) -> dict[tuple[int, int], int]:
    """Trip number of every origin-destination pair, in file order."""
    index: dict[tuple[int, int], int] = {}
    for t in scenario.trips:
        index.setdefault((t.origin, t.destination), len(index))
    return index


def build_demands(
    scenario: Scenario,
    compliance_rate: float | None = None,
    depth: int | None = None,
    fractions=None,
) -> tuple[tuple[Commodity, ...], tuple[NonCompliantDemand, ...]]:
    """Split trips into compliant commodities and leveled non-compliant demand.

    Always-compliant modes keep their whole demand.  A splittable-private
    mode sends ``rho`` of its demand as compliant and the rest, scaled by its
    occupancy, as non-compliant vehicles.
    """
    rho = scenario.compliance_rate if compliance_rate is None else compliance_rate
    if depth is None:
        depth = scenario.hierarchy_depth
        if fractions is None:
            fractions = scenario.level_fractions
    if not 0 <= rho <= 1:
        raise ValueError("compliance rate must be in [0, 1]")
    index = trip_index(scenario)
    commodities = []
    nc_rate: dict[int, float] = {}
    for t in scenario.trips:
        mode = scenario.mode(t.mode)
        n = index[(t.origin, t.destination)]
        compliant = rho * t.demand if mode.is_private else t.demand
        if compliant > 0:
            commodities.append(Commodity(n, t.origin, t.destination, mode.id, compliant, mode.occupancy, mode.is_private))
        if mode.is_private and rho < 1:
            nc_rate[n] = nc_rate.get(n, 0.0) + (1 - rho) * t.demand * mode.occupancy
    ends = {n: od for od, n in index.items()}
    noncompliant = []
    for n in sorted(nc_rate):
        o, d = ends[n]
        noncompliant.extend(uniform_levels(n, o, d, nc_rate[n], depth, fractions))
    return tuple(commodities), tuple(noncompliant)


def accessibility_times(scenario: Scenario, eq: EquilibriumResult, times: ODTimes, index=None) -> dict:
    """Average travel time per ``(origin, mode, destination)``.

    Uses the vehicles actually assigned to that trip and mode (compliant and,
    for private modes, non-compliant).  Pairs with no assigned vehicles fall
    back to the loaded shortest-path time.
    """
    index = index or trip_index(scenario)
    origins = sorted({o for o, _ in index})
    dests = scenario.catalog.destinations
    shortest = loaded_shortest_times(scenario.graph, eq.total_flow, origins)
    nc_by_trip: dict[int, list[tuple[float, float]]] = {}
    for (level, trip), t in times.noncompliant.items():
        nc_by_trip.setdefault(trip, []).append((times.noncompliant_rate[(level, trip)], t))
    out = {}
    for o, mode, d in product(origins, scenario.modes, dests):
        parts = []
        n = index.get((o, d))
        if n is not None:
            if (mode.id, n) in times.compliant:
                parts.append((times.compliant_demand[(mode.id, n)], times.compliant[(mode.id, n)]))
            if mode.is_private:
                parts.extend(nc_by_trip.get(n, []))
        total = sum(w for w, _ in parts)
        if total > 0:
            out[(o, mode.id, d)] = sum(w * t for w, t in parts) / total
        else:
            out[(o, mode.id, d)] = 0.0 if o == d else shortest[o][d]
    return out


def _class_times(scenario: Scenario, times: ODTimes, commodities) -> dict:
    sums = {"public": [0.0, 0.0], "compliant_private": [0.0, 0.0], "noncompliant": [0.0, 0.0]}
    for c in commodities:
        key = "compliant_private" if c.private else "public"
        sums[key][0] += c.demand * times.compliant[(c.mode, c.trip)]
        sums[key][1] += c.demand
    for key, t in times.noncompliant.items():
        r = times.noncompliant_rate[key]
        sums["noncompliant"][0] += r * t
        sums["noncompliant"][1] += r
    return {k: (v[0] / v[1] if v[1] > 0 else None) for k, v in sums.items()}


def evaluate_pipeline(
    scenario: Scenario,
    weights=None,
    *,
    compliance_rate: float | None = None,
    depth: int | None = None,
    model: str | None = None,
) -> Evaluation:
    """Route, time, count accessible services and score equity.

    MI is evaluated at trip origins only.  ``delta_pv`` is ``None`` when one
    of the two private classes is empty.
    """
    if weights is not None:
        scenario = scenario.with_weights(weights)
    w = scenario.weights
    s = scenario.settings
    model = model or s.noncompliant_model
    commodities, noncompliant = build_demands(scenario, compliance_rate, depth)
    eq = equilibrate(
        scenario.graph,
        commodities,
        w,
        noncompliant,
        rounds=s.rounds,
        tolerance=s.round_tolerance,
        model=model,
        solver_tolerance=s.tolerance,
        max_iters=s.max_iters,
        line_search_tol=s.line_search_tol,
    )
    times = od_travel_times(scenario.graph, eq.compliant, eq.noncompliant)
    index = trip_index(scenario)
    tt = accessibility_times(scenario, eq, times, index)
    origins = sorted({o for o, _ in index})
    access = count_accessible(tt, scenario.catalog, scenario.modes, scenario.smoothing, origins, [x.id for x in scenario.services])
    normalized = normalize_access(access)
    profiles = [scenario.profile(o) for o in origins]
    mi = np.array([mobility_index(p, normalized.values[i], scenario.modes, scenario.services) for i, p in enumerate(profiles)])
    pops = np.array([p.population for p in profiles])
    kappas = np.array([p.kappa for p in profiles])
    value = mem(mi, pops)
    try:
        delta = delta_pv(times, commodities, noncompliant)
    except DeltaUndefined:
        delta = None
    report = MemReport(
        origins=tuple(origins),
        mi=mi,
        populations=pops,
        kappas=kappas,
        mem=value,
        access=access,
        normalized=normalized,
        metadata={
            "weights": w,
            "smoothing_k": scenario.smoothing.k,
            "kappa_base": scenario.kappa_base,
            "kappa_cap": scenario.kappa_cap,
            "kappa_scale": scenario.kappa_scale,
            "compliance_rate": scenario.compliance_rate if compliance_rate is None else compliance_rate,
            "hierarchy_depth": scenario.hierarchy_depth if depth is None else depth,
            "noncompliant_model": model,
            "delta_pv_convention": DELTA_CONVENTION,
            "solver_gap": eq.compliant.gap,
            "solver_converged": eq.compliant.converged,
            "rounds": eq.rounds,
            "round_changes": list(eq.changes),
        },
    )
    return Evaluation(report, delta, eq, times, commodities, noncompliant, _class_times(scenario, times, commodities))


# --------------------------------------------------------------------------- grid search


@dataclass(frozen=True)
class WeightGrid:
    """Points ``k / (resolution - 1)`` on the unit simplex over modes."""

    n_modes: int
    resolution: int = 21

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("grid resolution must be at least 2")
        if self.n_modes < 1:
            raise ValueError("need at least one mode")

    def points(self) -> list[tuple[float, ...]]:
        r = self.resolution - 1
        pts = []
        for ks in product(range(r + 1), repeat=self.n_modes - 1):
            if sum(ks) <= r:
                pts.append(tuple(k / r for k in ks) + ((r - sum(ks)) / r,))
        return sorted(pts)


@dataclass
class OptimizationResult:
    mode_ids: tuple[str, ...]
    best_weights: dict
    best_mem: float
    best_delta: float | None
    table: list  # (weights tuple, mem, delta, feasible)

    def to_table(self):
        from .scenario_io import Table

        t = Table(tuple(f"w_{m}" for m in self.mode_ids) + ("mem", "delta_pv_min", "feasible"))
        for weights, value, delta, feasible in self.table:
            t.rows.append(tuple(weights) + (value, delta, feasible))
        return t


def _evaluate_point(args):
    scenario, weights, rate, depth, model = args
    ev = evaluate_pipeline(scenario, weights, compliance_rate=rate, depth=depth, model=model)
    return ev.mem, ev.delta_pv, ev.class_times, ev.equilibrium.compliant.gap


def parallel_map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """Order-preserving map, optionally over a process pool."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _select_best(mode_ids, rows, lam) -> OptimizationResult:
    table = []
    for weights, value, delta in rows:
        feasible = delta is None or delta <= lam
        table.append((weights, value, delta, feasible))
    feasible_rows = [r for r in table if r[3]]
    if not feasible_rows:
        deltas = [r[2] for r in table if r[2] is not None]
        raise InfeasibleError(lam, min(deltas) if deltas else None)
    best = min(feasible_rows, key=lambda r: (-r[1], r[2] if r[2] is not None else 0.0, r[0]))
    return OptimizationResult(tuple(mode_ids), dict(zip(mode_ids, best[0])), best[1], best[2], table)


def maximize_mem(
    scenario: Scenario,
    grid: WeightGrid | int = 21,
    lam: float | None = None,
    *,
    jobs: int = 1,
    compliance_rate: float | None = None,
    points: Sequence[tuple[float, ...]] | None = None,
) -> OptimizationResult:
    """Grid search for the mode weights with the highest feasible MEM.

    A point is feasible when ``delta_pv <= lam`` or when delta is not
    applicable.  Ties go to the smaller delta, then to the lexicographically
    smaller weight vector.
    """
    lam = scenario.lam if lam is None else lam
    if not lam > 0:
        raise ValueError("lambda must be positive")
    mode_ids = tuple(m.id for m in scenario.modes)
    if points is None:
        if isinstance(grid, int):
            grid = WeightGrid(len(mode_ids), grid)
        points = grid.points()
    jobs_args = [(scenario, dict(zip(mode_ids, p)), compliance_rate, None, None) for p in points]
    results = parallel_map(_evaluate_point, jobs_args, jobs)
    rows = [(tuple(p), r[0], r[1]) for p, r in zip(points, results)]
    return _select_best(mode_ids, rows, lam)


# --------------------------------------------------------------------------- sweeps

BASE_COLUMNS = (
    "mem",
    "delta_pv_min",
    "mean_time_public_min",
    "mean_time_compliant_private_min",
    "mean_time_noncompliant_min",
)


@dataclass
class SweepTable:
    parameter: str
    columns: tuple[str, ...]
    rows: list = field(default_factory=list)

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def to_table(self):
        from .scenario_io import Table

        return Table(self.columns, list(self.rows))


def _increasing(values: Iterable[float], name: str) -> list[float]:
    values = [float(v) for v in values]
    if len(set(values)) != len(values):
        raise ValueError(f"duplicate {name} values")
    if values != sorted(values):
        raise ValueError(f"{name} values must be strictly increasing")
    return values


def _base_row(param, mem_value, delta, ct):
    return (param, mem_value, delta, ct["public"], ct["compliant_private"], ct["noncompliant"])


def sweep_weights(scenario: Scenario, steps: int = 11, *, jobs: int = 1, compliance_rate: float | None = None) -> SweepTable:
    """MEM and delta over the public-transport weight, private = 1 - public."""
    if steps < 2:
        raise ValueError("steps must be at least 2")
    public, private = scenario.public_private_modes()
    ws = [k / (steps - 1) for k in range(steps)]
    args = [(scenario, {public.id: w, private.id: 1.0 - w}, compliance_rate, None, None) for w in ws]
    results = parallel_map(_evaluate_point, args, jobs)
    table = SweepTable("w_public", ("w_public",) + BASE_COLUMNS)
    for w, (value, delta, ct, _gap) in zip(ws, results):
        table.rows.append(_base_row(w, value, delta, ct))
        log.info("w_public=%.3f mem=%.6f delta_pv=%s", w, value, delta)
    return table


def sweep_compliance(scenario: Scenario, rates: Sequence[float], *, jobs: int = 1) -> SweepTable:
    """MEM and delta per compliance rate at the scenario's weights."""
    rates = _increasing(rates, "compliance rate")
    if any(not 0 <= r <= 1 for r in rates):
        raise ValueError("compliance rates must be in [0, 1]")
    args = [(scenario, None, r, None, None) for r in rates]
    results = parallel_map(_evaluate_point, args, jobs)
    table = SweepTable("compliance_rate", ("compliance_rate",) + BASE_COLUMNS)
    for r, (value, delta, ct, _gap) in zip(rates, results):
        table.rows.append(_base_row(r, value, delta, ct))
        log.info("rho=%.3f mem=%.6f delta_pv=%s", r, value, delta)
    return table


def sweep_demand_scale(
    scenario: Scenario,
    scales: Sequence[float],
    rates: Sequence[float] = (0.6, 0.7, 0.8, 0.9),
    *,
    resolution: int = 11,
    jobs: int = 1,
) -> SweepTable:
    """Largest MEM gain of optimized over equal weights, per demand scale.

    For each scale the gain is the maximum over compliance rates of the
    feasible grid-optimal MEM minus the MEM at equal weights.
    """
    scales = _increasing(scales, "demand scale")
    if any(not s > 0 for s in scales):
        raise ValueError("demand scales must be positive")
    rates = [float(r) for r in rates]
    if not rates or any(not 0 <= r <= 1 for r in rates):
        raise ValueError("compliance rates must be in [0, 1]")
    mode_ids = tuple(m.id for m in scenario.modes)
    points = WeightGrid(len(mode_ids), resolution).points()
    equal = tuple([1.0 / len(mode_ids)] * len(mode_ids))
    if equal not in points:
        points = sorted(points + [equal])
    scaled = [scenario.scaled_demand(s) for s in scales]
    args = [(sc, dict(zip(mode_ids, p)), r, None, None) for sc in scaled for r in rates for p in points]
    results = iter(parallel_map(_evaluate_point, args, jobs))
    table = SweepTable(
        "demand_scale",
        ("demand_scale", "total_demand_vph", "improvement", "best_rate", "mem_baseline", "mem_optimized") + tuple(f"w_{m}" for m in mode_ids),
    )
    for s, sc in zip(scales, scaled):
        best = None
        for r in rates:
            rows = []
            for p in points:
                value, delta, _ct, _gap = next(results)
                rows.append((p, value, delta))
            base = next(v for p, v, _ in rows if p == equal)
            try:
                opt = _select_best(mode_ids, rows, scenario.lam)
            except InfeasibleError:
                continue
            gain = opt.best_mem - base
            if best is None or gain > best[0]:
                best = (gain, r, base, opt.best_mem, tuple(opt.best_weights[m] for m in mode_ids))
        total = sum(t.demand for t in sc.trips)
        if best is None:
            table.rows.append((s, total, None, None, None, None) + (None,) * len(mode_ids))
        else:
            table.rows.append((s, total, best[0], best[1], best[2], best[3]) + best[4])
        log.info("scale=%.3f improvement=%s", s, None if best is None else best[0])
    return table


def _hierarchy_point(args):
    scenario, depth, tol, iters = args
    ev = evaluate_pipeline(scenario, depth=depth, model="ch")
    x = ev.equilibrium.compliant.x
    wardrop = solve_wardrop(scenario.graph, ev.noncompliant, x, tol, iters, scenario.settings.line_search_tol)
    distance = float(np.max(np.abs(ev.equilibrium.noncompliant.q - wardrop.q), initial=0.0))
    return ev.mem, ev.delta_pv, ev.class_times, distance


def sweep_hierarchy_depth(
    scenario: Scenario,
    depths: Sequence[int],
    *,
    jobs: int = 1,
    wardrop_tolerance: float = 1e-6,
    wardrop_max_iters: int = 5000,
) -> SweepTable:
    """MEM per hierarchy depth plus the largest per-edge gap to Wardrop flow.

    The Wardrop reference uses the same compliant flow as the hierarchy run.
    """
    depths = [int(d) for d in _increasing(depths, "depth")]
    if any(d < 0 for d in depths):
        raise ValueError("depths must be non-negative")
    args = [(scenario, d, wardrop_tolerance, wardrop_max_iters) for d in depths]
    results = parallel_map(_hierarchy_point, args, jobs)
    table = SweepTable("hierarchy_depth", ("hierarchy_depth",) + BASE_COLUMNS + ("distance_to_wardrop_vph",))
    for d, (value, delta, ct, dist) in zip(depths, results):
        table.rows.append(_base_row(d, value, delta, ct) + (dist,))
        log.info("depth=%d mem=%.6f distance=%.4f", d, value, dist)
    return table


def wardrop_distance(scenario: Scenario, depth: int, compliant_x, tolerance: float = 1e-6, max_iters: int = 5000) -> float:
    """Largest per-edge gap between hierarchy and Wardrop non-compliant flow
    over a fixed compliant flow."""
    _, noncompliant = build_demands(scenario, depth=depth, fractions=None)
    ch = solve_cognitive_hierarchy(scenario.graph, compliant_x, noncompliant)
    wardrop = solve_wardrop(scenario.graph, noncompliant, compliant_x, tolerance, max_iters, scenario.settings.line_search_tol)
    return float(np.max(np.abs(ch.q - wardrop.q), initial=0.0))
