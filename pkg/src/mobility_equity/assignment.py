"""Traffic-flow solvers for compliant and non-compliant vehicles.

* ``solve_system_centric`` routes compliant commodities to minimize the
  mode-weighted total travel time (Frank-Wolfe with exact BPR).
* ``solve_cognitive_hierarchy`` routes level-``l`` non-compliant drivers on
  shortest paths given the compliant flow and the flow of all lower levels.
* ``solve_wardrop`` computes the user equilibrium of non-compliant drivers
  on top of a fixed compliant flow, for comparison.
* ``equilibrate`` alternates the compliant and non-compliant solvers.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .graph import UNREACHABLE, Graph, _dijkstra, validate_connectivity

DEFAULT_TOLERANCE = 1e-4
DEFAULT_MAX_ITERS = 500
LINE_SEARCH_TOL = 1e-8
WEIGHT_FLOOR = 1e-3
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class SolverError(RuntimeError):
    """A routing problem could not be solved."""


class DisconnectedTripError(SolverError):
    def __init__(self, trips):
        self.trips = list(trips)
        super().__init__(f"no path for trips (origin, destination): {self.trips}")


class DeltaUndefined(ValueError):
    """Travel-time gap requested with an empty vehicle class."""


@dataclass(frozen=True)
class Commodity:
    trip: int
    origin: int
    destination: int
    mode: str
    demand: float
    occupancy: float = 1.0
    private: bool = False

    def __post_init__(self):
        if self.origin == self.destination:
            raise ValueError(f"commodity for trip {self.trip}: origin equals destination")
        if not self.demand > 0:
            raise ValueError(f"commodity for trip {self.trip}: demand must be positive")


@dataclass(frozen=True)
class NonCompliantDemand:
    trip: int
    origin: int
    destination: int
    level: int
    rate: float

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("level must be non-negative")
        if self.rate < 0:
            raise ValueError("non-compliant rate must be non-negative")


@dataclass
class AssignmentResult:
    """Compliant flows ``flows[k, e]`` for commodity ``k`` on edge ``e``."""

    commodities: tuple[Commodity, ...]
    flows: np.ndarray
    background: np.ndarray
    weights: dict
    objective: float
    iterations: int
    gap: float
    converged: bool
    objective_history: list = field(default_factory=list, repr=False)

    @property
    def occupancy(self) -> np.ndarray:
        return np.array([c.occupancy for c in self.commodities], dtype=float)

    @property
    def x(self) -> np.ndarray:
        """Aggregate occupancy-weighted compliant flow per edge."""
        if not self.commodities:
            return np.zeros_like(self.background)
        return self.occupancy @ self.flows


@dataclass
class NonCompliantFlows:
    """Non-compliant flow from either the hierarchy or the Wardrop model.

    For the hierarchy, ``paths[(level, trip)]`` is the single route shared by
    all drivers of that level and trip and ``level_q[l]`` the per-edge flow of
    level ``l``.  For Wardrop, ``trip_flows[trip]`` is the per-edge flow of
    each trip.
    """

    model: str
    demands: tuple[NonCompliantDemand, ...]
    q: np.ndarray
    background: np.ndarray
    level_q: np.ndarray | None = None
    paths: dict = field(default_factory=dict)
    trip_flows: dict = field(default_factory=dict)
    iterations: int = 0
    gap: float = 0.0
    converged: bool = True


@dataclass
class ODTimes:
    """Average travel times per compliant ``(mode, trip)`` and non-compliant
    ``(level, trip)``.  Wardrop results use ``level=None``."""

    compliant: dict
    compliant_demand: dict
    noncompliant: dict
    noncompliant_rate: dict


@dataclass
class EquilibriumResult:
    compliant: AssignmentResult
    noncompliant: NonCompliantFlows
    changes: list
    rounds: int

    @property
    def total_flow(self) -> np.ndarray:
        return self.compliant.x + self.noncompliant.q


def _golden_section(phi: Callable[[float], float], lo: float, hi: float, tol: float) -> float:
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = phi(c), phi(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = phi(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = phi(d)
    return 0.5 * (a + b)


def _line_search(phi, tol):
    # keeps the iterate sequence monotone even if the restriction is not convex
    s = _golden_section(phi, 0.0, 1.0, tol)
    best = min((phi(0.0), 0.0), (phi(s), s), (phi(1.0), 1.0))
    return best[1]


def _group_by_origin(items, key):
    groups = defaultdict(list)
    for k, item in enumerate(items):
        groups[key(item)].append(k)
    return dict(sorted(groups.items(), key=lambda kv: str(kv[0])))


def _load_paths(graph, adjacency, groups, items, costs_for, n_edges):
    """All-or-nothing assignment; ``costs_for(group_key)`` gives edge costs."""
    y = np.zeros((len(items), n_edges))
    tails = graph.tails
    for key, members in groups.items():
        origin = items[members[0]].origin
        _, pred = _dijkstra(adjacency, costs_for(key), origin)
        for k in members:
            node = items[k].destination
            e = pred[node]
            row = y[k]
            amount = _demand_of(items[k])
            while e >= 0:
                row[e] += amount
                e = pred[tails[e]]
    return y


def _demand_of(item):
    return item.demand if isinstance(item, Commodity) else item.rate


def _check_connected(graph, pairs):
    bad = validate_connectivity(graph, sorted(set(pairs)))
    if bad:
        raise DisconnectedTripError(bad)


def _edge_vector(graph, values, name):
    if values is None:
        return np.zeros(graph.n_edges)
    arr = np.asarray(values, dtype=float)
    if arr.shape != (graph.n_edges,):
        raise ValueError(f"{name} must have one entry per edge")
    if np.any(arr < 0):
        raise ValueError(f"{name} must be non-negative")
    return arr.copy()


def effective_weights(weights, modes=None) -> dict[str, float]:
    """Weights used by the solver: zero weights are raised to
    ``WEIGHT_FLOOR`` times the largest weight.

    With a zero weight the mode's routes are not unique (any path avoiding
    other modes' flow is optimal); the floor selects the optimum that is also
    quick for that mode.
    """
    modes = list(weights) if modes is None else modes
    top = max(float(weights[m]) for m in modes)
    return {m: max(float(weights[m]), WEIGHT_FLOOR * top) for m in modes}


def system_objective(graph: Graph, commodities, flows, weights, background) -> float:
    """Mode-weighted total travel time of the compliant flows."""
    if not commodities:
        return 0.0
    h = np.array([c.occupancy for c in commodities])
    w = np.array([weights[c.mode] for c in commodities])
    times = graph.edge_times(h @ flows + background)
    return float(times @ (w @ flows))


def solve_system_centric(
    graph: Graph,
    commodities: Sequence[Commodity],
    weights: Mapping[str, float],
    background_q=None,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iters: int = DEFAULT_MAX_ITERS,
    line_search_tol: float = LINE_SEARCH_TOL,
    initial: np.ndarray | None = None,
) -> AssignmentResult:
    """Route compliant commodities to minimize weighted total travel time.

    Frank-Wolfe on ``sum_m w_m sum_n sum_e t_e(x_e + q_e) x_e[m, n]`` where
    ``x_e`` is the occupancy-weighted compliant flow.  The marginal edge cost
    for mode ``m`` is ``w_m t_e + h_m t'_e S_e`` with ``S_e`` the weighted
    compliant flow.  Stops when the relative duality gap drops below
    ``tolerance``; otherwise the result is flagged ``converged=False``.
    """
    commodities = tuple(commodities)
    q = _edge_vector(graph, background_q, "background_q")
    modes = sorted({c.mode for c in commodities})
    missing = [m for m in modes if m not in weights]
    if missing:
        raise ValueError(f"no weight for modes {missing}")
    if any(weights[m] < 0 for m in modes):
        raise ValueError("weights must be non-negative")
    if commodities and not any(weights[m] > 0 for m in modes):
        raise ValueError("at least one mode weight must be positive")
    E = graph.n_edges
    if not commodities:
        return AssignmentResult((), np.zeros((0, E)), q, dict(weights), 0.0, 0, 0.0, True, [0.0])
    _check_connected(graph, [(c.origin, c.destination) for c in commodities])

    eff = effective_weights(weights, modes)
    h = np.array([c.occupancy for c in commodities])
    w = np.array([eff[c.mode] for c in commodities])
    mode_hw = {m: (next(c.occupancy for c in commodities if c.mode == m), eff[m]) for m in modes}
    groups = _group_by_origin(commodities, lambda c: (c.mode, c.origin))
    adjacency = graph.adjacency

    if initial is not None:
        flows = np.array(initial, dtype=float)
        if flows.shape != (len(commodities), E):
            raise ValueError("initial flows have the wrong shape")
    else:
        base = graph.edge_times(q).tolist()
        flows = _load_paths(graph, adjacency, groups, commodities, lambda key: base, E)

    history = []
    gap = math.inf
    converged = False
    it = 0
    while True:
        X = h @ flows
        S = w @ flows
        total = X + q
        T = graph.edge_times(total)
        dT = graph.edge_time_derivatives(total)
        history.append(float(T @ S))
        cost = {m: (wm * T + hm * dT * S) for m, (hm, wm) in mode_hw.items()}
        cost_lists = {m: v.tolist() for m, v in cost.items()}
        y = _load_paths(graph, adjacency, groups, commodities, lambda key: cost_lists[key[0]], E)
        G = np.stack([cost[c.mode] for c in commodities])
        current = float(np.sum(G * flows))
        gap = float(np.sum(G * (flows - y))) / current if current > 0 else 0.0
        gap = max(gap, 0.0)
        if gap < tolerance:
            converged = True
            break
        if it >= max_iters:
            break
        d = y - flows
        Xd, Sd = h @ d, w @ d

        def phi(s, X=X, S=S, Xd=Xd, Sd=Sd):
            return float(graph.edge_times(X + s * Xd + q) @ (S + s * Sd))

        step = _line_search(phi, line_search_tol)
        if step == 0.0:
            break
        flows = flows + step * d
        np.maximum(flows, 0.0, out=flows)
        it += 1

    return AssignmentResult(
        commodities=commodities,
        flows=flows,
        background=q,
        weights=dict(weights),
        objective=history[-1],
        iterations=it,
        gap=gap,
        converged=converged,
        objective_history=history,
    )


def _validate_levels(demands):
    if not demands:
        return 0
    levels = sorted({d.level for d in demands})
    return levels[-1]


def solve_cognitive_hierarchy(
    graph: Graph,
    compliant_x,
    demands: Sequence[NonCompliantDemand],
) -> NonCompliantFlows:
    """Level-by-level shortest-path routing of non-compliant drivers.

    Level ``l`` sees edge times ``t(x + sum_{j<l} q_j)`` and sends its whole
    rate for each trip along a single shortest path.
    """
    demands = tuple(demands)
    x = _edge_vector(graph, compliant_x, "compliant_x")
    E = graph.n_edges
    top = _validate_levels(demands)
    level_q = np.zeros((top + 1, E))
    if not demands:
        return NonCompliantFlows("ch", demands, np.zeros(E), x, level_q)
    _check_connected(graph, [(d.origin, d.destination) for d in demands])
    by_level = defaultdict(list)
    for d in demands:
        by_level[d.level].append(d)
    paths = {}
    lower = np.zeros(E)
    tails = graph.tails
    for level in range(top + 1):
        times = graph.edge_times(x + lower).tolist()
        trees = {}
        for d in sorted(by_level.get(level, []), key=lambda d: (d.trip, d.origin)):
            if d.origin not in trees:
                trees[d.origin] = _dijkstra(graph.adjacency, times, d.origin)[1]
            pred = trees[d.origin]
            route = []
            e = pred[d.destination]
            while e >= 0:
                route.append(e)
                e = pred[tails[e]]
            route.reverse()
            key = (level, d.trip)
            if key in paths and paths[key] != tuple(route):
                raise ValueError(f"duplicate non-compliant demand for level {level}, trip {d.trip}")
            paths[key] = tuple(route)
            level_q[level, route] += d.rate
        lower = lower + level_q[level]
    return NonCompliantFlows("ch", demands, level_q.sum(axis=0), x, level_q=level_q, paths=paths)


def aggregate_trip_rates(demands: Sequence[NonCompliantDemand]) -> list[NonCompliantDemand]:
    """Collapse per-level demands into one level-0 record per trip."""
    totals: dict[int, list] = {}
    for d in demands:
        if d.trip in totals:
            prev = totals[d.trip]
            if (prev[0], prev[1]) != (d.origin, d.destination):
                raise ValueError(f"trip {d.trip} has inconsistent endpoints")
            prev[2] += d.rate
        else:
            totals[d.trip] = [d.origin, d.destination, d.rate]
    return [NonCompliantDemand(t, o, dd, 0, r) for t, (o, dd, r) in sorted(totals.items()) if r > 0]


def solve_wardrop(
    graph: Graph,
    demands: Sequence[NonCompliantDemand],
    background_x=None,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iters: int = DEFAULT_MAX_ITERS,
    line_search_tol: float = LINE_SEARCH_TOL,
) -> NonCompliantFlows:
    """User equilibrium of non-compliant trips over a fixed compliant flow.

    Minimizes ``sum_e [B_e(x_e + q_e) - B_e(x_e)]`` with ``B`` the BPR
    integral, by Frank-Wolfe.
    """
    demands = tuple(demands)
    x = _edge_vector(graph, background_x, "background_x")
    E = graph.n_edges
    trips = aggregate_trip_rates(demands)
    if not trips:
        return NonCompliantFlows("wardrop", demands, np.zeros(E), x)
    _check_connected(graph, [(d.origin, d.destination) for d in trips])
    groups = _group_by_origin(trips, lambda d: d.origin)
    adjacency = graph.adjacency
    base_potential = graph.edge_integrals(x)

    flows = _load_paths(graph, adjacency, groups, trips, lambda key: graph.edge_times(x).tolist(), E)
    gap = math.inf
    converged = False
    it = 0
    while True:
        Q = flows.sum(axis=0)
        T = graph.edge_times(x + Q)
        times = T.tolist()
        y = _load_paths(graph, adjacency, groups, trips, lambda key: times, E)
        current = float(T @ Q)
        gap = max(float(T @ (Q - y.sum(axis=0))) / current, 0.0) if current > 0 else 0.0
        if gap < tolerance:
            converged = True
            break
        if it >= max_iters:
            break
        d = y - flows
        Qd = d.sum(axis=0)

        def phi(s, Q=Q, Qd=Qd):
            return float(np.sum(graph.edge_integrals(np.maximum(x + Q + s * Qd, 0.0)) - base_potential))

        step = _line_search(phi, line_search_tol)
        if step == 0.0:
            break
        flows = flows + step * d
        np.maximum(flows, 0.0, out=flows)
        it += 1

    trip_flows = {d.trip: flows[k] for k, d in enumerate(trips)}
    return NonCompliantFlows(
        "wardrop",
        demands,
        flows.sum(axis=0),
        x,
        trip_flows=trip_flows,
        iterations=it,
        gap=gap,
        converged=converged,
    )


def equilibrate(
    graph: Graph,
    commodities: Sequence[Commodity],
    weights: Mapping[str, float],
    noncompliant_demands: Sequence[NonCompliantDemand],
    rounds: int = 2,
    tolerance: float = 1e-3,
    model: str = "ch",
    solver_tolerance: float = DEFAULT_TOLERANCE,
    max_iters: int = DEFAULT_MAX_ITERS,
    line_search_tol: float = LINE_SEARCH_TOL,
) -> EquilibriumResult:
    """Alternate compliant and non-compliant routing.

    Round 1 routes compliant vehicles with no non-compliant flow; each later
    round re-routes them against the previous non-compliant flow.  Stops
    after ``rounds`` rounds or once the largest per-edge change of either
    aggregate flow falls below ``tolerance``.  ``changes`` holds that change
    for every round after the first.
    """
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    if model not in ("ch", "wardrop"):
        raise ValueError(f"unknown non-compliant model {model!r}")
    commodities = tuple(commodities)
    q = np.zeros(graph.n_edges)
    prev_x = prev_q = None
    compliant = noncompliant = None
    changes = []
    done = 0
    for _ in range(rounds):
        compliant = solve_system_centric(
            graph,
            commodities,
            weights,
            q,
            tolerance=solver_tolerance,
            max_iters=max_iters,
            line_search_tol=line_search_tol,
            initial=None if compliant is None else compliant.flows,
        )
        x = compliant.x
        if model == "ch":
            noncompliant = solve_cognitive_hierarchy(graph, x, noncompliant_demands)
        else:
            noncompliant = solve_wardrop(
                graph, noncompliant_demands, x, solver_tolerance, max_iters, line_search_tol
            )
        q = noncompliant.q
        done += 1
        if prev_x is not None:
            change = float(max(np.max(np.abs(x - prev_x), initial=0.0), np.max(np.abs(q - prev_q), initial=0.0)))
            changes.append(change)
            if change < tolerance:
                break
        prev_x, prev_q = x, q
    return EquilibriumResult(compliant, noncompliant, changes, done)


def od_travel_times(graph: Graph, compliant: AssignmentResult, noncompliant: NonCompliantFlows | None = None) -> ODTimes:
    """Average travel times under the final combined loading.

    Compliant commodities get the flow-weighted mean ``sum_e t_e x_e[k] /
    demand``; hierarchy levels get the time of their single route; Wardrop
    trips get the flow-weighted mean over their edges.
    """
    q = noncompliant.q if noncompliant is not None else compliant.background
    times = graph.edge_times(compliant.x + q)
    c_times, c_demand = {}, {}
    for k, c in enumerate(compliant.commodities):
        key = (c.mode, c.trip)
        c_times[key] = float(times @ compliant.flows[k]) / c.demand
        c_demand[key] = c.demand
    n_times, n_rate = {}, {}
    if noncompliant is not None:
        if noncompliant.model == "ch":
            rates = defaultdict(float)
            for d in noncompliant.demands:
                rates[(d.level, d.trip)] += d.rate
            for key, route in noncompliant.paths.items():
                if rates[key] > 0:
                    n_times[key] = float(sum(times[e] for e in route))
                    n_rate[key] = rates[key]
        else:
            for d in aggregate_trip_rates(noncompliant.demands):
                key = (None, d.trip)
                n_times[key] = float(times @ noncompliant.trip_flows[d.trip]) / d.rate
                n_rate[key] = d.rate
    return ODTimes(c_times, c_demand, n_times, n_rate)


def delta_pv(times: ODTimes, commodities: Sequence[Commodity], noncompliant_demands: Sequence[NonCompliantDemand]) -> float:
    """Demand-weighted mean time of compliant private vehicles minus that of
    non-compliant vehicles, in minutes."""
    num = den = 0.0
    for c in commodities:
        if c.private and (c.mode, c.trip) in times.compliant:
            num += c.demand * times.compliant[(c.mode, c.trip)]
            den += c.demand
    if den <= 0:
        raise DeltaUndefined("no compliant private vehicles")
    n_num = n_den = 0.0
    for d in noncompliant_demands:
        if d.rate <= 0:
            continue
        key = (d.level, d.trip)
        t = times.noncompliant.get(key)
        if t is None:
            t = times.noncompliant.get((None, d.trip))
        if t is None:
            raise KeyError(f"no travel time for non-compliant level {d.level}, trip {d.trip}")
        n_num += d.rate * t
        n_den += d.rate
    if n_den <= 0:
        raise DeltaUndefined("no non-compliant vehicles")
    return num / den - n_num / n_den


def uniform_levels(trip: int, origin: int, destination: int, rate: float, depth: int, fractions=None) -> list[NonCompliantDemand]:
    """Split one trip's non-compliant rate over levels ``0..depth``.

    ``fractions`` overrides the uniform split and must have ``depth + 1``
    non-negative entries summing to one.
    """
    if depth < 0:
        raise ValueError("hierarchy depth must be non-negative")
    if fractions is None:
        fractions = [1.0 / (depth + 1)] * (depth + 1)
    if len(fractions) != depth + 1:
        raise ValueError(f"expected {depth + 1} level fractions, got {len(fractions)}")
    if any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0, rel_tol=1e-9):
        raise ValueError("level fractions must be non-negative and sum to 1")
    return [NonCompliantDemand(trip, origin, destination, level, rate * f) for level, f in enumerate(fractions)]


def loaded_shortest_times(graph: Graph, total_flow, origins) -> dict[int, list[float]]:
    """Shortest-path times from each origin under the given total edge flow."""
    times = graph.edge_times(total_flow).tolist()
    return {o: _dijkstra(graph.adjacency, times, o)[0] for o in origins}


__all__ = [
    "AssignmentResult",
    "Commodity",
    "DeltaUndefined",
    "DisconnectedTripError",
    "EquilibriumResult",
    "NonCompliantDemand",
    "NonCompliantFlows",
    "ODTimes",
    "SolverError",
    "UNREACHABLE",
    "aggregate_trip_rates",
    "delta_pv",
    "equilibrate",
    "loaded_shortest_times",
    "od_travel_times",
    "solve_cognitive_hierarchy",
    "solve_system_centric",
    "solve_wardrop",
    "system_objective",
    "uniform_levels",
]
