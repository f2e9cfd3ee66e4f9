"""Scenario bundles on disk, synthetic scenarios and result files.

A scenario directory holds six CSV tables and one JSON file:

``nodes.csv``          id,x,y,population,income[,kappa]
``edges.csv``          tail,head,t0_min,capacity_vph
``services.csv``       node_id,service_type,count
``service_types.csv``  type,priority
``modes.csv``          id,cost_per_passenger_mile,occupancy,tau_min,weight,compliance_class
``trips.csv``          origin,destination,mode,demand_vph
``config.json``        scalar settings, see ``CONFIG_DEFAULTS``

Lines starting with ``#`` are comments.  Times are minutes, costs dollars
per passenger-mile and flows vehicles per hour.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .equity import (
    ALWAYS_COMPLIANT,
    SPLITTABLE_PRIVATE,
    MemReport,
    ModeSpec,
    NodeProfile,
    ServiceCatalog,
    ServiceType,
    SmoothingSpec,
    kappa_from_income,
)
from .graph import Graph, GraphError, validate_connectivity

#: Service priorities used by default for synthetic scenarios (in 1/23 units).
TABLE_I_PRIORITIES = {
    "cafe": 1,
    "fitness": 2,
    "hospital": 3,
    "market": 3,
    "park": 2,
    "pharmacy": 3,
    "restaurant": 2,
    "school": 3,
    "stadium": 1,
    "theater": 1,
    "place_of_worship": 2,
}

CONFIG_DEFAULTS: dict[str, Any] = {
    "compliance_rate": 0.8,
    "hierarchy_depth": 2,
    "level_fractions": None,
    "smoothing_k": 0.5,
    "lambda": math.inf,
    "noncompliant_model": "ch",
    "tolerance": 1e-4,
    "max_iters": 500,
    "line_search_tol": 1e-8,
    "rounds": 2,
    "round_tolerance": 1e-3,
    "kappa_base": 1.0,
    "kappa_cap": 10.0,
    "kappa_scale": 1.0,
    "public_share": None,
}

UNIT_HEADERS = {
    "nodes.csv": "# x,y in km; population in persons; income in dollars/year; kappa dimensionless",
    "edges.csv": "# t0_min in minutes; capacity_vph in vehicles/hour",
    "services.csv": "# count = number of services of the type at the node",
    "service_types.csv": "# priority dimensionless; priorities sum to 1",
    "modes.csv": "# cost in dollars per passenger-mile; occupancy in (0,1]; tau_min in minutes",
    "trips.csv": "# demand_vph in vehicles/hour",
}

COLUMNS = {
    "nodes.csv": ("id", "x", "y", "population", "income"),
    "edges.csv": ("tail", "head", "t0_min", "capacity_vph"),
    "services.csv": ("node_id", "service_type", "count"),
    "service_types.csv": ("type", "priority"),
    "modes.csv": ("id", "cost_per_passenger_mile", "occupancy", "tau_min", "weight", "compliance_class"),
    "trips.csv": ("origin", "destination", "mode", "demand_vph"),
}


class ScenarioError(ValueError):
    """Parse or validation failure with a machine-readable location."""

    def __init__(self, message: str, file: str | None = None, line: int | None = None, field: str | None = None, kind: str = "validation"):
        self.message = message
        self.file = file
        self.line = line
        self.field = field
        self.kind = kind
        where = ":".join(str(p) for p in (file, line) if p is not None)
        prefix = f"{where}: " if where else ""
        suffix = f" [{field}]" if field else ""
        super().__init__(f"{prefix}{message}{suffix}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "file": self.file, "line": self.line, "field": self.field, "message": self.message}


@dataclass(frozen=True)
class Trip:
    origin: int
    destination: int
    mode: str
    demand: float


@dataclass(frozen=True)
class SolverSettings:
    tolerance: float = 1e-4
    max_iters: int = 500
    line_search_tol: float = 1e-8
    rounds: int = 2
    round_tolerance: float = 1e-3
    noncompliant_model: str = "ch"


@dataclass(frozen=True)
class Scenario:
    graph: Graph
    modes: tuple[ModeSpec, ...]
    nodes: tuple[NodeProfile, ...]
    services: tuple[ServiceType, ...]
    catalog: ServiceCatalog
    trips: tuple[Trip, ...]
    compliance_rate: float = 0.8
    hierarchy_depth: int = 2
    level_fractions: tuple[float, ...] | None = None
    smoothing: SmoothingSpec = SmoothingSpec()
    settings: SolverSettings = SolverSettings()
    lam: float = math.inf
    kappa_base: float = 1.0
    kappa_cap: float = 10.0
    kappa_scale: float = 1.0
    public_share: float | None = None

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    @property
    def weights(self) -> dict[str, float]:
        return {m.id: m.weight for m in self.modes}

    def mode(self, mode_id: str) -> ModeSpec:
        for m in self.modes:
            if m.id == mode_id:
                return m
        raise KeyError(mode_id)

    def profile(self, node: int) -> NodeProfile:
        for p in self.nodes:
            if p.node == node:
                return p
        raise KeyError(node)

    def with_weights(self, weights) -> "Scenario":
        if not isinstance(weights, dict):
            weights = dict(zip((m.id for m in self.modes), weights))
        return self.replace(modes=tuple(dataclasses.replace(m, weight=float(weights.get(m.id, m.weight))) for m in self.modes))

    def scaled_demand(self, factor: float) -> "Scenario":
        if not factor > 0:
            raise ValueError("demand scale must be positive")
        return self.replace(trips=tuple(dataclasses.replace(t, demand=t.demand * factor) for t in self.trips))

    def public_private_modes(self) -> tuple[ModeSpec, ModeSpec]:
        public = [m for m in self.modes if m.compliance_class == ALWAYS_COMPLIANT]
        private = [m for m in self.modes if m.compliance_class == SPLITTABLE_PRIVATE]
        if len(public) != 1 or len(private) != 1:
            raise ValueError("operation needs exactly one always-compliant and one splittable-private mode")
        return public[0], private[0]

    def with_public_share(self, share: float) -> "Scenario":
        """Re-split each origin-destination pair's total demand so that
        ``share`` of it uses the public mode."""
        if not 0 <= share <= 1:
            raise ValueError("public share must be in [0, 1]")
        public, private = self.public_private_modes()
        totals: dict[tuple[int, int], float] = {}
        for t in self.trips:
            totals[(t.origin, t.destination)] = totals.get((t.origin, t.destination), 0.0) + t.demand
        trips = []
        for (o, d), total in totals.items():
            if share > 0:
                trips.append(Trip(o, d, public.id, total * share))
            if share < 1:
                trips.append(Trip(o, d, private.id, total * (1 - share)))
        return self.replace(trips=tuple(trips), public_share=float(share))

    def config_dict(self) -> dict:
        s = self.settings
        return {
            "compliance_rate": self.compliance_rate,
            "hierarchy_depth": self.hierarchy_depth,
            "level_fractions": None if self.level_fractions is None else list(self.level_fractions),
            "smoothing_k": self.smoothing.k,
            "lambda": self.lam,
            "noncompliant_model": s.noncompliant_model,
            "tolerance": s.tolerance,
            "max_iters": s.max_iters,
            "line_search_tol": s.line_search_tol,
            "rounds": s.rounds,
            "round_tolerance": s.round_tolerance,
            "kappa_base": self.kappa_base,
            "kappa_cap": self.kappa_cap,
            "kappa_scale": self.kappa_scale,
            "public_share": self.public_share,
        }


# --------------------------------------------------------------------------- loading


def _read_rows(path: Path, required: Sequence[str], optional: Sequence[str] = ()):
    """Yield ``(line_number, row_dict)`` for data rows, skipping comments."""
    name = path.name
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ScenarioError("file not found", file=str(path), kind="parse") from None
    except OSError as exc:
        raise ScenarioError(str(exc), file=str(path), kind="parse") from None
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines()) if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ScenarioError("missing header row", file=name, kind="parse")
    header_line, header = lines[0]
    columns = [c.strip() for c in next(csv.reader([header]))]
    missing = [c for c in required if c not in columns]
    if missing:
        raise ScenarioError(f"missing columns {missing}", file=name, line=header_line, kind="parse")
    unknown = [c for c in columns if c not in required and c not in optional]
    if unknown:
        raise ScenarioError(f"unknown columns {unknown}", file=name, line=header_line, kind="parse")
    rows = []
    for lineno, ln in lines[1:]:
        values = next(csv.reader([ln]))
        if len(values) != len(columns):
            raise ScenarioError(f"expected {len(columns)} fields, got {len(values)}", file=name, line=lineno, kind="parse")
        rows.append((lineno, {c: v.strip() for c, v in zip(columns, values)}))
    return columns, rows


def _number(row, key, file, line, kind=float, allow_empty=False):
    raw = row.get(key, "")
    if raw == "":
        if allow_empty:
            return None
        raise ScenarioError("empty value", file=file, line=line, field=key, kind="parse")
    try:
        if kind is int:
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        return float(raw)
    except ValueError:
        raise ScenarioError(f"not a valid {kind.__name__}: {raw!r}", file=file, line=line, field=key, kind="parse") from None


def load_scenario(path) -> Scenario:
    """Load and validate a scenario directory.

    Price sensitivity comes from the ``kappa`` column when present; otherwise
    it is derived from ``income`` with the configured base, cap and scale.
    """
    root = Path(path)
    if not root.is_dir():
        raise ScenarioError("scenario directory not found", file=str(root), kind="parse")

    config = dict(CONFIG_DEFAULTS)
    cfg_path = root / "config.json"
    if cfg_path.exists():
        try:
            raw = json.loads(cfg_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ScenarioError(exc.msg, file="config.json", line=exc.lineno, kind="parse") from None
        if not isinstance(raw, dict):
            raise ScenarioError("config must be a JSON object", file="config.json", kind="parse")
        unknown = sorted(set(raw) - set(CONFIG_DEFAULTS))
        if unknown:
            raise ScenarioError(f"unknown config keys {unknown}", file="config.json", kind="parse")
        config.update(raw)
    config = _validate_config(config)

    # nodes
    cols, rows = _read_rows(root / "nodes.csv", COLUMNS["nodes.csv"][:1], ("x", "y", "population", "income", "kappa"))
    node_rows = []
    for line, row in rows:
        node_rows.append(
            (
                line,
                _number(row, "id", "nodes.csv", line, int),
                _number(row, "x", "nodes.csv", line, allow_empty=True),
                _number(row, "y", "nodes.csv", line, allow_empty=True),
                _number(row, "population", "nodes.csv", line, allow_empty=True) or 0.0,
                _number(row, "income", "nodes.csv", line, allow_empty=True),
                _number(row, "kappa", "nodes.csv", line, allow_empty=True),
            )
        )
    ids = [r[1] for r in node_rows]
    if sorted(ids) != list(range(len(ids))):
        raise ScenarioError("node ids must be unique and dense from 0", file="nodes.csv", field="id")
    node_rows.sort(key=lambda r: r[1])
    has_kappa = "kappa" in cols and any(r[6] is not None for r in node_rows)
    has_income = "income" in cols and any(r[5] is not None for r in node_rows)
    if has_kappa:
        if has_income:
            warnings.warn("nodes.csv has both kappa and income; using kappa", stacklevel=2)
        for line, nid, *_rest, kappa in node_rows:
            if kappa is None:
                raise ScenarioError("kappa missing for node", file="nodes.csv", line=line, field="kappa")
        kappas = [r[6] for r in node_rows]
    else:
        incomes = []
        for line, nid, _x, _y, _p, income, _k in node_rows:
            if income is None or not income > 0:
                raise ScenarioError("income must be positive when kappa is absent", file="nodes.csv", line=line, field="income")
            incomes.append(income)
        kappas = kappa_from_income(incomes, config["kappa_base"], config["kappa_cap"], config["kappa_scale"]).tolist()
    profiles = []
    coords = []
    for (line, nid, x, y, pop, income, _k), kappa in zip(node_rows, kappas):
        if pop < 0:
            raise ScenarioError("population must be non-negative", file="nodes.csv", line=line, field="population")
        if kappa < 0:
            raise ScenarioError("kappa must be non-negative", file="nodes.csv", line=line, field="kappa")
        profiles.append(NodeProfile(nid, pop, kappa, income))
        coords.append(None if x is None or y is None else (x, y))
    n_nodes = len(profiles)

    # edges
    _, rows = _read_rows(root / "edges.csv", COLUMNS["edges.csv"])
    edge_list = []
    seen = set()
    for line, row in rows:
        tail = _number(row, "tail", "edges.csv", line, int)
        head = _number(row, "head", "edges.csv", line, int)
        t0 = _number(row, "t0_min", "edges.csv", line)
        cap = _number(row, "capacity_vph", "edges.csv", line)
        for key, v in (("tail", tail), ("head", head)):
            if not 0 <= v < n_nodes:
                raise ScenarioError(f"unknown node {v}", file="edges.csv", line=line, field=key)
        if tail == head:
            raise ScenarioError("self-loop", file="edges.csv", line=line, field="head")
        if (tail, head) in seen:
            raise ScenarioError("duplicate edge", file="edges.csv", line=line, field="head")
        seen.add((tail, head))
        if not t0 > 0:
            raise ScenarioError("t0_min must be positive", file="edges.csv", line=line, field="t0_min")
        if not cap > 0:
            raise ScenarioError("capacity_vph must be positive", file="edges.csv", line=line, field="capacity_vph")
        edge_list.append((tail, head, t0, cap))
    try:
        graph = Graph.from_edges(n_nodes, edge_list, coords)
    except GraphError as exc:
        raise ScenarioError(str(exc), file="edges.csv") from None

    # service types
    _, rows = _read_rows(root / "service_types.csv", COLUMNS["service_types.csv"])
    services = []
    for line, row in rows:
        pr = _number(row, "priority", "service_types.csv", line)
        if pr < 0:
            raise ScenarioError("priority must be non-negative", file="service_types.csv", line=line, field="priority")
        if any(s.id == row["type"] for s in services):
            raise ScenarioError("duplicate service type", file="service_types.csv", line=line, field="type")
        services.append(ServiceType(row["type"], pr))
    services = normalize_priorities(services)

    # services
    _, rows = _read_rows(root / "services.csv", COLUMNS["services.csv"])
    known = {s.id for s in services}
    counts: dict[int, dict[str, int]] = {}
    for line, row in rows:
        node = _number(row, "node_id", "services.csv", line, int)
        if not 0 <= node < n_nodes:
            raise ScenarioError(f"unknown node {node}", file="services.csv", line=line, field="node_id")
        stype = row["service_type"]
        if stype not in known:
            raise ScenarioError(f"unknown service type {stype!r}", file="services.csv", line=line, field="service_type")
        count = _number(row, "count", "services.csv", line, int)
        if count < 0:
            raise ScenarioError("count must be non-negative", file="services.csv", line=line, field="count")
        counts.setdefault(node, {})
        counts[node][stype] = counts[node].get(stype, 0) + count
    catalog = ServiceCatalog(counts)

    # modes
    _, rows = _read_rows(root / "modes.csv", COLUMNS["modes.csv"])
    modes = []
    for line, row in rows:
        try:
            mode = ModeSpec(
                row["id"],
                _number(row, "cost_per_passenger_mile", "modes.csv", line),
                _number(row, "occupancy", "modes.csv", line),
                _number(row, "tau_min", "modes.csv", line),
                _number(row, "weight", "modes.csv", line),
                row["compliance_class"],
            )
        except ValueError as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(str(exc), file="modes.csv", line=line) from None
        if any(m.id == mode.id for m in modes):
            raise ScenarioError("duplicate mode id", file="modes.csv", line=line, field="id")
        modes.append(mode)
    if not modes:
        raise ScenarioError("at least one mode required", file="modes.csv")
    mode_ids = {m.id for m in modes}

    # trips
    _, rows = _read_rows(root / "trips.csv", COLUMNS["trips.csv"])
    trips = []
    pairs = set()
    for line, row in rows:
        o = _number(row, "origin", "trips.csv", line, int)
        d = _number(row, "destination", "trips.csv", line, int)
        for key, v in (("origin", o), ("destination", d)):
            if not 0 <= v < n_nodes:
                raise ScenarioError(f"unknown node {v}", file="trips.csv", line=line, field=key)
        if o == d:
            raise ScenarioError("origin equals destination", file="trips.csv", line=line, field="destination")
        if row["mode"] not in mode_ids:
            raise ScenarioError(f"unknown mode {row['mode']!r}", file="trips.csv", line=line, field="mode")
        demand = _number(row, "demand_vph", "trips.csv", line)
        if not demand > 0:
            raise ScenarioError("demand must be positive", file="trips.csv", line=line, field="demand_vph")
        if (o, d, row["mode"]) in pairs:
            raise ScenarioError("duplicate trip row", file="trips.csv", line=line)
        pairs.add((o, d, row["mode"]))
        trips.append(Trip(o, d, row["mode"], demand))
    if not trips:
        raise ScenarioError("at least one trip required", file="trips.csv")
    bad = validate_connectivity(graph, sorted({(t.origin, t.destination) for t in trips}))
    if bad:
        raise ScenarioError(f"disconnected trips {bad}", file="trips.csv", field="destination")

    return _build(graph, modes, profiles, services, catalog, trips, config)


def _validate_config(config: dict) -> dict:
    def fail(key, msg):
        raise ScenarioError(msg, file="config.json", field=key)

    def as_float(key, value):
        if isinstance(value, str) and value.lower() in ("inf", "infinity"):
            return math.inf
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            fail(key, f"must be a number, got {value!r}")
        return float(value)

    out = dict(config)
    for key in ("compliance_rate", "lambda", "tolerance", "line_search_tol", "round_tolerance", "kappa_base", "kappa_cap", "kappa_scale"):
        out[key] = as_float(key, out[key])
    for key in ("hierarchy_depth", "max_iters", "rounds"):
        v = out[key]
        if isinstance(v, bool) or not isinstance(v, int):
            fail(key, f"must be an integer, got {v!r}")
    if not 0 <= out["compliance_rate"] <= 1:
        fail("compliance_rate", "must be in [0, 1]")
    if out["hierarchy_depth"] < 0:
        fail("hierarchy_depth", "must be non-negative")
    if out["rounds"] < 1:
        fail("rounds", "must be at least 1")
    if out["max_iters"] < 0:
        fail("max_iters", "must be non-negative")
    for key in ("tolerance", "line_search_tol", "kappa_base", "kappa_scale", "lambda", "kappa_cap"):
        if not out[key] > 0:
            fail(key, "must be positive")
    if out["round_tolerance"] < 0:
        fail("round_tolerance", "must be non-negative")
    if out["smoothing_k"] is not None:
        out["smoothing_k"] = as_float("smoothing_k", out["smoothing_k"])
        if not out["smoothing_k"] > 0:
            fail("smoothing_k", "must be positive or null for the exact indicator")
    if out["noncompliant_model"] not in ("ch", "wardrop"):
        fail("noncompliant_model", "must be 'ch' or 'wardrop'")
    fr = out["level_fractions"]
    if fr is not None:
        if not isinstance(fr, list) or len(fr) != out["hierarchy_depth"] + 1:
            fail("level_fractions", "must list hierarchy_depth + 1 fractions")
        fr = [as_float("level_fractions", v) for v in fr]
        if any(v < 0 for v in fr) or not math.isclose(sum(fr), 1.0, rel_tol=1e-9):
            fail("level_fractions", "must be non-negative and sum to 1")
        out["level_fractions"] = tuple(fr)
    if out["public_share"] is not None:
        out["public_share"] = as_float("public_share", out["public_share"])
        if not 0 <= out["public_share"] <= 1:
            fail("public_share", "must be in [0, 1]")
    return out


def _build(graph, modes, profiles, services, catalog, trips, config) -> Scenario:
    return Scenario(
        graph=graph,
        modes=tuple(modes),
        nodes=tuple(profiles),
        services=tuple(services),
        catalog=catalog,
        trips=tuple(trips),
        compliance_rate=config["compliance_rate"],
        hierarchy_depth=config["hierarchy_depth"],
        level_fractions=config["level_fractions"],
        smoothing=SmoothingSpec(config["smoothing_k"]),
        settings=SolverSettings(
            tolerance=config["tolerance"],
            max_iters=config["max_iters"],
            line_search_tol=config["line_search_tol"],
            rounds=config["rounds"],
            round_tolerance=config["round_tolerance"],
            noncompliant_model=config["noncompliant_model"],
        ),
        lam=config["lambda"],
        kappa_base=config["kappa_base"],
        kappa_cap=config["kappa_cap"],
        kappa_scale=config["kappa_scale"],
        public_share=config["public_share"],
    )


def normalize_priorities(services: Sequence[ServiceType]) -> list[ServiceType]:
    """Rescale priorities to sum to one, warning when they did not."""
    total = sum(s.priority for s in services)
    if not total > 0:
        raise ScenarioError("service priorities must have a positive sum", file="service_types.csv", field="priority")
    if math.isclose(total, 1.0, rel_tol=1e-9, abs_tol=1e-12):
        return list(services)
    warnings.warn(f"service priorities sum to {total}; rescaling to 1", stacklevel=3)
    return [ServiceType(s.id, s.priority / total) for s in services]


# --------------------------------------------------------------------------- writing


def _fmt(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(value)


def _write_csv(path: Path, columns, rows, comment: str | None = None) -> None:
    buf = io.StringIO()
    if comment:
        buf.write(comment + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_scenario(scenario: Scenario, out_dir) -> Path:
    """Write a scenario directory that ``load_scenario`` reads back exactly."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    g = scenario.graph
    incomes = [p.income for p in scenario.nodes]
    # kappa is only written when it cannot be re-derived from income
    derived = None
    if all(i is not None and i > 0 for i in incomes):
        derived = kappa_from_income(incomes, scenario.kappa_base, scenario.kappa_cap, scenario.kappa_scale).tolist()
    explicit = derived != [p.kappa for p in scenario.nodes]
    node_rows = []
    for p, node in zip(scenario.nodes, g.nodes):
        x, y = node.coordinates if node.coordinates is not None else (None, None)
        row = (p.node, x, y, p.population, p.income)
        node_rows.append(row + (p.kappa,) if explicit else row)
    columns = COLUMNS["nodes.csv"] + (("kappa",) if explicit else ())
    _write_csv(root / "nodes.csv", columns, node_rows, UNIT_HEADERS["nodes.csv"])
    _write_csv(root / "edges.csv", COLUMNS["edges.csv"], [(e.tail, e.head, e.t0, e.capacity) for e in g.edges], UNIT_HEADERS["edges.csv"])
    svc_rows = [(node, s, c) for node, row in scenario.catalog.counts.items() for s, c in row.items()]
    _write_csv(root / "services.csv", COLUMNS["services.csv"], svc_rows, UNIT_HEADERS["services.csv"])
    _write_csv(root / "service_types.csv", COLUMNS["service_types.csv"], [(s.id, s.priority) for s in scenario.services], UNIT_HEADERS["service_types.csv"])
    _write_csv(
        root / "modes.csv",
        COLUMNS["modes.csv"],
        [(m.id, m.cost, m.occupancy, m.threshold, m.weight, m.compliance_class) for m in scenario.modes],
        UNIT_HEADERS["modes.csv"],
    )
    _write_csv(root / "trips.csv", COLUMNS["trips.csv"], [(t.origin, t.destination, t.mode, t.demand) for t in scenario.trips], UNIT_HEADERS["trips.csv"])
    (root / "config.json").write_text(_dump_json(scenario.config_dict()), encoding="utf-8")
    return root


def _json_safe(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if isinstance(value, (np.floating,)):
        return _json_safe(float(value))
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.ndarray):
        return [_json_safe(v) for v in value.tolist()]
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def _dump_json(obj) -> str:
    return json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n"


@dataclass
class Table:
    columns: tuple[str, ...]
    rows: list = field(default_factory=list)

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


@dataclass
class ResultBundle:
    """Everything one CLI run writes: tables by file stem plus metadata."""

    metadata: dict
    tables: dict[str, Table] = field(default_factory=dict)
    charts: dict[str, tuple[str, list[str]]] = field(default_factory=dict)


def mem_report_tables(report: MemReport) -> dict[str, Table]:
    mi = Table(("node_id", "population", "kappa", "mi"))
    for node, p, k, e in zip(report.origins, report.populations, report.kappas, report.mi):
        mi.rows.append((int(node), float(p), float(k), float(e)))
    access = Table(("node_id", "mode", "service_type", "sigma", "sigma_normalized"))
    a, n = report.access, report.normalized
    for i, node in enumerate(a.origins):
        for j, mode in enumerate(a.modes):
            for s, stype in enumerate(a.services):
                access.rows.append((int(node), mode, stype, float(a.values[i, j, s]), float(n.values[i, j, s])))
    return {"mi": mi, "access": access}


def write_results(bundle: ResultBundle, out_dir, svg: bool = False) -> list[Path]:
    """Write one CSV per table plus ``metadata.json``; optional SVG charts.

    Output is byte-deterministic for identical bundles.
    """
    root = Path(out_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {root}: {exc.strerror or exc}") from exc
    written = []
    for name in sorted(bundle.tables):
        table = bundle.tables[name]
        path = root / f"{name}.csv"
        _write_csv(path, table.columns, table.rows)
        written.append(path)
    meta = root / "metadata.json"
    try:
        meta.write_text(_dump_json(bundle.metadata), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {meta}: {exc.strerror or exc}") from exc
    written.append(meta)
    if svg:
        for name in sorted(bundle.charts):
            x_col, y_cols = bundle.charts[name]
            table = bundle.tables[name]
            path = root / f"{name}.svg"
            _line_chart(table, x_col, y_cols, path)
            written.append(path)
    return written


def _line_chart(table: Table, x_col: str, y_cols: Sequence[str], path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "mobility-equity"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    xs = [float(v) for v in table.column(x_col)]
    for col in y_cols:
        ys = [math.nan if v is None else float(v) for v in table.column(col)]
        ax.plot(xs, ys, marker="o", label=col)
    ax.set_xlabel(x_col)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def read_table(path) -> Table:
    """Parse a CSV written by ``write_results``; numeric cells become floats."""
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    reader = csv.reader(lines)
    columns = tuple(next(reader))
    rows = []
    for values in reader:
        row = []
        for v in values:
            if v == "NA":
                row.append(None)
                continue
            try:
                row.append(float(v))
            except ValueError:
                row.append(v)
        rows.append(tuple(row))
    return Table(columns, rows)


# --------------------------------------------------------------------------- synthetic

#: Both synthetic modes share this isochrone threshold (minutes).  Short
#: enough that congestion moves destinations in and out of reach.
SYNTHETIC_TAU_MIN = 20.0


def generate_synthetic(
    seed: int,
    grid_size: int,
    demand_scale: float = 1.0,
    public_share: float = 0.3,
) -> Scenario:
    """Deterministic ``n x n`` grid scenario.

    Boundary nodes are origins, interior nodes (or the far corner when
    ``n = 2``) are service destinations.  Incomes fall with distance from the
    center so outer neighborhoods are the more price sensitive.  Two modes:
    public transit costing 10% of a private vehicle per passenger-mile.
    """
    n = int(grid_size)
    if n < 2:
        raise ValueError("grid size must be at least 2")
    if not demand_scale > 0:
        raise ValueError("demand scale must be positive")
    rng = np.random.default_rng(seed)
    spacing = 1.5
    coords = [(c * spacing, r * spacing) for r in range(n) for c in range(n)]
    edges = []
    for r in range(n):
        for c in range(n):
            u = r * n + c
            for dr, dc in ((-1, 0), (0, -1), (0, 1), (1, 0)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < n and 0 <= cc < n:
                    edges.append((u, rr * n + cc))
    t0 = rng.uniform(2.0, 10.0, size=len(edges))
    cap = rng.uniform(500.0, 2000.0, size=len(edges))
    graph = Graph.from_edges(n * n, [(u, v, float(a), float(b)) for (u, v), a, b in zip(edges, t0, cap)], coords)

    interior = [r * n + c for r in range(1, n - 1) for c in range(1, n - 1)]
    destinations = interior if interior else [n * n - 1]
    origins = [v for v in range(n * n) if v not in destinations and _on_boundary(v, n)]

    center = ((n - 1) * spacing / 2, (n - 1) * spacing / 2)
    far = max(math.dist(coords[v], center) for v in range(n * n)) or 1.0
    populations = rng.integers(1000, 10001, size=n * n)
    noise = rng.uniform(0.85, 1.15, size=n * n)
    profiles = []
    incomes = []
    for v in range(n * n):
        rel = math.dist(coords[v], center) / far
        income = round(float(150_000 * (1.0 - 0.6 * rel) * noise[v]), 2)
        incomes.append(income)
    kappas = kappa_from_income(incomes, 1.0, 10.0)
    for v in range(n * n):
        pop = float(populations[v]) if v in origins else 0.0
        profiles.append(NodeProfile(v, pop, float(kappas[v]), incomes[v]))

    services = [ServiceType(name, k / 23) for name, k in TABLE_I_PRIORITIES.items()]
    counts = {}
    for d in destinations:
        counts[d] = {s.id: int(rng.integers(1, 6)) for s in services}
    catalog = ServiceCatalog(counts)

    private_cost = 0.67
    modes = (
        ModeSpec("public", round(0.1 * private_cost, 10), 0.8, SYNTHETIC_TAU_MIN, 0.5, ALWAYS_COMPLIANT),
        ModeSpec("private", private_cost, 1.0, SYNTHETIC_TAU_MIN, 0.5, SPLITTABLE_PRIVATE),
    )
    base = rng.uniform(40.0, 120.0, size=(len(origins), len(destinations)))
    trips = []
    for a, o in enumerate(origins):
        for b, d in enumerate(destinations):
            total = float(base[a, b]) * demand_scale
            if public_share > 0:
                trips.append(Trip(o, d, "public", total * public_share))
            if public_share < 1:
                trips.append(Trip(o, d, "private", total * (1 - public_share)))
    return Scenario(
        graph=graph,
        modes=modes,
        nodes=tuple(profiles),
        services=tuple(services),
        catalog=catalog,
        trips=tuple(trips),
        public_share=float(public_share),
    )


def _on_boundary(v: int, n: int) -> bool:
    r, c = divmod(v, n)
    return r in (0, n - 1) or c in (0, n - 1)


def default_out_dir() -> str:
    return os.environ.get("MOBILITY_EQUITY_OUT", "results")
