"""Mobility index and mobility equity metric.

The mobility index of a node sums, over modes, a cost discount
``exp(-kappa * cost)`` times the priority-weighted normalized count of
services reachable within the mode's time threshold.  The equity metric is
one minus the population-weighted Gini coefficient of those indices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

ALWAYS_COMPLIANT = "always-compliant"
SPLITTABLE_PRIVATE = "splittable-private"
COMPLIANCE_CLASSES = (ALWAYS_COMPLIANT, SPLITTABLE_PRIVATE)

DEFAULT_SIGMOID_K = 0.5


class MetricError(ValueError):
    """The equity metric is undefined for the given input."""


@dataclass(frozen=True)
class ServiceType:
    id: str
    priority: float


@dataclass(frozen=True)
class ModeSpec:
    id: str
    cost: float  # dollars per passenger-mile
    occupancy: float
    threshold: float  # minutes
    weight: float = 1.0
    compliance_class: str = ALWAYS_COMPLIANT

    def __post_init__(self):
        if not 0 < self.occupancy <= 1:
            raise ValueError(f"mode {self.id}: occupancy must be in (0, 1], got {self.occupancy}")
        if not self.threshold > 0:
            raise ValueError(f"mode {self.id}: threshold must be positive, got {self.threshold}")
        if self.cost < 0:
            raise ValueError(f"mode {self.id}: cost must be non-negative, got {self.cost}")
        if self.weight < 0:
            raise ValueError(f"mode {self.id}: weight must be non-negative, got {self.weight}")
        if self.compliance_class not in COMPLIANCE_CLASSES:
            raise ValueError(f"mode {self.id}: unknown compliance class {self.compliance_class!r}")

    @property
    def is_private(self) -> bool:
        return self.compliance_class == SPLITTABLE_PRIVATE


@dataclass(frozen=True)
class NodeProfile:
    node: int
    population: float
    kappa: float
    income: float | None = None

    def __post_init__(self):
        if self.population < 0:
            raise ValueError(f"node {self.node}: population must be non-negative")
        if self.kappa < 0:
            raise ValueError(f"node {self.node}: kappa must be non-negative")


@dataclass(frozen=True)
class ServiceCatalog:
    """Service counts per destination node, ``counts[node][service_type]``."""

    counts: Mapping[int, Mapping[str, int]]

    def __post_init__(self):
        frozen = {}
        for node in sorted(self.counts):
            row = {}
            for s in sorted(self.counts[node]):
                c = self.counts[node][s]
                if c < 0 or int(c) != c:
                    raise ValueError(f"service count at node {node} type {s} must be a non-negative integer")
                row[s] = int(c)
            frozen[int(node)] = row
        object.__setattr__(self, "counts", frozen)

    @property
    def destinations(self) -> list[int]:
        return [d for d, row in self.counts.items() if any(row.values())]

    def count(self, node: int, service: str) -> int:
        return self.counts.get(node, {}).get(service, 0)

    def total(self, service: str) -> int:
        return sum(row.get(service, 0) for row in self.counts.values())


@dataclass(frozen=True)
class SmoothingSpec:
    """Sigmoid steepness ``k`` per minute; ``k=None`` selects the exact indicator."""

    k: float | None = DEFAULT_SIGMOID_K

    def __post_init__(self):
        if self.k is not None and not self.k > 0:
            raise ValueError(f"sigmoid steepness must be positive, got {self.k}")

    @property
    def exact(self) -> bool:
        return self.k is None

    @classmethod
    def exact_indicator(cls) -> "SmoothingSpec":
        return cls(None)


@dataclass
class AccessMatrix:
    """Accessible-service counts indexed by ``(origin, mode, service)``."""

    origins: tuple[int, ...]
    modes: tuple[str, ...]
    services: tuple[str, ...]
    values: np.ndarray  # shape (origins, modes, services)

    def get(self, origin: int, mode: str, service: str) -> float:
        return float(self.values[self.origins.index(origin), self.modes.index(mode), self.services.index(service)])


@dataclass
class MemReport:
    origins: tuple[int, ...]
    mi: np.ndarray
    populations: np.ndarray
    kappas: np.ndarray
    mem: float
    access: AccessMatrix
    normalized: AccessMatrix
    metadata: dict = field(default_factory=dict)


def indicator(t: float, tau: float, smoothing: SmoothingSpec = SmoothingSpec()) -> float:
    """Smoothed or exact test of ``t <= tau``."""
    if not tau > 0:
        raise ValueError(f"threshold must be positive, got {tau}")
    if smoothing.exact:
        return 1.0 if t <= tau else 0.0
    z = smoothing.k * (t - tau)
    # 1 - 1/(1+e^-z) == 1/(1+e^z), written to avoid overflow either way
    if z >= 0:
        ez = math.exp(-z)
        return ez / (1.0 + ez)
    return 1.0 / (1.0 + math.exp(z))


def _indicator_array(t: np.ndarray, tau: float, smoothing: SmoothingSpec) -> np.ndarray:
    if smoothing.exact:
        return (t <= tau).astype(float)
    z = smoothing.k * (t - tau)
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, ez / (1.0 + ez), 1.0 / (1.0 + ez))


def count_accessible(
    travel_times: Mapping[tuple[int, str, int], float],
    catalog: ServiceCatalog,
    modes: Sequence[ModeSpec],
    smoothing: SmoothingSpec,
    origins: Sequence[int] | None = None,
    services: Sequence[str] | None = None,
) -> AccessMatrix:
    """Count services reachable within each mode's threshold.

    ``travel_times`` maps ``(origin, mode_id, destination)`` to minutes.  Every
    destination holding at least one service must have a time for every
    origin and mode.
    """
    if origins is None:
        origins = sorted({o for o, _, _ in travel_times})
    if services is None:
        services = sorted({s for row in catalog.counts.values() for s in row})
    origins = tuple(origins)
    services = tuple(services)
    dests = catalog.destinations
    eta = np.array([[catalog.count(d, s) for s in services] for d in dests], dtype=float).reshape(len(dests), len(services))
    values = np.zeros((len(origins), len(modes), len(services)))
    for a, o in enumerate(origins):
        for b, mode in enumerate(modes):
            times = []
            for d in dests:
                key = (o, mode.id, d)
                if key not in travel_times:
                    raise KeyError(f"missing travel time for origin {o}, mode {mode.id}, destination {d}")
                t = travel_times[key]
                if t < 0:
                    raise ValueError(f"negative travel time for {key}")
                times.append(t)
            if dests:
                weights = _indicator_array(np.array(times, dtype=float), mode.threshold, smoothing)
                values[a, b] = weights @ eta
    return AccessMatrix(origins, tuple(m.id for m in modes), services, values)


def normalize_access(access: AccessMatrix) -> AccessMatrix:
    """Divide every (mode, service) slice by its maximum over nodes.

    Slices whose maximum is zero stay all zero.
    """
    v = access.values
    peak = v.max(axis=0, keepdims=True) if v.shape[0] else np.zeros((1,) + v.shape[1:])
    safe = np.where(peak > 0, peak, 1.0)
    normalized = np.where(peak > 0, v / safe, 0.0)
    return AccessMatrix(access.origins, access.modes, access.services, normalized)


def mobility_index(
    node: NodeProfile,
    normalized: np.ndarray,
    modes: Sequence[ModeSpec],
    services: Sequence[ServiceType],
) -> float:
    """Mobility index of one node.

    ``normalized`` is the node's ``(mode, service)`` slice of the normalized
    access matrix, ordered like ``modes`` and ``services``.
    """
    sigma = np.asarray(normalized, dtype=float).reshape(len(modes), len(services))
    beta = np.array([s.priority for s in services], dtype=float)
    discount = np.exp(-node.kappa * np.array([m.cost for m in modes], dtype=float))
    return float(discount @ (sigma @ beta))


def mem(mi, populations) -> float:
    """Population-weighted Gini-based equity, 1 for perfectly uniform MI."""
    eps = np.asarray(mi, dtype=float)
    p = np.asarray(populations, dtype=float)
    if eps.shape != p.shape:
        raise ValueError("mi and populations must have the same length")
    if np.any(p < 0) or np.any(eps < 0):
        raise ValueError("mi and populations must be non-negative")
    total_p = p.sum()
    total_pe = p @ eps
    if not total_p > 0:
        raise MetricError("total population is zero")
    if not total_pe > 0:
        raise MetricError("population-weighted mobility is zero; MEM undefined")
    # sum_ij p_i p_j |e_i - e_j| in O(n log n): each gap between consecutive
    # sorted values is crossed by (weight below) * (weight above) pairs.
    # Uniform MI gives all-zero gaps, hence exactly MEM = 1.
    order = np.argsort(eps, kind="stable")
    e, w = eps[order], p[order]
    below = np.cumsum(w)[:-1]
    pair_sum = 2.0 * np.sum(np.diff(e) * below * (total_p - below))
    value = 1.0 - pair_sum / (2.0 * total_p * total_pe)
    return float(min(1.0, max(0.0, value)))


def kappa_from_income(incomes, base: float = 1.0, cap: float = math.inf, scale: float = 1.0) -> np.ndarray:
    """Price sensitivity from relative income: ``min(scale * base * max/income, cap)``."""
    inc = np.asarray(incomes, dtype=float)
    if inc.size == 0:
        return inc
    if np.any(~(inc > 0)):
        raise ValueError("incomes must be positive")
    if not base > 0:
        raise ValueError("kappa base must be positive")
    return np.minimum(scale * base * inc.max() / inc, cap)
