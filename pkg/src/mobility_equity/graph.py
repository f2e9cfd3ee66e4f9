"""Directed road network, BPR latency and shortest-path trees.

Times are minutes, capacities and flows are vehicles per hour.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

BPR_ALPHA = 0.15
BPR_POWER = 4

#: Distance assigned to nodes that cannot be reached from the origin.
UNREACHABLE = math.inf


class GraphError(ValueError):
    """Raised for malformed networks or invalid node references."""


@dataclass(frozen=True)
class Node:
    id: int
    coordinates: tuple[float, float] | None = None


@dataclass(frozen=True)
class Edge:
    tail: int
    head: int
    t0: float
    capacity: float


@dataclass(frozen=True)
class Graph:
    """Immutable directed graph with per-edge free-flow time and capacity.

    ``adjacency[i]`` lists ``(edge_index, head)`` for the edges leaving node
    ``i``, sorted by head id so that searches are deterministic.
    """

    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    adjacency: tuple[tuple[tuple[int, int], ...], ...] = field(
        init=False, repr=False, compare=False
    )
    t0: np.ndarray = field(init=False, repr=False, compare=False)
    capacity: np.ndarray = field(init=False, repr=False, compare=False)
    tails: np.ndarray = field(init=False, repr=False, compare=False)
    heads: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nodes = tuple(self.nodes)
        edges = tuple(self.edges)
        n = len(nodes)
        for k, node in enumerate(nodes):
            if node.id != k:
                raise GraphError(f"node ids must be dense 0..{n - 1}; got {node.id} at position {k}")
        seen = set()
        out: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for e, edge in enumerate(edges):
            where = f"edge {e} ({edge.tail}->{edge.head})"
            if not (0 <= edge.tail < n and 0 <= edge.head < n):
                raise GraphError(f"{where}: endpoint is not a valid node id")
            if edge.tail == edge.head:
                raise GraphError(f"{where}: self-loop")
            if not edge.t0 > 0 or not math.isfinite(edge.t0):
                raise GraphError(f"{where}: t0 must be positive, got {edge.t0}")
            if not edge.capacity > 0 or not math.isfinite(edge.capacity):
                raise GraphError(f"{where}: capacity must be positive, got {edge.capacity}")
            if (edge.tail, edge.head) in seen:
                raise GraphError(f"{where}: duplicate (tail, head) pair")
            seen.add((edge.tail, edge.head))
            out[edge.tail].append((e, edge.head))
        adjacency = tuple(tuple(sorted(lst, key=lambda eh: eh[1])) for lst in out)

        def frozen_array(values, dtype):
            arr = np.array(values, dtype=dtype)
            arr.setflags(write=False)
            return arr

        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "adjacency", adjacency)
        object.__setattr__(self, "t0", frozen_array([e.t0 for e in edges], float))
        object.__setattr__(self, "capacity", frozen_array([e.capacity for e in edges], float))
        object.__setattr__(self, "tails", frozen_array([e.tail for e in edges], np.int64))
        object.__setattr__(self, "heads", frozen_array([e.head for e in edges], np.int64))

    @classmethod
    def from_edges(
        cls,
        n_nodes: int,
        edges: Iterable[tuple[int, int, float, float]],
        coordinates: Sequence[tuple[float, float] | None] | None = None,
    ) -> "Graph":
        """Build a graph from ``(tail, head, t0, capacity)`` tuples."""
        coords = coordinates if coordinates is not None else [None] * n_nodes
        nodes = tuple(Node(i, None if c is None else (float(c[0]), float(c[1]))) for i, c in enumerate(coords))
        return cls(nodes, tuple(Edge(int(t), int(h), float(t0), float(cap)) for t, h, t0, cap in edges))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_index(self, tail: int, head: int) -> int:
        for e, h in self.adjacency[tail]:
            if h == head:
                return e
        raise GraphError(f"no edge {tail}->{head}")

    def free_flow_times(self) -> np.ndarray:
        return np.array(self.t0)

    def edge_times(self, total_flow) -> np.ndarray:
        """Vectorized BPR time for every edge given per-edge total flow."""
        flow = np.asarray(total_flow, dtype=float)
        if np.any(flow < 0):
            raise ValueError("edge flows must be non-negative")
        return self.t0 * (1.0 + BPR_ALPHA * (flow / self.capacity) ** BPR_POWER)

    def edge_time_derivatives(self, total_flow) -> np.ndarray:
        flow = np.asarray(total_flow, dtype=float)
        return self.t0 * BPR_ALPHA * BPR_POWER * flow ** (BPR_POWER - 1) / self.capacity**BPR_POWER

    def edge_integrals(self, total_flow) -> np.ndarray:
        flow = np.asarray(total_flow, dtype=float)
        if np.any(flow < 0):
            raise ValueError("edge flows must be non-negative")
        return self.t0 * flow * (1.0 + BPR_ALPHA / (BPR_POWER + 1) * (flow / self.capacity) ** BPR_POWER)


def bpr_travel_time(edge: Edge, total_flow: float) -> float:
    """BPR latency ``t0 * (1 + 0.15 (flow / capacity)^4)`` in minutes."""
    if total_flow < 0:
        raise ValueError(f"total flow must be non-negative, got {total_flow}")
    return edge.t0 * (1.0 + BPR_ALPHA * (total_flow / edge.capacity) ** BPR_POWER)


def bpr_integral(edge: Edge, total_flow: float) -> float:
    """Integral of the BPR latency from 0 to ``total_flow``."""
    if total_flow < 0:
        raise ValueError(f"total flow must be non-negative, got {total_flow}")
    ratio = total_flow / edge.capacity
    return edge.t0 * total_flow * (1.0 + BPR_ALPHA / (BPR_POWER + 1) * ratio**BPR_POWER)


def _dijkstra(adjacency, times: Sequence[float], origin: int):
    # times must be non-negative; zero-cost edges are allowed here (Frank-Wolfe
    # marginal costs of zero-weight modes can vanish).
    n = len(adjacency)
    dist = [UNREACHABLE] * n
    pred = [-1] * n
    done = [False] * n
    dist[origin] = 0.0
    heap = [(0.0, origin)]
    pop, push = heapq.heappop, heapq.heappush
    while heap:
        d, u = pop(heap)
        if done[u]:
            continue
        done[u] = True
        for e, v in adjacency[u]:
            if done[v]:
                continue
            nd = d + times[e]
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = e
                push(heap, (nd, v))
    return dist, pred


def shortest_path_tree(graph: Graph, times, origin: int) -> tuple[np.ndarray, np.ndarray]:
    """Single-origin shortest-path tree.

    Returns
    -------
    dist : ndarray
        Minimal travel time from ``origin``; ``UNREACHABLE`` where no path exists.
    pred : ndarray of int
        Index of the edge entering each node on its shortest path, -1 for the
        origin and unreachable nodes.
    """
    if not (isinstance(origin, (int, np.integer)) and 0 <= origin < graph.n_nodes):
        raise GraphError(f"invalid origin {origin!r}")
    t = np.asarray(times, dtype=float)
    if t.shape != (graph.n_edges,):
        raise ValueError(f"expected {graph.n_edges} edge times, got shape {t.shape}")
    if not np.all(np.isfinite(t)) or np.any(t <= 0):
        raise ValueError("edge times must be finite and positive")
    dist, pred = _dijkstra(graph.adjacency, t.tolist(), int(origin))
    return np.array(dist), np.array(pred, dtype=np.int64)


def path_edges(graph: Graph, pred, destination: int) -> list[int]:
    """Edge indices from the tree root to ``destination`` (empty if unreachable)."""
    path = []
    node = destination
    e = pred[node]
    while e >= 0:
        path.append(int(e))
        node = graph.edges[e].tail
        e = pred[node]
    path.reverse()
    return path


def validate_connectivity(graph: Graph, trips: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    """Return the trips whose destination is unreachable from the origin.

    An empty list means every trip is connected.  Invalid node ids count as
    disconnected.
    """
    trips = list(trips)
    reach: dict[int, list[float]] = {}
    t0 = graph.t0.tolist()
    bad = []
    for o, d in trips:
        if not (0 <= o < graph.n_nodes and 0 <= d < graph.n_nodes):
            bad.append((o, d))
            continue
        if o not in reach:
            reach[o] = _dijkstra(graph.adjacency, t0, o)[0]
        if reach[o][d] == UNREACHABLE:
            bad.append((o, d))
    return bad
