import itertools
import math
import random

import pytest

from mobility_equity.graph import Graph


def random_graph(rng: random.Random, n_max: int = 8, p: float = 0.35) -> Graph:
    n = rng.randint(2, n_max)
    edges = [(i, j, rng.uniform(0.5, 10.0), rng.uniform(50.0, 500.0)) for i in range(n) for j in range(n) if i != j and rng.random() < p]
    return Graph.from_edges(n, edges)


def brute_force_distances(graph: Graph, times, origin: int) -> list[float]:
    """Shortest distance to every node by enumerating simple paths."""
    n = graph.n_nodes
    best = [math.inf] * n
    best[origin] = 0.0

    def walk(node, cost, seen):
        for e, head in graph.adjacency[node]:
            if head in seen:
                continue
            c = cost + times[e]
            best[head] = min(best[head], c)
            walk(head, c, seen | {head})

    walk(origin, 0.0, {origin})
    return best


def parallel_links(t0=(10.0, 12.0), cap=(100.0, 100.0)) -> Graph:
    """Two routes from node 0 to node 1.

    The second route is split in half through node 2 so the graph has no
    duplicate edges; each half has half the free-flow time and the full
    capacity, so the route's BPR curve equals a single link's.
    """
    return Graph.from_edges(3, [(0, 1, t0[0], cap[0]), (0, 2, t0[1] / 2, cap[1]), (2, 1, t0[1] / 2, cap[1])])


def route_time(t0, cap, f):
    return t0 * (1 + 0.15 * (f / cap) ** 4)


@pytest.fixture
def rng():
    return random.Random(20240601)
