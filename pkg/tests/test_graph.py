import math
import random

import numpy as np
import pytest

from conftest import brute_force_distances, random_graph
from mobility_equity.graph import (
    Edge,
    Graph,
    GraphError,
    bpr_integral,
    bpr_travel_time,
    path_edges,
    shortest_path_tree,
    validate_connectivity,
)

EDGE = Edge(0, 1, 10.0, 100.0)


@pytest.mark.parametrize("flow, expected", [(0, 10.0), (100, 11.5), (200, 34.0)])
def test_bpr_travel_time(flow, expected):
    assert bpr_travel_time(EDGE, flow) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize(
    "edge, flow, expected",
    [(EDGE, 0, 0.0), (EDGE, 100, 1030.0), (Edge(0, 1, 1.0, 1.0), 2, 2.96)],
)
def test_bpr_integral(edge, flow, expected):
    assert bpr_integral(edge, flow) == pytest.approx(expected, rel=1e-14)


def test_bpr_rejects_negative_flow():
    with pytest.raises(ValueError):
        bpr_travel_time(EDGE, -1.0)
    with pytest.raises(ValueError):
        bpr_integral(EDGE, -1.0)


def test_integral_derivative_is_travel_time():
    rng = random.Random(7)
    for _ in range(100):
        e = Edge(0, 1, rng.uniform(1, 20), rng.uniform(50, 2000))
        f = rng.uniform(1, 3 * e.capacity)
        h = 1e-4 * f
        fd = (bpr_integral(e, f + h) - bpr_integral(e, f - h)) / (2 * h)
        assert fd == pytest.approx(bpr_travel_time(e, f), rel=1e-6)


def test_vectorized_times_match_scalar():
    g = Graph.from_edges(3, [(0, 1, 2.0, 100.0), (1, 2, 5.0, 300.0), (0, 2, 9.0, 50.0)])
    flows = np.array([50.0, 400.0, 75.0])
    assert np.allclose(g.edge_times(flows), [bpr_travel_time(e, f) for e, f in zip(g.edges, flows)], rtol=1e-15)
    assert np.allclose(g.edge_integrals(flows), [bpr_integral(e, f) for e, f in zip(g.edges, flows)], rtol=1e-15)


def test_line_graph_distances():
    g = Graph.from_edges(3, [(0, 1, 3.0, 1.0), (1, 2, 4.0, 1.0)])
    dist, pred = shortest_path_tree(g, [3.0, 4.0], 0)
    assert dist.tolist() == [0.0, 3.0, 7.0]
    assert path_edges(g, pred, 2) == [0, 1]


def test_diamond_prefers_cheaper_branch():
    g = Graph.from_edges(4, [(0, 1, 2, 1), (1, 3, 2, 1), (0, 2, 1, 1), (2, 3, 2, 1)])
    times = [2.0, 2.0, 1.0, 2.0]
    dist, pred = shortest_path_tree(g, times, 0)
    assert dist[3] == 3.0 == brute_force_distances(g, times, 0)[3]
    assert [g.edges[e].head for e in path_edges(g, pred, 3)] == [2, 3]


def test_isolated_origin():
    g = Graph.from_edges(3, [(1, 2, 1.0, 1.0)])
    dist, pred = shortest_path_tree(g, [1.0], 0)
    assert dist[0] == 0 and math.isinf(dist[1]) and math.isinf(dist[2])
    assert path_edges(g, pred, 2) == []


def test_dijkstra_matches_enumeration_on_random_graphs():
    rng = random.Random(11)
    for _ in range(50):
        g = random_graph(rng)
        if g.n_edges == 0:
            continue
        times = [rng.uniform(0.1, 5) for _ in range(g.n_edges)]
        origin = rng.randrange(g.n_nodes)
        dist, _ = shortest_path_tree(g, times, origin)
        expected = brute_force_distances(g, times, origin)
        assert np.allclose(dist, expected, rtol=1e-12)


def test_triangle_inequality_over_edges():
    rng = random.Random(3)
    g = random_graph(rng, 8, 0.6)
    times = np.array([rng.uniform(0.1, 5) for _ in range(g.n_edges)])
    dist, _ = shortest_path_tree(g, times, 0)
    for e, edge in enumerate(g.edges):
        if math.isfinite(dist[edge.tail]):
            assert dist[edge.head] <= dist[edge.tail] + times[e] + 1e-12


@pytest.mark.parametrize(
    "edges, match",
    [
        ([(0, 5, 1.0, 1.0)], "endpoint"),
        ([(0, 0, 1.0, 1.0)], "self-loop"),
        ([(0, 1, 0.0, 1.0)], "t0"),
        ([(0, 1, 1.0, -3.0)], "capacity"),
        ([(0, 1, 1.0, 1.0), (0, 1, 2.0, 1.0)], "duplicate"),
    ],
)
def test_malformed_graphs(edges, match):
    with pytest.raises(GraphError, match=match):
        Graph.from_edges(2, edges)


def test_bad_origin_and_times():
    g = Graph.from_edges(2, [(0, 1, 1.0, 1.0)])
    with pytest.raises(GraphError):
        shortest_path_tree(g, [1.0], 2)
    with pytest.raises(ValueError):
        shortest_path_tree(g, [0.0], 0)
    with pytest.raises(ValueError):
        shortest_path_tree(g, [1.0, 2.0], 0)


def test_connectivity():
    diamond = Graph.from_edges(4, [(0, 1, 2, 1), (1, 3, 2, 1), (0, 2, 1, 1), (2, 3, 2, 1)])
    assert validate_connectivity(diamond, [(0, 3)]) == []
    assert validate_connectivity(diamond, []) == []
    split = Graph.from_edges(4, [(0, 1, 1, 1), (2, 3, 1, 1)])
    assert validate_connectivity(split, [(0, 1), (0, 3)]) == [(0, 3)]
