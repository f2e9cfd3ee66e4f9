import math

import numpy as np
import pytest

from mobility_equity.assignment import solve_cognitive_hierarchy
from mobility_equity.equity import ALWAYS_COMPLIANT, SPLITTABLE_PRIVATE, ModeSpec, NodeProfile, ServiceCatalog, ServiceType, SmoothingSpec
from mobility_equity.graph import Graph
from mobility_equity.optimizer import (
    InfeasibleError,
    WeightGrid,
    build_demands,
    evaluate_pipeline,
    maximize_mem,
    sweep_compliance,
    sweep_demand_scale,
    sweep_hierarchy_depth,
    sweep_weights,
    wardrop_distance,
)
from mobility_equity.scenario_io import Scenario, Trip, generate_synthetic

MODES = (
    ModeSpec("public", 0.1, 0.8, 30.0, 0.5, ALWAYS_COMPLIANT),
    ModeSpec("private", 1.0, 1.0, 30.0, 0.5, SPLITTABLE_PRIVATE),
)


def four_node() -> Scenario:
    """Origins 0 and 1, destinations 2 and 3, one direct link per trip.

    Every link carries 0.8 * 50 + 60 = 100 vehicles/hour at capacity 100,
    so each loaded time is 1.15 * t0 whatever the routing.
    """
    g = Graph.from_edges(4, [(0, 2, 10.0, 100.0), (0, 3, 25.0, 100.0), (1, 2, 35.0, 100.0), (1, 3, 12.0, 100.0)])
    trips = []
    for o, d in [(0, 2), (0, 3), (1, 2), (1, 3)]:
        trips += [Trip(o, d, "public", 50.0), Trip(o, d, "private", 60.0)]
    return Scenario(
        graph=g,
        modes=MODES,
        nodes=(NodeProfile(0, 1000, 1.0), NodeProfile(1, 3000, 2.0), NodeProfile(2, 0, 1.0), NodeProfile(3, 0, 1.0)),
        services=(ServiceType("school", 0.6), ServiceType("park", 0.4)),
        catalog=ServiceCatalog({2: {"school": 2, "park": 1}, 3: {"school": 1}}),
        trips=tuple(trips),
        smoothing=SmoothingSpec.exact_indicator(),
    )


def test_four_node_golden_value():
    # loaded times 11.5, 28.75 | 40.25, 13.8 against tau = 30:
    # node 0 reaches both destinations (school 3 of 3, park 1 of 1),
    # node 1 reaches only node 3 (school 1 of 3, park 0)
    eps0 = (math.exp(-0.1) + math.exp(-1.0)) * (0.6 + 0.4)
    eps1 = (math.exp(-0.2) + math.exp(-2.0)) * (0.6 / 3)
    p0, p1 = 1000.0, 3000.0
    expected = 1 - 2 * p0 * p1 * abs(eps0 - eps1) / (2 * (p0 + p1) * (p0 * eps0 + p1 * eps1))
    report, delta = evaluate_pipeline(four_node())
    assert report.origins == (0, 1)
    assert report.mi.tolist() == pytest.approx([eps0, eps1], rel=1e-12)
    assert report.mem == pytest.approx(expected, rel=1e-12)
    assert report.mem == pytest.approx(0.5602391, abs=1e-7)
    assert delta == pytest.approx(0.0, abs=1e-9)


def test_single_origin_is_equitable():
    s = four_node()
    s = s.replace(trips=tuple(t for t in s.trips if t.origin == 0))
    assert evaluate_pipeline(s).mem == 1.0


def test_twin_origins_are_equitable():
    g = Graph.from_edges(3, [(0, 2, 8.0, 100.0), (1, 2, 8.0, 100.0)])
    s = Scenario(
        graph=g,
        modes=MODES,
        nodes=(NodeProfile(0, 500, 1.5), NodeProfile(1, 500, 1.5), NodeProfile(2, 0, 1.0)),
        services=(ServiceType("school", 1.0),),
        catalog=ServiceCatalog({2: {"school": 3}}),
        trips=(Trip(0, 2, "public", 40.0), Trip(1, 2, "public", 40.0), Trip(0, 2, "private", 40.0), Trip(1, 2, "private", 40.0)),
    )
    assert evaluate_pipeline(s).mem == pytest.approx(1.0, abs=1e-15)


def test_build_demands_splits_private_by_compliance():
    s = four_node()
    commodities, nc = build_demands(s, compliance_rate=0.75, depth=1)
    private = [c for c in commodities if c.mode == "private"]
    assert all(c.demand == 45.0 and c.private for c in private)
    assert sum(d.rate for d in nc if d.trip == 0) == pytest.approx(15.0)
    assert {d.level for d in nc} == {0, 1}


def test_weight_grid_points():
    pts = WeightGrid(2, 11).points()
    assert len(pts) == 11 and pts[0] == (0.0, 1.0) and pts[-1] == (1.0, 0.0)
    assert all(math.isclose(sum(p), 1.0) for p in WeightGrid(3, 5).points())
    assert len(WeightGrid(3, 5).points()) == 15


@pytest.fixture(scope="module")
def congested():
    return generate_synthetic(1, 3, 3.0)


def test_single_point_grid(congested):
    res = maximize_mem(congested, points=[(0.3, 0.7)], lam=math.inf)
    assert res.best_weights == {"public": 0.3, "private": 0.7}
    assert len(res.table) == 1


def test_infeasible_lambda(congested):
    # transit-heavy weights: compliant cars always lose time to the others
    points = [(k / 10, 1 - k / 10) for k in range(5, 11)]
    full = maximize_mem(congested, points=points, lam=math.inf)
    smallest = min(d for _, _, d, _ in full.table)
    assert smallest > 0
    with pytest.raises(InfeasibleError) as info:
        maximize_mem(congested, points=points, lam=smallest / 2)
    assert info.value.min_delta == pytest.approx(smallest)


def test_grid_winner_matches_exhaustive_evaluation(congested):
    res = maximize_mem(congested, 11, lam=math.inf)
    scores = {}
    for k in range(11):
        w = (k / 10, 1 - k / 10)
        scores[w] = evaluate_pipeline(congested, {"public": w[0], "private": w[1]}).mem
    best = max(scores.values())
    assert res.best_mem == best
    winners = [w for w, v in scores.items() if v == best]
    got = (res.best_weights["public"], res.best_weights["private"])
    assert any(np.allclose(got, w, atol=1e-12) for w in winners)


def test_lambda_excludes_large_gaps(congested):
    full = maximize_mem(congested, 11, lam=math.inf)
    deltas = sorted(d for _, _, d, _ in full.table)
    lam = deltas[len(deltas) // 2]
    res = maximize_mem(congested, 11, lam=lam)
    assert res.best_delta <= lam
    assert res.best_mem == max(v for _, v, d, _ in full.table if d <= lam)


def test_sweep_weights_shape(congested):
    t = sweep_weights(congested, 5)
    assert t.column("w_public") == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert all(0 <= v <= 1 for v in t.column("mem"))


def test_sweep_compliance_endpoints(congested):
    t = sweep_compliance(congested, [0.0, 0.5, 1.0])
    deltas = t.column("delta_pv_min")
    assert deltas[0] is None and deltas[2] is None and deltas[1] is not None


def test_sweep_rejects_bad_values(congested):
    with pytest.raises(ValueError):
        sweep_compliance(congested, [0.5, 0.5])
    with pytest.raises(ValueError):
        sweep_demand_scale(congested, [1.0, 1.0])
    with pytest.raises(ValueError):
        sweep_hierarchy_depth(congested, [3, 2])


def test_demand_scale_free_flow_limit(congested):
    t = sweep_demand_scale(congested, [0.01], rates=(0.8,), resolution=3)
    assert abs(t.column("improvement")[0]) < 1e-6


def test_hierarchy_single_depth_matches_standalone_solve(congested):
    t = sweep_hierarchy_depth(congested, [2])
    ev = evaluate_pipeline(congested, depth=2, model="ch")
    assert t.column("mem") == [ev.mem]
    expected = wardrop_distance(congested, 2, ev.equilibrium.compliant.x)
    assert t.column("distance_to_wardrop_vph")[0] == pytest.approx(expected, abs=1e-9)
    ch = solve_cognitive_hierarchy(congested.graph, ev.equilibrium.compliant.x, ev.noncompliant)
    assert np.array_equal(ch.q, ev.equilibrium.noncompliant.q)


def test_depth_zero_is_one_level(congested):
    _, nc = build_demands(congested, depth=0)
    assert {d.level for d in nc} == {0}
    assert sweep_hierarchy_depth(congested, [0]).rows[0][0] == 0


def test_parallel_map_preserves_order(congested):
    serial = sweep_weights(congested, 3)
    pooled = sweep_weights(congested, 3, jobs=2)
    assert serial.rows == pooled.rows
