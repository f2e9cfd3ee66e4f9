import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobility_equity.equity import (
    ALWAYS_COMPLIANT,
    AccessMatrix,
    MetricError,
    ModeSpec,
    NodeProfile,
    ServiceCatalog,
    ServiceType,
    SmoothingSpec,
    count_accessible,
    indicator,
    kappa_from_income,
    mem,
    mobility_index,
    normalize_access,
)

EXACT = SmoothingSpec.exact_indicator()
BUS = ModeSpec("bus", 0.1, 0.8, 30.0)


def gini_oracle(eps, pops):
    """Double-sum form, evaluated in exact rational arithmetic."""
    e = [Fraction(x) for x in eps]
    p = [Fraction(x) for x in pops]
    num = sum(pi * pj * abs(ei - ej) for pi, ei in zip(p, e) for pj, ej in zip(p, e))
    den = 2 * sum(p) * sum(pi * ei for pi, ei in zip(p, e))
    return 1 - num / den


# --- indicator


def test_indicator_midpoint_and_saturation():
    for k in (0.01, 0.5, 7.0):
        assert indicator(30.0, 30.0, SmoothingSpec(k)) == 0.5
    assert indicator(-1e6, 30.0, SmoothingSpec(50.0)) == pytest.approx(1.0, abs=1e-9)
    assert indicator(1e6, 30.0, SmoothingSpec(50.0)) == pytest.approx(0.0, abs=1e-9)


def test_indicator_against_arbitrary_precision():
    mpmath.mp.dps = 40
    expected = 1 - 1 / (1 + mpmath.e)
    assert indicator(20.0, 30.0, SmoothingSpec(0.1)) == pytest.approx(float(expected), rel=1e-14)
    assert round(indicator(20.0, 30.0, SmoothingSpec(0.1)), 4) == 0.7311


def test_exact_indicator_is_a_step():
    assert indicator(30.0, 30.0, EXACT) == 1.0
    assert indicator(30.0000001, 30.0, EXACT) == 0.0


# --- count_accessible / normalize_access


def test_count_within_threshold():
    cat = ServiceCatalog({1: {"school": 4}})
    a = count_accessible({(0, "bus", 1): 10.0}, cat, [BUS], EXACT)
    assert a.get(0, "bus", "school") == 4


def test_count_at_threshold_with_sigmoid_halves():
    cat = ServiceCatalog({1: {"school": 4}})
    a = count_accessible({(0, "bus", 1): 30.0}, cat, [BUS], SmoothingSpec(0.5))
    assert a.get(0, "bus", "school") == 2.0


def test_count_two_destinations():
    cat = ServiceCatalog({1: {"school": 3}, 2: {"school": 5}})
    a = count_accessible({(0, "bus", 1): 10.0, (0, "bus", 2): 50.0}, cat, [BUS], EXACT)
    assert a.get(0, "bus", "school") == 3


def test_count_missing_time_raises():
    cat = ServiceCatalog({1: {"school": 3}, 2: {"school": 5}})
    with pytest.raises(KeyError, match="destination 2"):
        count_accessible({(0, "bus", 1): 10.0}, cat, [BUS], EXACT)


def _column(values):
    v = np.array(values, dtype=float).reshape(-1, 1, 1)
    return AccessMatrix(tuple(range(len(values))), ("bus",), ("school",), v)


@pytest.mark.parametrize(
    "raw, expected",
    [([2, 4, 8], [0.25, 0.5, 1.0]), ([0, 0, 0], [0, 0, 0]), ([3], [1.0]), ([0], [0.0])],
)
def test_normalize(raw, expected):
    assert normalize_access(_column(raw)).values.ravel().tolist() == expected


# --- mobility index


def test_mobility_index_examples():
    school = [ServiceType("school", 1.0)]
    assert mobility_index(NodeProfile(0, 1, 0.0), [[0.5]], [ModeSpec("m", 3.0, 1, 10)], school) == 0.5
    half = ModeSpec("m", math.log(2), 1, 10)
    assert mobility_index(NodeProfile(0, 1, 1.0), [[0.8]], [half], school) == pytest.approx(0.4, rel=1e-15)
    two = [ModeSpec("a", 0.0, 1, 10), ModeSpec("b", 10.0, 1, 10)]
    services = [ServiceType("x", 0.5), ServiceType("y", 0.5)]
    value = mobility_index(NodeProfile(0, 1, 0.1), np.ones((2, 2)), two, services)
    assert value == pytest.approx(1 + math.exp(-1), rel=1e-15)


# --- mem


def test_mem_uniform_is_one():
    assert mem([0.3, 0.3, 0.3], [1, 5, 2]) == 1.0


def test_mem_seven_ninths():
    assert mem([1, 2, 3], [1, 1, 1]) == pytest.approx(7 / 9, abs=1e-12)
    assert float(gini_oracle([1, 2, 3], [1, 1, 1])) == pytest.approx(7 / 9, abs=1e-15)


def test_mem_two_nodes_one_empty():
    # exact double sum: 2e / (2 * 2 * e) = 1/2
    e = 1.7
    assert mem([0.0, e], [1, 1]) == pytest.approx(float(gini_oracle([0.0, e], [1, 1])), abs=1e-15)
    assert mem([0.0, e], [1, 1]) == pytest.approx(0.5, abs=1e-15)


def test_mem_undefined_inputs():
    with pytest.raises(MetricError):
        mem([0.0, 0.0], [1, 1])
    with pytest.raises(MetricError):
        mem([1.0, 2.0], [0, 0])
    with pytest.raises(ValueError):
        mem([1.0], [1, 2])


positive = st.floats(0.01, 100, allow_nan=False)
instance = st.integers(1, 12).flatmap(lambda n: st.tuples(st.lists(positive, min_size=n, max_size=n), st.lists(positive, min_size=n, max_size=n)))


@settings(max_examples=200, deadline=None)
@given(instance)
def test_mem_matches_double_sum(case):
    eps, pops = case
    assert mem(eps, pops) == pytest.approx(float(gini_oracle(eps, pops)), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(instance, st.floats(0.1, 1e3), st.floats(0.1, 1e3), st.randoms(use_true_random=False))
def test_mem_invariances(case, a, b, rnd):
    eps, pops = case
    base = mem(eps, pops)
    assert 0.0 <= base <= 1.0
    assert mem([a * e for e in eps], pops) == pytest.approx(base, abs=1e-12)
    assert mem(eps, [b * p for p in pops]) == pytest.approx(base, abs=1e-12)
    order = list(range(len(eps)))
    rnd.shuffle(order)
    assert mem([eps[i] for i in order], [pops[i] for i in order]) == pytest.approx(base, abs=1e-12)
    # splitting a node into two halves with the same MI changes nothing
    split_e = eps + [eps[0]]
    split_p = [pops[0] / 2] + pops[1:] + [pops[0] / 2]
    assert mem(split_e, split_p) == pytest.approx(base, abs=1e-12)


def test_unpopulated_nodes_do_not_count():
    assert mem([1.0, 1.0, 9.0], [2, 3, 0]) == 1.0


# --- kappa


def test_kappa_examples():
    assert kappa_from_income([100e3, 100e3], 1.0).tolist() == [1.0, 1.0]
    assert kappa_from_income([50e3, 100e3], 1.0, 10.0).tolist() == [2.0, 1.0]
    assert kappa_from_income([1e3, 100e3], 1.0, 10.0)[0] == 10.0


def test_kappa_decreases_with_income():
    k = kappa_from_income([20e3, 40e3, 80e3], 0.5, 100.0, scale=2.0)
    assert k.tolist() == [4.0, 2.0, 1.0]


def test_kappa_rejects_bad_input():
    with pytest.raises(ValueError):
        kappa_from_income([0.0, 1.0])
    with pytest.raises(ValueError):
        kappa_from_income([1.0], base=0.0)


def test_mode_and_catalog_validation():
    with pytest.raises(ValueError):
        ModeSpec("x", 1.0, 1.5, 10.0)
    with pytest.raises(ValueError):
        ModeSpec("x", 1.0, 1.0, 10.0, compliance_class="sometimes")
    with pytest.raises(ValueError):
        ServiceCatalog({1: {"school": 1.5}})
    assert ModeSpec("bus", 0.1, 0.8, 30.0).compliance_class == ALWAYS_COMPLIANT
