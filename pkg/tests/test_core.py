import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from walshtf.core import (SCALAR, DyadicInterval, GridFunction, ValueSpace, conjugate_exponent, dyadic_intervals,
                          integral, lp_norm, measure, pairing)
from walshtf import walsh

intervals = st.builds(lambda k, n: DyadicInterval(k, n % (1 << max(0, 3 - k)) if k <= 3 else 0),
                      st.integers(-6, 3), st.integers(0, 1000))


def test_interval_structure():
    assert DyadicInterval(0, 2).parent() == DyadicInterval(1, 1)
    assert DyadicInterval(1, 0).children() == (DyadicInterval(0, 0), DyadicInterval(0, 1))
    assert DyadicInterval(0, 1).center == 1.5
    I = DyadicInterval(-2, 3)
    assert (I.left, I.right, I.length) == (0.75, 1.0, 0.25)
    assert I.contains(0.8) and not I.contains(1.0)
    assert DyadicInterval(0, 0).contains_interval(I)
    assert DyadicInterval.from_json(I.to_json()) == I


def test_negative_index_rejected():
    with pytest.raises(ValueError):
        DyadicInterval(0, -1)


@given(intervals, intervals)
def test_nesting_trichotomy(I, J):
    cases = [J.contains_interval(I), I.contains_interval(J) and I != J, not I.intersects(J)]
    assert sum(cases) == 1


def test_lp_norm_examples():
    assert lp_norm(GridFunction.zeros(3), 2) == 0
    half = GridFunction.indicator(1, 0, DyadicInterval(-1, 0))
    assert lp_norm(half, 2) == pytest.approx(math.sqrt(0.5), abs=1e-15)
    assert lp_norm(GridFunction.indicator(4, 0, DyadicInterval(0, 0)), math.inf) == 1


def test_pairing_examples():
    one = GridFunction.indicator(3, 0, DyadicInterval(0, 0))
    assert pairing(one, GridFunction.zeros(3)) == 0
    assert pairing(one, one) == 1
    w1 = walsh.walsh_function(1, 3)
    assert pairing(w1, w1) == 1


def test_grid_mismatch():
    with pytest.raises(ValueError, match="incompatible discretizations"):
        pairing(GridFunction.zeros(3), GridFunction.zeros(4))


def test_values_are_read_only():
    f = GridFunction(2, 0, np.arange(4.0))
    with pytest.raises(ValueError):
        f.values[0] = 1.0


def test_integral_and_measure():
    f = GridFunction(2, 1, np.arange(8.0))
    assert integral(f)[0] == pytest.approx(sum(range(8)) / 4)
    assert measure(np.array([True, False, True, True]), 2) == 0.75
    assert len(dyadic_intervals(2, 1)) == 1 + 2 + 4 + 8


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0, math.inf])
def test_value_space_norm_axioms(p, rng):
    X = ValueSpace(4, p)
    for _ in range(50):
        u, v = rng.standard_normal((2, 4))
        c = rng.standard_normal()
        assert X.norm(np.zeros(4)) == 0
        assert X.norm(c * u) == pytest.approx(abs(c) * X.norm(u))
        assert X.norm(u + v) <= X.norm(u) + X.norm(v) + 1e-12
        assert abs(X.pairing(u, v)) <= X.norm(u) * X.dual_norm(v) + 1e-12


def test_weighted_dual_uses_reciprocal_weights(rng):
    X = ValueSpace(3, 3.0, (1.0, 2.0, 0.5))
    assert X.dual().weights == (1.0, 0.5, 2.0)
    for _ in range(50):
        u, v = rng.standard_normal((2, 3))
        assert abs(X.pairing(u, v)) <= X.norm(u) * X.dual_norm(v) + 1e-12


@pytest.mark.parametrize("p", [1.0, 2.0, 3.0, math.inf])
def test_norming_functional(p, rng):
    X = ValueSpace(3, p)
    v = rng.standard_normal(3)
    a = X.norming_functional(v)
    assert X.dual_norm(a) == pytest.approx(1.0)
    assert X.pairing(v, a) == pytest.approx(X.norm(v))


def test_space_descriptor_round_trip():
    X = ValueSpace.parse("lp:4:3")
    assert (X.d, X.p) == (4, 3.0)
    assert X.describe() == "lp:4:3"
    with pytest.raises(ValueError):
        ValueSpace.parse("l2:4")


def test_conjugate_exponent():
    assert conjugate_exponent(2) == 2
    assert conjugate_exponent(3) == 1.5
    assert conjugate_exponent(1) == math.inf
    assert conjugate_exponent(math.inf) == 1


def test_grid_function_json_round_trip(rng):
    f = GridFunction(2, 1, rng.standard_normal((8, 2)), ValueSpace(2, 3.0))
    data = f.to_json()
    assert (data["L"], data["M"], data["d"], data["norm"], data["p"]) == (2, 1, 2, "lp", 3.0)
    g = GridFunction.from_json(data)
    assert np.array_equal(f.values, g.values) and g.space == f.space


@given(st.lists(st.floats(-10, 10), min_size=8, max_size=8), st.lists(st.floats(-10, 10), min_size=8, max_size=8),
       st.sampled_from([1.0, 2.0, 3.0, math.inf]), st.floats(-5, 5))
def test_lp_norm_homogeneous_triangle_holder(a, b, p, c):
    f, g = GridFunction(3, 0, np.array(a)), GridFunction(3, 0, np.array(b))
    assert lp_norm(f * c, p) == pytest.approx(abs(c) * lp_norm(f, p), abs=1e-9)
    assert lp_norm(f + g, p) <= lp_norm(f, p) + lp_norm(g, p) + 1e-9
    assert abs(pairing(f, g)) <= lp_norm(f, p) * lp_norm(g, conjugate_exponent(p)) + 1e-9
