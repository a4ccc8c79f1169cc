import csv
import io
import math

import numpy as np
import pytest

from walshtf import walsh
from walshtf.carleson import BreakpointData, density, density_table, optimal_breakpoints, random_breakpoints, size
from walshtf.core import DyadicInterval, GridFunction, ValueSpace, lp_norm, measure
from walshtf.decomposition import (bmo_size_check, check_parameters, density_decompose, full_decompose,
                                   major_subset, normalizing_dilation, restricted_pairing_ratio,
                                   restricted_pairing_value, size_decompose, tile_type_constant, tile_type_ratio)
from walshtf.experiments import decomposition_instance
from walshtf.instances import (converse_instance, good_collections, random_collection, random_function,
                               random_set)
from walshtf.tiles import (Bitile, GoodCollection, bitile_le, check_good, converse_trees, grid_bitiles,
                           good_set_mismatches, overlapping_parts, tile_le)
from walshtf.variation import dyadic_maximal, haar_cotype_sum


def _instance(rng, L=4, count=30):
    bits = random_collection(L, 0, rng, count)
    g = GridFunction(L, 0, (rng.random(1 << L) < 0.6) * rng.uniform(-1, 1, 1 << L))
    B = random_breakpoints(1 << L, 3, rng, top=2.0 ** L)
    return bits, g, B


def _average(P: Bitile, g, B):
    """Density average over a single bitile, straight from the definition."""
    rc = B.r_conj
    total = 0.0
    for x in range(g.n_cells):
        if P.time.contains((x + 0.5) * g.cell_width):
            for j in range(B.K[x]):
                if P.freq.contains(B.N[x, j]):
                    total += abs(g.values[x, 0]) ** rc * abs(B.a[x, j, 0]) ** rc
    return total * g.cell_width / P.time.length


def _above(P: Bitile, L: int):
    """Grid bitiles P' >= P (general order) inside [0, 1)."""
    return [Q for Q in grid_bitiles(L, 0, "d") if bitile_le(P, Q)]


# ---------------------------------------------------------------- density selection

def test_density_extremes(rng):
    bits, g, B = _instance(rng)
    huge = density_decompose(bits, g, B, 1e6)
    assert huge.sparse == frozenset(bits) and not huge.trees
    tiny = density_decompose(bits, g, B, 1e-9)
    touched = [P for P in bits if density([P], g, B) > 0]
    assert not (tiny.sparse & set(touched))
    with pytest.raises(ValueError):
        density_decompose(bits, g, B, 0.0)


def test_density_selection_against_definition(rng):
    L = 3
    for _ in range(10):
        bits, g, B = _instance(rng, L, 12)
        delta = density(bits, g, B) * rng.uniform(0.3, 0.9)
        if delta == 0:
            continue
        threshold = delta ** B.r_conj
        result = density_decompose(bits, g, B, delta)
        for P in result.sparse:
            assert all(_average(Q, g, B) <= threshold + 1e-15 for Q in _above(P, L))
        tops = result.tops
        for T in result.trees:
            assert _average(T.top, g, B) > threshold
            for P in T.bitiles:
                assert any(_average(Q, g, B) > threshold for Q in _above(P, L))
        for S in tops:
            assert not any(S != T and bitile_le(S, T) for T in tops)
        members = [P for T in result.trees for P in T.bitiles]
        assert len(members) == len(set(members))
        assert set(members) | result.sparse == set(bits)
        assert result.certificate.holds


def test_density_counting_bound_exact(rng):
    for _ in range(15):
        bits, g, B, E, F = _instance_with_sets(rng)
        delta = density(bits, g, B) * rng.uniform(0.1, 0.9)
        cert = density_decompose(bits, g, B, delta, E).certificate
        assert cert.holds, cert.max_ratio


def _instance_with_sets(rng, L=5):
    bits, f, g, B, E, F = decomposition_instance(rng, L, 3.0)
    return bits, g, B, E, F


# ---------------------------------------------------------------- size selection

def test_size_examples(rng):
    f = random_function(4, 0, rng=rng)
    bits = random_collection(4, 0, rng, 20, "d")
    s = size(bits, f, 2)
    none = size_decompose(bits, f, 2, s)
    assert none.small == frozenset(bits) and not none.trees
    P = Bitile.make(-2, 1, 1)
    single = size([P], f, 2)
    chosen = size_decompose([P], f, 2, single * 0.99)
    assert not chosen.small and chosen.trees[0].bitiles == {P}
    with pytest.raises(ValueError):
        size_decompose(bits, f, 2, -1.0)


@pytest.mark.parametrize("q", [2.0, 3.0])
def test_size_selection_outputs(q, rng):
    for _ in range(20):
        L = int(rng.integers(3, 6))
        f = random_function(L, 0, rng=rng)
        bits = random_collection(L, 0, rng, 40, "d")
        sigma = size(bits, f, q) * rng.uniform(0.1, 0.9)
        result = size_decompose(bits, f, q, sigma)
        assert size(result.small, f, q) <= sigma * (1 + 1e-12)
        members = [P for T in result.trees for P in T.bitiles]
        assert len(members) == len(set(members)) and set(members) | result.small == set(bits)
        G = result.up_trees
        assert check_good(G)
        assert not overlapping_parts(G.bitiles(), "d")
        assert not good_set_mismatches(G, L)
        for e in result.energies:
            assert e > sigma ** q


def test_size_counting_at_q2(rng):
    # orthogonality of the selected up-parts makes the counting bound hold with constant 1
    for _ in range(10):
        L = 5
        f = random_function(L, 0, rng=rng)
        bits = random_collection(L, 0, rng, 60, "d")
        sigma = size(bits, f, 2) * rng.uniform(0.2, 0.8)
        assert size_decompose(bits, f, 2, sigma).certificate.max_ratio <= 1 + 1e-12


def test_converse_collections_revalidate(rng):
    for _ in range(10):
        C = converse_instance(rng, 5)
        for G in C.splits:
            assert check_good(G)
            assert not good_set_mismatches(G, 5)


# ---------------------------------------------------------------- monotonicity

def test_subcollections_do_not_increase(rng):
    for _ in range(20):
        L = 4
        bits, g, B = _instance(rng, L, 25)
        f = random_function(L, 0, rng=rng)
        sub = [P for P in bits if rng.random() < 0.5]
        assert density(sub, g, B) <= density(bits, g, B)
        assert size(sub, f, 2) <= size(bits, f, 2) * (1 + 1e-12)


# ---------------------------------------------------------------- full decomposition

def test_full_decompose_zero_function(rng):
    bits, f, g, B, E, F = decomposition_instance(rng, 4, 3.0)
    report = full_decompose(bits, GridFunction.zeros(4), g, B, 2, 3, E, F)
    assert not report.levels and report.residual == frozenset(bits)


def test_full_decompose_haar_trace():
    L = 2
    P, Q = Bitile.make(-1, 0, 0), Bitile.make(-1, 1, 0)
    f = walsh.haar(DyadicInterval(0, 0), L)
    g = GridFunction(L, 0, np.ones(4))
    B = BreakpointData.from_rows([([1.0], [1.0])] * 4, 3)
    one = np.ones(4, dtype=bool)
    assert size([P, Q], f, 2) == pytest.approx(1.0)
    assert density([P, Q], g, B) == pytest.approx(1.0)
    report = full_decompose([P, Q], f, g, B, 2, 3, one, one)
    # both measures are 1 and both quantities are 1, so the first level is n = 0; at that level the
    # density threshold 2^(-2/3) catches both bitiles under the heavy top [0,1) x [0,2)
    assert list(report.levels) == [0]
    (tree,) = report.levels[0]
    assert tree.top == Bitile.make(0, 0, 0) and tree.bitiles == {P, Q}
    assert not report.residual and report.bounds_hold
    cert = report.certificates[0]
    assert cert.density_trees == 1 and cert.size_trees == 0 and cert.sum_ratio == 1.0


def test_full_decompose_random(rng):
    for _ in range(8):
        bits, f, g, B, E, F = decomposition_instance(rng, 5, 3.0)
        report = full_decompose(bits, f, g, B, 2, 3, E, F)
        assert report.is_partition_of(bits)
        assert report.bounds_hold
        assert all(d.holds for d, _ in report.counting.values())
        assert density(report.residual, g, B) <= 1e-12 or size(report.residual, f, 2) <= 1e-12


def test_full_decompose_support_checks(rng):
    bits, f, g, B, E, F = decomposition_instance(rng, 4, 3.0)
    with pytest.raises(ValueError):
        full_decompose(bits, f * 3.0, g, B, 2, 3, E, F)
    with pytest.raises(ValueError):
        full_decompose(bits, f, g, B, 2, 3, E, np.zeros_like(F))


def test_report_serialization(rng):
    bits, f, g, B, E, F = decomposition_instance(rng, 4, 3.0)
    report = full_decompose(bits, f, g, B, 2, 3, E, F)
    data = report.to_json()
    assert set(data) == {"measures", "levels", "residual", "certificates", "empirical_constants"}
    for kind in ("density", "size"):
        rows = list(csv.reader(io.StringIO(report.certificate_csv(kind))))
        assert rows[0] == ["level", "J", "lhs", "rhs", "ratio"]
        for row in rows[1:]:
            assert float(row[2]) >= 0


# ---------------------------------------------------------------- tile type

def test_tile_type_examples(rng):
    L = 4
    P = Bitile.make(-2, 1, 1)
    G = GoodCollection([[P]], [P])
    f = random_function(L, 0, rng=rng)
    c = walsh.tile_coefficient(f, P.down())[0]
    expected = lp_norm(walsh.wave_packet(P.down(), L) * c, 3) / lp_norm(f, 3)
    assert tile_type_ratio(f.space, G, f, 3) == pytest.approx(expected, rel=1e-12)
    off = GridFunction(L, 0, np.where(np.arange(16) >= 8, 1.0, 0.0))
    assert tile_type_ratio(off.space, GoodCollection([[Bitile.make(-1, 0, 0)]], [Bitile.make(-1, 0, 0)]), off, 2) == 0
    with pytest.raises(ZeroDivisionError):
        tile_type_ratio(f.space, G, GridFunction.zeros(L), 2)
    with pytest.raises(ValueError):
        tile_type_ratio(ValueSpace(2, 2.0), G, f, 2)


@pytest.mark.parametrize("L", [3, 5])
def test_tile_type_on_converse_family_is_haar_cotype(L, rng):
    family = [DyadicInterval(-k, n) for k in range(L) for n in range(1 << k)]
    C = converse_trees(family)
    twist = walsh.wave_packet_inf(C.top.up(), L)
    for _ in range(5):
        f = random_function(L, 0, rng=rng)
        lhs = tile_type_ratio(f.space, C.levels, f * twist, 2) * lp_norm(f * twist, 2)
        assert lhs == pytest.approx(haar_cotype_sum(f, 2), rel=1e-12)


def test_tile_type_bounded_at_q2(rng):
    estimate = tile_type_constant(good_collections(5, rng, 12), 2.0, 5, rng=rng, trials=4)
    assert estimate.max_ratio <= 1 + 1e-12


# ---------------------------------------------------------------- major subsets

def _maximal_oracle(mask, L, M=0):
    """Dyadic maximal function of an indicator: max average over every dyadic interval holding the cell."""
    cells = len(mask)
    out = np.zeros(cells)
    for J in [DyadicInterval(k, n) for k in range(-L, M + 1) for n in range(1 << (M - k))]:
        lo, hi = J.cell_range(L)
        out[lo:hi] = np.maximum(out[lo:hi], mask[lo:hi].mean())
    return out


def test_major_subset_examples():
    L, M = 2, 1
    cells = np.arange(8)
    E = cells < 6                           # [0, 3/2)
    empty = np.zeros(8, dtype=bool)
    result = major_subset(E, empty, L, M)
    assert not result.G.any() and np.array_equal(result.E_prime, E)
    F = cells < 1                           # [0, 1/4)
    result = major_subset(E, F, L, M)
    expected_G = _maximal_oracle(F.astype(float), L, M) > 4 * 0.25
    assert result.case == 1 and result.dilation == 0
    assert np.array_equal(result.G, expected_G)
    assert measure(result.E_prime, L) >= measure(E, L) / 2


def test_major_subset_case_two():
    L, M = 1, 2
    E = np.array([1, 0, 1, 0, 1, 0, 1, 0], dtype=bool)       # |E| = 2, spread out
    F = np.ones(8, dtype=bool)                                # |F| = 4
    result = major_subset(E, F, L, M)
    assert result.case == 2 and not result.G.any()
    with pytest.raises(ValueError):
        major_subset(E, F, L, M, case=1)
    with pytest.raises(ValueError):
        major_subset(np.zeros(8, dtype=bool), F, L, M)


def test_major_subsets_keep_half(rng):
    for _ in range(50):
        L, M = 5, int(rng.integers(0, 3))
        E = random_set(L, M, rng, blocks=bool(rng.integers(2)))
        F = random_set(L, M, rng, blocks=bool(rng.integers(2)))
        result = major_subset(E, F, L, M)
        scaled = 2.0 ** result.dilation
        assert 1 < scaled * measure(E, L) <= 2
        m = result.measures()
        if result.case == 1:
            assert np.array_equal(result.G, _maximal_oracle(F.astype(float), L, M) > 4 * scaled * m["F"])
            assert m["E_prime"] >= m["E"] / 2
        else:
            assert np.array_equal(result.G, _maximal_oracle(E.astype(float), L, M) > 8 / (scaled * m["F"]))
            assert m["F_prime"] >= m["F"] / 2


def test_normalizing_dilation():
    assert normalizing_dilation(2.0) == 0
    assert normalizing_dilation(1.0) == 1
    assert normalizing_dilation(0.3) == 2
    assert normalizing_dilation(8.0) == -2


# ---------------------------------------------------------------- restricted pairing

def test_parameter_constraint():
    check_parameters(3, 3, 2)
    with pytest.raises(ValueError, match=r"max\(q, p'\(q-1\)\) < r"):
        check_parameters(3, 2, 2)
    with pytest.raises(ValueError, match=r"max\(q, p'\(q-1\)\) < r"):
        check_parameters(1.5, 3, 2)        # p' (q - 1) = 3
    with pytest.raises(ValueError):
        check_parameters(3, math.inf, 2)


def test_pairing_examples(rng):
    L = 2
    P = Bitile.make(0, 0, 0)
    one = GridFunction(L, 0, np.ones(4))
    B = BreakpointData.from_rows([([1.0], [1.0])] * 4, 3)
    # <f, w_{P_d}> = 1, w_{P_d} = 1 and a_P = 1 everywhere: the pairing is the integral of 1
    assert restricted_pairing_value(one, one, [P], B) == pytest.approx(1.0)
    assert restricted_pairing_value(GridFunction.zeros(L), one, [P], B) == 0
    E = F = np.ones(4, dtype=bool)
    est = restricted_pairing_ratio([P], major_subset(E, F, L), 3, 3, 2, rng=rng, trials=6)
    # |t_P| = |<f, 1>| |<a_P, g>| <= 1 for |f|, |g| <= 1 on [0, 1)
    assert 0 < est.max_ratio <= 1 + 1e-12
    with pytest.raises(ValueError, match="violated"):
        restricted_pairing_ratio([P], major_subset(E, F, L), 3, 2, 2)


def test_pairing_ratios_finite(rng):
    for _ in range(5):
        L = 4
        bits = random_collection(L, 0, rng, 20)
        E, F = random_set(L, 0, rng), random_set(L, 0, rng)
        est = restricted_pairing_ratio(bits, major_subset(E, F, L), 3, 3, 2, rng=rng, trials=4)
        assert all(math.isfinite(r) and r >= 0 for r in est.ratios)


# ---------------------------------------------------------------- Haar BMO size

def test_bmo_size_examples():
    L = 3
    K = DyadicInterval(0, 0)
    zero = bmo_size_check([K], GridFunction.zeros(L), 1.0, K, 2)
    assert zero.holds and zero.lhs == 0
    h = walsh.haar(K, L)
    check = bmo_size_check([K], h, 1.0, K, 2)
    assert check.lhs == pytest.approx(1.0) and check.rhs == 1.0 and check.holds


def test_bmo_size_counterexample():
    # f = h_[0,1) + h_[0,1/2) + h_[1/2,1): every interval meets the precondition at lambda = 1,
    # yet the left side is sqrt(3); the inequality only holds up to a constant
    L = 2
    family = [DyadicInterval(0, 0), DyadicInterval(-1, 0), DyadicInterval(-1, 1)]
    f = sum((walsh.haar(I, L) for I in family), GridFunction.zeros(L))
    check = bmo_size_check(family, f, 1.0, DyadicInterval(0, 0), 2)
    assert not check.skipped
    assert check.lhs == pytest.approx(math.sqrt(3)) and not check.holds


def test_bmo_size_skips_failing_intervals(rng):
    L = 4
    f = random_function(L, 0, rng=rng) * 5
    family = [DyadicInterval(-k, n) for k in range(L) for n in range(1 << k)]
    check = bmo_size_check(family, f, 0.5, DyadicInterval(0, 0), 2)
    maximal = dyadic_maximal(f).scalar()
    for I in check.skipped:
        lo, hi = I.cell_range(L)
        assert maximal[lo:hi].min() > 0.5
    assert len(check.used) + len(check.skipped) == len(family)
