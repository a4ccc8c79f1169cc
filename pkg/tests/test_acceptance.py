"""One test per acceptance criterion; each records a single PASS/FAIL line, printed in the
terminal summary (and immediately with -s)."""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from walshtf import carleson, decomposition, experiments as ex, instances, tiles, variation, walsh
from walshtf.core import SCALAR, GridFunction, ValueSpace, measure

BASELINES = json.loads((Path(__file__).parent / "baselines.json").read_text())
SEED = 2024
LINES: list[str] = []


def report(number: int, name: str, ok: bool, detail: str):
    line = f"[acceptance {number:2d}] {'PASS' if ok else 'FAIL'} {name}: {detail}"
    LINES.append(line)
    print(line)
    assert ok, detail


def _outcomes(fn, trials, seed=SEED):
    results = ex.run_trials(fn, seed, trials)
    return sum(ok for ok, _ in results), max(v for _, v in results)


def test_01_walsh_orthonormality():
    start = time.perf_counter()
    W = walsh.walsh_matrix(10).astype(float)
    dev = float(np.max(np.abs(W @ W.T / 1024 - np.eye(1024))))
    elapsed = time.perf_counter() - start
    report(1, "walsh orthonormality L=10", dev <= 1e-9 and elapsed < 5, f"max dev {dev:.2e}, {elapsed:.2f} s")


def test_02_fast_transform_oracle():
    def trial(rng):
        results = [ex.fwht_trial(rng, L) for L in range(0, 7)]
        return all(ok for ok, _ in results), max(v for _, v in results)
    passed, worst = _outcomes(trial, 50)
    report(2, "fast transform = naive, L<=6", passed == 50, f"{passed}/50 exact, max dev {worst:.1e}")


def test_03_haar_factorization():
    passed, worst = _outcomes(lambda rng: ex.haar_trial(rng, 8), 200)
    report(3, "haar factorization L=8", passed == 200 and worst <= 1e-12, f"{passed}/200, max dev {worst:.2e}")


def test_04_telescoping():
    passed, worst = _outcomes(lambda rng: ex.telescoping_trial(rng, 8, 1e-9), 100)
    report(4, "telescoping L=8", passed == 100, f"{passed}/100, max dev {worst:.2e}")


def test_05_good_collection_laws():
    def trial(rng):
        L = int(rng.integers(3, 7))
        return ex.good_law_trial(rng, L)
    passed, _ = _outcomes(trial, 100)
    report(5, "good-collection laws L<=6", passed == 100, f"{passed}/100 collections")


def test_06_variation_dp_oracle():
    # integer data; exact equality except where the norm itself involves roots (tolerance 1e-12)
    passed, worst = _outcomes(lambda rng: ex.variation_trial(rng, 1e-12), 500)
    report(6, "variation DP = enumeration", passed == 500, f"{passed}/500, max dev {worst:.1e}")


def test_07_crp_dp_oracle():
    passed, worst = _outcomes(lambda rng: ex.crp_trial(rng, 3.0), 200)
    report(7, "C_rP DP = brute force", passed == 200, f"{passed}/200 exact, max dev {worst:.1e}")


def test_08_density_counting():
    passed, worst = _outcomes(lambda rng: ex.density_counting_trial(rng, 6, 3.0), 100)
    report(8, "density counting exact L=6", passed == 100, f"{passed}/100, max lhs/rhs {worst:.3f}")


def test_09_size_postcondition():
    passed, worst = _outcomes(lambda rng: ex.size_selection_trial(rng, 6, 2.0, SCALAR), 100)
    report(9, "size postcondition + goodness", passed == 100, f"{passed}/100")


def test_10_tree_operator_gate():
    base = BASELINES["tree_operator_ratio"]
    ratios = ex.run_trials(lambda rng: ex.tree_operator_ratio(rng, 6, 3.0), SEED, 200)
    top = max(ratios)
    ok = all(math.isfinite(v) for v in ratios) and top <= 1.10 * base["max"]
    report(10, "tree operator ratio L=6 r=3", ok, f"max {top:.4f} (baseline {base['max']:.4f})")


@pytest.mark.parametrize("space", ["lp:1:2"])
def test_11_tile_type_stability(space):
    X = ValueSpace.parse(space)
    maxima = {}
    for L in (4, 6, 8):
        rng = np.random.default_rng(SEED + L)
        collections = instances.good_collections(L, rng, 30)
        maxima[L] = decomposition.tile_type_constant(collections, 2.0, L, 0, X, rng, trials=4).max_ratio
    growth = maxima[8] / maxima[4] - 1
    report(11, "tile-type q=2 stability", growth < 0.10,
           f"max {maxima[4]:.6f} / {maxima[6]:.6f} / {maxima[8]:.6f} at L=4/6/8, growth {growth:+.2%}")


def test_12_carleson_stability():
    start = time.perf_counter()
    maxima = {L: max(ex.run_trials(lambda rng: ex.carleson_ratio(rng, L, 3.0, 3.0), SEED, 100)) for L in (6, 10)}
    elapsed = time.perf_counter() - start
    growth = maxima[10] / maxima[6] - 1
    report(12, "variational Carleson stability", growth < 0.10 and elapsed < 60,
           f"max {maxima[6]:.4f} -> {maxima[10]:.4f}, growth {growth:+.2%}, {elapsed:.1f} s")


@pytest.mark.parametrize("space", ["lp:1:2", "lp:4:2"])
def test_13_lepingle_stability(space):
    X = ValueSpace.parse(space)
    maxima = {L: max(ex.run_trials(lambda rng: ex.lepingle_ratio(rng, L, 3.0, 3.0, X), SEED, 100)) for L in (6, 10)}
    growth = maxima[10] / maxima[6] - 1
    report(13, f"Lepingle stability {space}", growth < 0.10,
           f"max {maxima[6]:.4f} -> {maxima[10]:.4f}, growth {growth:+.2%}")


def test_14_major_subsets():
    def trial(rng):
        L = 6
        E = instances.random_set(L, 0, rng, blocks=bool(rng.random() < 0.5))
        F = instances.random_set(L, 0, rng, fill=float(rng.choice([0.02, 0.1, 0.5, 0.9])))
        major = decomposition.major_subset(E, F, L)
        m = major.measures()
        ok = m["E_prime"] >= m["E"] / 2 if major.case == 1 else m["F_prime"] >= m["F"] / 2
        return ok, major.case
    results = ex.run_trials(trial, SEED, 100)
    passed = sum(ok for ok, _ in results)
    cases = [c for _, c in results]
    report(14, "major subsets keep half", passed == 100,
           f"{passed}/100 (case 1: {cases.count(1)}, case 2: {cases.count(2)})")


def test_15_restricted_pairing_gate():
    base = BASELINES["restricted_pairing_ratio"]
    ratios = ex.run_trials(lambda rng: ex.pairing_ratio(rng, 6, 3.0, 3.0, 2.0), SEED, 100)
    top = max(ratios)
    ok = all(math.isfinite(v) for v in ratios) and top <= 1.10 * base["max"]
    report(15, "restricted pairing L=6 (3,3,2)", ok, f"max {top:.4f} (baseline {base['max']:.4f})")
