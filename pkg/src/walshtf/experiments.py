"""Seeded verification suites and constant estimators shared by the command line and the tests.

Every trial draws from its own generator, seeded by an integer derived from the base seed
with SeedSequence.spawn, so results do not depend on scheduling or worker count.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import carleson, decomposition, instances, tiles, variation, walsh
from .core import SCALAR, GridFunction, ValueSpace, conjugate_exponent


@dataclass
class ExperimentConfig:
    suite: str = "identities"
    L: tuple = (8,)
    M: int = 0
    space: str = "lp:1:2"
    p: float = 3.0
    r: float = 3.0
    q: float = 2.0
    seed: int = 0
    trials: int = 20
    tol: float = 1e-9
    out: str | None = None

    def value_space(self) -> ValueSpace:
        return ValueSpace.parse(self.space)

    def to_json(self) -> dict:
        data = asdict(self)
        data["L"] = list(self.L)
        data.pop("out")
        return data


@dataclass
class CheckResult:
    name: str
    passed: int
    total: int
    worst: float = 0.0              # largest deviation or ratio seen
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.passed == self.total

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "total": self.total, "ok": self.ok,
                "worst": self.worst, "notes": self.notes}


def worker_count() -> int:
    cap = os.environ.get("WTF_THREADS")
    if cap:
        return max(1, int(cap))
    return min(8, os.cpu_count() or 1)


def trial_seeds(seed: int, trials: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(trials)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


def run_trials(fn: Callable[[np.random.Generator], object], seed: int, trials: int) -> list:
    """Evaluate fn on one generator per trial, in trial order, across a capped worker pool."""
    seeds = trial_seeds(seed, trials)
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(lambda s: fn(np.random.default_rng(s)), seeds))


def _tally(name: str, outcomes: list[tuple[bool, float]]) -> CheckResult:
    passed = sum(1 for ok, _ in outcomes if ok)
    worst = max((v for _, v in outcomes), default=0.0)
    return CheckResult(name, passed, len(outcomes), float(worst))


# ---------------------------------------------------------------- single trials

def walsh_gram_deviation(L: int) -> float:
    W = walsh.walsh_matrix(L).astype(float)
    return float(np.max(np.abs(W @ W.T / (1 << L) - np.eye(1 << L))))


def fwht_trial(rng, L: int):
    f = instances.random_function(L, 0, SCALAR, rng, "integer")
    dev = float(np.max(np.abs(walsh.walsh_coefficients(f) - walsh.naive_walsh_coefficients(f))))
    return dev == 0.0, dev


def haar_trial(rng, L: int):
    T = instances.random_tree(L, 0, rng, "up", max_size=1)
    P = next(iter(T))
    kind = "up"
    if rng.random() < 0.5:
        T = instances.random_tree(L, 0, rng, "down", max_size=1)
        P, kind = next(iter(T)), "down"
    packet, outer = (P.down(), T.top.up()) if kind == "up" else (P.up(), T.top.down())
    sign = tiles.haar_factorization(P, T.top, L, 0, kind)
    lhs = walsh.wave_packet(packet, L).values
    rhs = (walsh.wave_packet_inf(outer, L) * walsh.haar(P.time, L)).values * sign
    dev = float(np.max(np.abs(lhs - rhs)))
    return dev <= 1e-12, dev


def telescoping_trial(rng, L: int, tol: float):
    f = instances.random_function(L, 0, SCALAR, rng)
    a, b = sorted(int(x) for x in rng.choice((1 << L) + 1, 2, replace=False))
    dev = carleson.telescoping_check(f, a, b)
    return dev <= tol, dev


def good_law_trial(rng, L: int):
    kind = int(rng.integers(3))
    if kind == 0:
        G = instances.converse_instance(rng, L).splits[int(rng.integers(2))]
    else:
        G = instances.size_selected_collection(L, 0, rng, max_freq=float(1 << L) if kind == 2 else None)
        G = G.reflected(L) if kind == 2 else G
    part = "d" if G.orientation == "u" else "u"
    ok = bool(tiles.check_good(G)) and not tiles.good_set_mismatches(G, L) and not tiles.overlapping_parts(G.bitiles(), part)
    return ok, 0.0 if ok else 1.0


def reflection_trial(rng, L: int, r: float, tol: float):
    bitiles = instances.random_collection(L, 0, rng, int(rng.integers(1, 5)), "du")
    f = instances.random_function(L, 0, SCALAR, rng, "integer")
    N = tiles.reflection_exponent(bitiles)
    if N > L:
        return True, 0.0
    dev = max(abs(carleson.c_rp_tilde(f, bitiles, r, x) - carleson.tilde_via_reflection(f, bitiles, r, x, N))
              for x in range(f.n_cells))
    return dev <= tol, dev


def converse_trial(rng, L: int, r: float, tol: float):
    C = instances.converse_instance(rng, L)
    f = instances.random_function(L, 0, SCALAR, rng)
    dev = tiles.converse_identity_deviation(C, f, r)
    return dev <= tol, dev


def variation_trial(rng, tol: float):
    n = int(rng.integers(1, 9))
    d = int(rng.choice([1, 2, 3]))
    space = SCALAR if d == 1 else ValueSpace(d, float(rng.choice([1.0, 2.0, 3.0, math.inf])))
    r = float(rng.choice([1.0, 2.0, 3.0, 2.5, math.inf]))
    seq = rng.integers(-5, 6, (n, d)).astype(float)
    fast, slow = variation.variation_norm(seq, r, space), variation.variation_bruteforce(seq, r, space)
    exact = r in (1.0, 2.0, 3.0, math.inf) and (d == 1 or space.p in (1.0, math.inf))
    dev = abs(fast - slow)
    return (dev == 0.0) if exact else dev <= tol * max(1.0, slow), dev


def crp_trial(rng, r: float):
    L = int(rng.integers(1, 4))
    bitiles = instances.random_collection(L, 0, rng, int(rng.integers(1, 4)), "du")
    f = instances.random_function(L, 0, SCALAR, rng, "integer")
    tilde = bool(rng.random() < 0.5)
    dev = max(abs(carleson.c_rp(f, bitiles, r, x, tilde) - carleson.c_rp_bruteforce(f, bitiles, r, x, tilde=tilde))
              for x in range(f.n_cells))
    return dev == 0.0, dev


def linearization_trial(rng, L: int, r: float, space: ValueSpace, tol: float):
    bitiles = instances.random_collection(L, 0, rng, 12, "du")
    f = instances.random_function(L, 0, space, rng)
    B = carleson.optimal_breakpoints(f, bitiles, r)
    lin = carleson.linearized_cp(f, bitiles, None, B).scalar()
    direct = carleson.c_rp_all(f, bitiles, r)
    dev = float(np.max(np.abs(lin - direct) / np.maximum(1.0, direct)))
    return dev <= tol, dev


def density_counting_trial(rng, L: int, r: float):
    bitiles = instances.random_collection(L, 0, rng, 60, "du")
    E = instances.random_set(L, 0, rng)
    g = GridFunction(L, 0, rng.uniform(-1, 1, 1 << L) * E)
    B = instances.breakpoints_near(bitiles, 1 << L, r, rng)
    D = carleson.density(bitiles, g, B)
    if D == 0:
        return True, 0.0
    part = decomposition.density_decompose(bitiles, g, B, D * rng.uniform(0.1, 0.95), E)
    ok = part.certificate.holds and part.sparse | {P for T in part.trees for P in T} == set(bitiles)
    return ok, part.certificate.max_ratio


def size_selection_trial(rng, L: int, q: float, space: ValueSpace):
    bitiles = instances.random_collection(L, 0, rng, 60, "d")
    f = instances.random_function(L, 0, space, rng)
    s = carleson.size(bitiles, f, q)
    sigma = s * rng.uniform(0.05, 0.95)
    part = decomposition.size_decompose(bitiles, f, q, sigma)
    ok = carleson.size(part.small, f, q) <= sigma and bool(tiles.check_good(part.up_trees))
    return ok, part.certificate.max_ratio


def decomposition_instance(rng, L: int, r: float, space: ValueSpace = SCALAR, count: int = 60):
    bitiles = instances.random_collection(L, 0, rng, count, "du")
    F = instances.random_set(L, 0, rng)
    E = instances.random_set(L, 0, rng)
    f = instances.random_function(L, 0, space, rng, "bounded") * GridFunction(L, 0, F.astype(float))
    g = GridFunction(L, 0, rng.uniform(-1, 1, 1 << L) * E)
    B = instances.breakpoints_near(bitiles, 1 << L, r, rng, space=space.dual())
    return bitiles, f, g, B, E, F


def full_decomposition_trial(rng, L: int, r: float, q: float, space: ValueSpace):
    bitiles, f, g, B, E, F = decomposition_instance(rng, L, r, space)
    report = decomposition.full_decompose(bitiles, f, g, B, q, r, E, F)
    ok = report.is_partition_of(bitiles) and report.bounds_hold
    return ok, report.empirical_constants["sum_ratio"]


def major_subset_trial(rng, L: int):
    E = instances.random_set(L, 0, rng, blocks=bool(rng.random() < 0.5))
    F = instances.random_set(L, 0, rng, fill=float(rng.choice([0.02, 0.1, 0.5, 0.9])))
    major = decomposition.major_subset(E, F, L)
    m = major.measures()
    ok = m["E_prime"] >= m["E"] / 2 if major.case == 1 else m["F_prime"] >= m["F"] / 2
    return ok, m["G"]


# ---------------------------------------------------------------- ratios

def carleson_ratio(rng, L: int, p: float, r: float, space: ValueSpace = SCALAR) -> float:
    return carleson.variational_carleson_norm(instances.random_function(L, 0, space, rng), p, r).ratio


def lepingle_ratio(rng, L: int, p: float, r: float, space: ValueSpace = SCALAR) -> float:
    return variation.lepingle_ratio(instances.random_function(L, 0, space, rng), p, r)


def tile_type_ratio(rng, L: int, q: float, space: ValueSpace = SCALAR) -> float:
    G = instances.good_collections(L, rng, 1)[0]
    return decomposition.tile_type_constant([G], q, L, 0, space, rng, trials=2).max_ratio


def tree_operator_ratio(rng, L: int, r: float, q: float = 2.0, space: ValueSpace = SCALAR) -> float:
    """||g C_T f||_{r'} / (size density |I_T|^(1/r')) for a random tree and random data."""
    T = instances.random_tree(L, 0, rng, str(rng.choice(["up", "down", "general"])))
    f = instances.random_function(L, 0, space, rng, "bounded")
    g = GridFunction(L, 0, rng.uniform(-1, 1, 1 << L))
    B = instances.breakpoints_near(list(T), 1 << L, r, rng, space=space.dual())
    signs = {P: int(rng.choice([-1, 1])) for P in T}
    return carleson.tree_operator_norm(T, f, g, signs, B, conjugate_exponent(r), q).ratio


def pairing_ratio(rng, L: int, p: float, r: float, q: float, space: ValueSpace = SCALAR) -> float:
    bitiles = instances.random_collection(L, 0, rng, 24, "du")
    E = instances.random_set(L, 0, rng, blocks=bool(rng.random() < 0.5))
    F = instances.random_set(L, 0, rng, blocks=bool(rng.random() < 0.5))
    major = decomposition.major_subset(E, F, L)
    return decomposition.restricted_pairing_ratio(bitiles, major, p, r, q, space, rng, trials=2).max_ratio


def bmo_size_ratio(rng, L: int, p: float) -> float:
    f = instances.random_function(L, 0, SCALAR, rng)
    J = [I for I in instances.random_dyadic_family(rng, L - 1, 3 * L)]
    lam = float(np.quantile(variation.dyadic_maximal(f).scalar(), rng.uniform(0.2, 1.0)))
    K = tiles.DyadicInterval(0, 0)
    return decomposition.bmo_size_check(J, f, lam, K, p).ratio


OPERATORS = ("carleson", "lepingle", "tiletype", "tree", "pairing", "bmo_size")


def operator_ratio(name: str, rng, L: int, config: ExperimentConfig) -> float:
    space = config.value_space()
    if name == "carleson":
        return carleson_ratio(rng, L, config.p, config.r, space)
    if name == "lepingle":
        return lepingle_ratio(rng, L, config.p, config.r, space)
    if name == "tiletype":
        return tile_type_ratio(rng, L, config.q, space)
    if name == "tree":
        return tree_operator_ratio(rng, L, config.r, config.q, space)
    if name == "pairing":
        return pairing_ratio(rng, L, config.p, config.r, config.q, space)
    if name == "bmo_size":
        return bmo_size_ratio(rng, L, config.p)
    raise ValueError(f"unknown operator {name!r}")


# ---------------------------------------------------------------- suites

SUITES = ("identities", "operators", "counting", "constants")


def identities_suite(config: ExperimentConfig) -> list[CheckResult]:
    L, seed, n, tol, r = config.L[0], config.seed, config.trials, config.tol, config.r
    small = min(L, 6)
    gram = walsh_gram_deviation(L)
    return [
        CheckResult("walsh_orthonormality", int(gram <= tol), 1, gram),
        _tally("fast_transform_oracle", run_trials(lambda g: fwht_trial(g, small), seed, n)),
        _tally("haar_factorization", run_trials(lambda g: haar_trial(g, L), seed + 1, n)),
        _tally("telescoping", run_trials(lambda g: telescoping_trial(g, L, tol), seed + 2, n)),
        _tally("good_collection_laws", run_trials(lambda g: good_law_trial(g, small), seed + 3, n)),
        _tally("reflection_identity", run_trials(lambda g: reflection_trial(g, 3, r, tol), seed + 4, n)),
        _tally("converse_identity", run_trials(lambda g: converse_trial(g, small, r, tol), seed + 5, n)),
    ]


def operators_suite(config: ExperimentConfig) -> list[CheckResult]:
    seed, n, tol, r = config.seed, config.trials, config.tol, config.r
    L = min(config.L[0], 6)
    return [
        _tally("variation_oracle", run_trials(lambda g: variation_trial(g, 1e-12), seed, n)),
        _tally("crp_oracle", run_trials(lambda g: crp_trial(g, r), seed + 1, n)),
        _tally("linearization", run_trials(lambda g: linearization_trial(g, L, r, config.value_space(), tol),
                                           seed + 2, n)),
    ]


def counting_suite(config: ExperimentConfig) -> list[CheckResult]:
    decomposition.check_parameters(config.p, config.r, config.q)
    seed, n, r, q = config.seed, config.trials, config.r, config.q
    L = min(config.L[0], 6)
    space = config.value_space()
    return [
        _tally("density_counting", run_trials(lambda g: density_counting_trial(g, L, r), seed, n)),
        _tally("size_selection", run_trials(lambda g: size_selection_trial(g, L, q, space), seed + 1, n)),
        _tally("full_decomposition", run_trials(lambda g: full_decomposition_trial(g, L, r, q, space), seed + 2, n)),
        _tally("major_subsets", run_trials(lambda g: major_subset_trial(g, L), seed + 3, n)),
    ]


CSV_COLUMNS = ("operator", "p", "r", "L", "seed", "norm_ratio", "runtime_ms")


def _timed(fn):
    def run(rng):
        start = time.perf_counter()
        value = fn(rng)
        return value, round(1000 * (time.perf_counter() - start), 3)
    return run


def constants_suite(config: ExperimentConfig, operators=OPERATORS) -> tuple[list[dict], dict, dict]:
    """Rows (one per operator, L and trial), per-(operator, L) summaries and wall times in ms."""
    decomposition.check_parameters(config.p, config.r, config.q)
    rows, summary, runtimes = [], {}, {}
    seeds = trial_seeds(config.seed, config.trials)
    for name in operators:
        for L in config.L:
            start = time.perf_counter()
            results = run_trials(_timed(lambda g: operator_ratio(name, g, L, config)), config.seed, config.trials)
            runtimes[f"{name}:L={L}"] = round(1000 * (time.perf_counter() - start), 3)
            for s, (value, ms) in zip(seeds, results):
                rows.append({"operator": name, "p": config.p, "r": config.r, "L": L, "seed": s,
                             "norm_ratio": float(value), "runtime_ms": ms})
            finite = [v for v, _ in results if not math.isnan(v)]
            summary[f"{name}:L={L}"] = {"max": max(finite, default=math.nan),
                                        "mean": float(np.mean(finite)) if finite else math.nan}
    return rows, summary, runtimes


def growth(summary: dict, name: str, L0: int, L1: int) -> float:
    """Relative growth of the max ratio from L0 to L1."""
    a, b = summary[f"{name}:L={L0}"]["max"], summary[f"{name}:L={L1}"]["max"]
    return b / a - 1.0
