"""Density and size selection, the combined level decomposition, BMO certificates, major
subsets, the restricted-type pairing estimate and the tile-type estimator.

Both selection routines are greedy with removal:

* density: every bitile whose best density average over P' >= P exceeds Delta^r' is
  grouped under a <=-maximal heavy bitile; the rest is returned as the sparse part.
* size: among the tops whose full tree {P <= T} has up-part energy above sigma^q, take
  a set-maximal one with minimal frequency center, remove its tree and repeat.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import SCALAR, DyadicInterval, GridFunction, ValueSpace, conjugate_exponent, dyadic_intervals, lp_norm, measure
from .carleson import (BreakpointData, candidate_tops, density, density_table, density_values, optimal_breakpoints,
                       packet_data, pairing_terms, size)
from .tiles import Bitile, GoodCollection, Tile, Tree, interval_cell_mask, relation_matrix
from .instances import breakpoints_near
from .variation import bmo_norm, dyadic_maximal
from . import walsh

CONSTRAINT = "max(q, p'(q-1)) < r"


def check_parameters(p: float, r: float, q: float):
    """Raise ValueError unless 1 < p < inf and max(q, p'(q-1)) < r < inf."""
    if not 1 < p < math.inf:
        raise ValueError(f"p must satisfy 1 < p < inf, got {p}")
    if q < 2:
        raise ValueError(f"tile-type exponent q must be at least 2, got {q}")
    if math.isinf(r):
        raise ValueError(f"parameter constraint {CONSTRAINT} < inf violated: r is infinite")
    bound = max(q, conjugate_exponent(p) * (q - 1))
    if not bound < r:
        raise ValueError(f"parameter constraint {CONSTRAINT} violated: max({q}, {conjugate_exponent(p):g}*({q}-1)) = "
                         f"{bound:g} is not below r = {r}")


# ---------------------------------------------------------------- certificates

@dataclass
class CountingRow:
    J: DyadicInterval
    lhs: float
    rhs: float

    @property
    def ratio(self) -> float:
        if self.lhs == 0:
            return 0.0
        return self.lhs / self.rhs if self.rhs > 0 else math.inf


@dataclass
class CountingCertificate:
    """sum_{I_T in J} |I_T| against a bound for every dyadic J of the grid, plus the BMO norm of
    sum_T 1_{I_T} against its bound."""

    rows: list
    bmo_lhs: float
    bmo_rhs: float

    @property
    def holds(self) -> bool:
        return all(row.lhs <= row.rhs for row in self.rows)

    @property
    def max_ratio(self) -> float:
        return max((row.ratio for row in self.rows), default=0.0)

    @property
    def total(self) -> CountingRow | None:
        """The row of the largest J, which carries the L^1 bound."""
        return max(self.rows, key=lambda row: (row.J.k, -row.J.n), default=None)

    @property
    def bmo_ratio(self) -> float:
        if self.bmo_lhs == 0:
            return 0.0
        return self.bmo_lhs / self.bmo_rhs if self.bmo_rhs > 0 else math.inf


def _top_sum_function(tops: Sequence[Bitile], L: int, M: int) -> GridFunction:
    total = np.zeros(1 << (L + M))
    for T in tops:
        total += interval_cell_mask(T.time, L, M)
    return GridFunction(L, M, total)


def _counting_rows(tops: Sequence[Bitile], L: int, M: int, bound) -> list[CountingRow]:
    rows = []
    for J in dyadic_intervals(L, M):
        lhs = sum(T.time.length for T in tops if J.contains_interval(T.time))
        rows.append(CountingRow(J, lhs, bound(J)))
    return rows


def _containing_some(J: DyadicInterval, intervals: Iterable[DyadicInterval]) -> bool:
    return any(J.contains_interval(I) for I in intervals)


# ---------------------------------------------------------------- density selection

@dataclass
class DensityDecomposition:
    sparse: frozenset
    trees: list
    certificate: CountingCertificate
    delta: float

    @property
    def tops(self) -> list[Bitile]:
        return [T.top for T in self.trees]


def _as_mask(mask, f: GridFunction) -> np.ndarray:
    if mask is None:
        return f.norms() > 0
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (f.n_cells,):
        raise ValueError("set mask does not match the grid")
    return mask


def density_decompose(bitiles: Iterable[Bitile], g: GridFunction, B: BreakpointData, delta: float,
                      E=None, table: dict | None = None) -> DensityDecomposition:
    """Split into the bitiles whose density averages stay below delta^r' and trees under the
    <=-maximal heavy bitiles P' (average above delta^r') that lie above a remaining bitile.

    E defaults to the support of g; the counting certificate compares against |E cap J|.
    """
    if not delta > 0:
        raise ValueError(f"density threshold must be positive, got {delta}")
    bitiles = sorted(set(bitiles))
    L, M = g.L, g.M
    E = _as_mask(E, g)
    rc = B.r_conj
    threshold = delta ** rc
    if table is None:
        table = density_table(g, B)
    values = density_values(bitiles, table, M)
    sparse = [P for P, v in zip(bitiles, values) if v <= threshold]
    heavy_below = [P for P, v in zip(bitiles, values) if v > threshold]

    heavy = set()
    for P in heavy_below:
        for k in range(P.k, M + 1):
            D = table[k]
            m = P.time.n >> (k - P.k)
            lo = P.freq_index << (k - P.k)
            hi = min((P.freq_index + 1) << (k - P.k), D.shape[1])
            for i in np.nonzero(D[m, lo:hi] > threshold)[0]:
                heavy.add(Bitile.make(k, m, lo + int(i)))
    heavy = sorted(heavy)
    above = relation_matrix(heavy, heavy, "general")
    np.fill_diagonal(above, False)
    tops = [T for t, T in enumerate(heavy) if not above[:, t].any()]

    members = relation_matrix(heavy_below, tops, "general")
    groups: list[list[Bitile]] = [[] for _ in tops]
    for i, P in enumerate(heavy_below):
        hits = np.nonzero(members[:, i])[0]
        if not len(hits):
            raise RuntimeError(f"{P} lies below no maximal heavy bitile")
        groups[int(hits[0])].append(P)
    trees = [Tree(group, T, "general") for T, group in zip(tops, groups) if group]

    scale = delta ** (-rc)
    tree_tops = [T.top for T in trees]
    rows = _counting_rows(tree_tops, L, M, lambda J: scale * measure(E & interval_cell_mask(J, L, M), L))
    intervals = [T.time for T in tree_tops]
    worst = max((measure(E & interval_cell_mask(J, L, M), L) / J.length
                 for J in dyadic_intervals(L, M) if _containing_some(J, intervals)), default=0.0)
    certificate = CountingCertificate(rows, bmo_norm(_top_sum_function(tree_tops, L, M)), 2.0 * scale * worst)
    return DensityDecomposition(frozenset(sparse), trees, certificate, delta)


# ---------------------------------------------------------------- size selection

@dataclass
class SizeDecomposition:
    small: frozenset
    trees: list
    up_trees: GoodCollection
    energies: list
    certificate: CountingCertificate
    sigma: float

    @property
    def tops(self) -> list[Bitile]:
        return [T.top for T in self.trees]


def size_decompose(bitiles: Iterable[Bitile], f: GridFunction, q: float, sigma: float) -> SizeDecomposition:
    """Greedy size selection; the selected up-parts come back as a GoodCollection."""
    if not sigma > 0:
        raise ValueError(f"size threshold must be positive, got {sigma}")
    bitiles = sorted(set(bitiles))
    L, M = f.L, f.M
    tops = candidate_tops(bitiles, L, M)
    general = relation_matrix(bitiles, tops, "general")
    up = relation_matrix(bitiles, tops, "up")
    funcs = packet_data(f, bitiles, "d").terms() if bitiles else np.zeros((0, f.n_cells, f.d))
    lengths = np.array([T.time.length for T in tops])
    keys = sorted(range(len(tops)), key=lambda t: (tops[t].center, lengths[t], tops[t]))
    rank = np.empty(len(tops), dtype=np.int64)
    rank[keys] = np.arange(len(tops))
    threshold = sigma ** q

    remaining = np.ones(len(bitiles), dtype=bool)
    trees, ups, energies = [], [], []
    while remaining.any():
        members = general & remaining
        up_members = up & remaining
        alive = np.nonzero(members.any(axis=1))[0]
        sums = np.tensordot(up_members[alive].astype(float), funcs, axes=(1, 0))
        energy = f.cell_width * np.sum(np.asarray(f.space.norm(sums)) ** q, axis=1) / lengths[alive]
        cands = alive[energy > threshold]
        if not len(cands):
            break
        rows = members[cands]
        # row a is strictly inside row b when a <= b and the sets differ
        outside = rows.astype(np.int64) @ (~rows).T.astype(np.int64)        # |a \ b|
        counts = rows.sum(axis=1)
        strictly_inside = (outside == 0) & (counts[:, None] < counts[None, :])
        maximal = cands[~strictly_inside.any(axis=1)]
        t = int(maximal[np.argmin(rank[maximal])])
        chosen = np.nonzero(members[t])[0]
        T = tops[t]
        trees.append(Tree([bitiles[i] for i in chosen], T, "general"))
        ups.append(frozenset(bitiles[i] for i in chosen if up[t, i]))
        energies.append(float(energy[np.searchsorted(alive, t)]))
        remaining[chosen] = False

    small = frozenset(P for P, keep in zip(bitiles, remaining) if keep)
    tree_tops = [T.top for T in trees]
    rows = _counting_rows(tree_tops, L, M,
                          lambda J: threshold ** -1 * lp_norm(f * GridFunction.indicator(L, M, J), q) ** q)
    intervals = [T.time for T in tree_tops]
    F = f.norms() > 0
    worst = max((measure(F & interval_cell_mask(J, L, M), L) / J.length
                 for J in dyadic_intervals(L, M) if _containing_some(J, intervals)), default=0.0)
    certificate = CountingCertificate(rows, bmo_norm(_top_sum_function(tree_tops, L, M)), 2.0 * worst / threshold)
    # goodness allows any reordering of the trees; increasing centers is the one that works
    order = sorted(range(len(trees)), key=lambda j: tree_tops[j].center)
    good = GoodCollection([ups[j] for j in order], [tree_tops[j] for j in order], "u")
    return SizeDecomposition(small, trees, good, energies, certificate, sigma)


# ---------------------------------------------------------------- combined decomposition

@dataclass
class LevelCertificate:
    n: int
    sum_tops: float
    bmo_tops: float
    density_bound: float
    size_bound: float
    density_value: float
    size_value: float
    density_trees: int
    size_trees: int
    bmo_ratio_E: float | None = None      # against 2^-n |E|^-1, when its precondition holds
    bmo_ratio_F: float | None = None      # against 2^-n |F|^-1, when its precondition holds

    @property
    def density_ok(self) -> bool:
        return self.density_value <= self.density_bound * (1 + 1e-12)

    @property
    def size_ok(self) -> bool:
        return self.size_value <= self.size_bound * (1 + 1e-12)

    @property
    def sum_ratio(self) -> float:
        """sum_j |I_{T_{n,j}}| * 2^n."""
        return math.ldexp(self.sum_tops, self.n)

    def to_json(self) -> dict:
        return {
            "n": self.n, "sum_tops": self.sum_tops, "bmo_tops": self.bmo_tops,
            "density_bound": self.density_bound, "size_bound": self.size_bound,
            "density_value": self.density_value, "size_value": self.size_value,
            "density_ok": self.density_ok, "size_ok": self.size_ok,
            "density_trees": self.density_trees, "size_trees": self.size_trees,
            "sum_ratio": self.sum_ratio, "bmo_ratio_E": self.bmo_ratio_E, "bmo_ratio_F": self.bmo_ratio_F,
        }


@dataclass
class DecompositionReport:
    levels: dict
    residual: frozenset
    certificates: dict
    empirical_constants: dict
    counting: dict = field(default_factory=dict)       # n -> (density certificate, size certificate)
    measures: tuple = (0.0, 0.0)                      # (|E|, |F|)

    def bitiles(self) -> frozenset:
        out = set(self.residual)
        for trees in self.levels.values():
            for T in trees:
                out |= T.bitiles
        return frozenset(out)

    def is_partition_of(self, bitiles: Iterable[Bitile]) -> bool:
        """Trees and residual are pairwise disjoint and their union is exactly `bitiles`."""
        total = len(self.residual) + sum(len(T) for trees in self.levels.values() for T in trees)
        union = self.bitiles()
        return total == len(union) and union == frozenset(bitiles)

    @property
    def bounds_hold(self) -> bool:
        return all(c.density_ok and c.size_ok for c in self.certificates.values())

    def to_json(self) -> dict:
        return {
            "measures": {"E": self.measures[0], "F": self.measures[1]},
            "levels": {
                str(n): [{"top": T.top.to_json(), "bitiles": [P.to_json() for P in T]} for T in trees]
                for n, trees in self.levels.items()
            },
            "residual": [P.to_json() for P in sorted(self.residual)],
            "certificates": {str(n): c.to_json() for n, c in self.certificates.items()},
            "empirical_constants": self.empirical_constants,
        }

    def certificate_csv(self, kind: str = "density") -> str:
        """Counting certificate table with columns level, J, lhs, rhs, ratio."""
        index = {"density": 0, "size": 1}[kind]
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["level", "J", "lhs", "rhs", "ratio"])
        for n, pair in self.counting.items():
            for row in pair[index].rows:
                if row.lhs > 0:
                    writer.writerow([n, str(row.J), repr(row.lhs), repr(row.rhs), repr(row.ratio)])
        return buffer.getvalue()


def _check_support(f: GridFunction, mask: np.ndarray, name: str):
    norms = f.norms()
    if np.any(norms > 1 + 1e-12):
        raise ValueError(f"|{name}| exceeds 1 on some cell")
    if np.any((norms > 0) & ~mask):
        raise ValueError(f"{name} is not supported in its set")


def _level_exponent(value: float, exponent: float, mass: float) -> float:
    """Smallest real n with value <= 2^(n/exponent) mass^(1/exponent)."""
    return exponent * math.log2(value) - math.log2(mass)


def full_decompose(bitiles: Iterable[Bitile], f: GridFunction, g: GridFunction, B: BreakpointData,
                   q: float, r: float | None = None, E=None, F=None, tol: float = 1e-12,
                   max_levels: int = 200) -> DecompositionReport:
    """Alternate density and size selection at thresholds halving level by level.

    The iteration stops once the residual has density or size at most `tol`: a bitile of zero
    size or zero density contributes nothing to the pairing.
    """
    if r is not None and abs(r - B.r) > 1e-15:
        raise ValueError("exponent r differs from the one used to normalize the breakpoint data")
    f.check_grid(g)
    E, F = _as_mask(E, g), _as_mask(F, f)
    _check_support(f, F, "f")
    _check_support(g, E, "g")
    L, M = f.L, f.M
    rc = B.r_conj
    mE, mF = measure(E, L), measure(F, L)
    table = density_table(g, B)
    residual = frozenset(bitiles)
    levels, certificates, counting = {}, {}, {}

    dens, sz = density(residual, g, B, table=table), size(residual, f, q)
    if dens > tol and sz > tol:
        n = math.ceil(max(_level_exponent(dens, rc, mE), _level_exponent(sz, q, mF)) - 1e-12)
        maxE = dyadic_maximal(GridFunction(L, M, E.astype(float))).scalar()
        maxF = dyadic_maximal(GridFunction(L, M, F.astype(float))).scalar()

        def low_max(values, P_set):
            return max(float(values[interval_cell_mask(P.time, L, M)].min()) for P in P_set)

        for _ in range(max_levels):
            if dens <= tol or sz <= tol:
                break
            before = residual
            delta = 2.0 ** ((n - 1) / rc) * mE ** (1 / rc)
            dpart = density_decompose(residual, g, B, delta, E, table)
            sigma = 2.0 ** ((n - 1) / q) * mF ** (1 / q)
            spart = size_decompose(dpart.sparse, f, q, sigma)
            residual = spart.small
            trees = dpart.trees + spart.trees
            removed = before - residual
            tops = [T.top for T in trees]
            bmo_tops = bmo_norm(_top_sum_function(tops, L, M))
            cert = LevelCertificate(
                n=n, sum_tops=float(sum(T.time.length for T in tops)), bmo_tops=bmo_tops,
                density_bound=2.0 ** (n / rc) * mE ** (1 / rc), size_bound=2.0 ** (n / q) * mF ** (1 / q),
                density_value=density(removed, g, B, table=table), size_value=size(removed, f, q),
                density_trees=len(dpart.trees), size_trees=len(spart.trees))
            if removed and mF <= mE and low_max(maxF, removed) <= mF / mE:
                cert.bmo_ratio_E = bmo_tops * math.ldexp(mE, n)
            if removed and mE <= mF and low_max(maxE, removed) <= mE / mF:
                cert.bmo_ratio_F = bmo_tops * math.ldexp(mF, n)
            if trees:
                levels[n] = trees
                certificates[n] = cert
                counting[n] = (dpart.certificate, spart.certificate)
            dens, sz = density(residual, g, B, table=table), size(residual, f, q)
            n -= 1
        else:
            raise RuntimeError(f"decomposition did not terminate within {max_levels} levels")

    constants = {
        "sum_ratio": max((c.sum_ratio for c in certificates.values()), default=0.0),
        "bmo_ratio_E": max((c.bmo_ratio_E for c in certificates.values() if c.bmo_ratio_E is not None), default=None),
        "bmo_ratio_F": max((c.bmo_ratio_F for c in certificates.values() if c.bmo_ratio_F is not None), default=None),
        "density_counting": max((d.max_ratio for d, _ in counting.values()), default=0.0),
        "size_counting": max((s.max_ratio for _, s in counting.values()), default=0.0),
        "density_bmo": max((d.bmo_ratio for d, _ in counting.values()), default=0.0),
    }
    return DecompositionReport(levels, residual, certificates, constants, counting, (mE, mF))


# ---------------------------------------------------------------- tile type

def tile_type_ratio(space: ValueSpace, G: GoodCollection, f: GridFunction, q: float) -> float:
    """(sum_T ||sum_{P in T} <f, w_{P_d}> w_{P_d}||_q^q)^(1/q) / ||f||_q, with up-tiles for
    down-oriented collections."""
    if f.space != space:
        raise ValueError(f"f takes values in {f.space.describe()}, expected {space.describe()}")
    denom = lp_norm(f, q)
    if denom == 0:
        raise ZeroDivisionError("the tile-type ratio is undefined for f = 0")
    part = (lambda P: P.down()) if G.orientation == "u" else (lambda P: P.up())
    total = 0.0
    for tree in G.trees:
        if tree:
            total += lp_norm(walsh.tile_projection(f, [part(P) for P in tree]), q) ** q
    return total ** (1.0 / q) / denom


def tree_localized(G: GoodCollection, f: GridFunction) -> GridFunction:
    """sum over trees of the wave-packet projection of f onto the tree."""
    part = (lambda P: P.down()) if G.orientation == "u" else (lambda P: P.up())
    out = GridFunction.zeros(f.L, f.M, f.space)
    for tree in G.trees:
        if tree:
            out = out + walsh.tile_projection(f, [part(P) for P in tree])
    return out


@dataclass
class TileTypeEstimate:
    max_ratio: float
    max_random_ratio: float
    per_collection: list


def tile_type_constant(collections: Sequence[GoodCollection], q: float, L: int, M: int = 0,
                       space: ValueSpace = SCALAR, rng: np.random.Generator | None = None,
                       trials: int = 8, ascent_steps: int = 2) -> TileTypeEstimate:
    """Maximize tile_type_ratio over random Gaussian and coordinate-sparse f, each followed by a
    few steps of f <- tree-localized part of f."""
    rng = np.random.default_rng(0) if rng is None else rng
    best, best_random, per = 0.0, 0.0, []
    for G in collections:
        top = 0.0
        for t in range(trials):
            values = rng.standard_normal((1 << (L + M), space.d))
            if space.d > 1 and t % 2:
                keep = rng.integers(0, space.d)
                values[:, np.arange(space.d) != keep] = 0.0
            f = GridFunction(L, M, values, space)
            ratio = tile_type_ratio(space, G, f, q)
            best_random = max(best_random, ratio)
            top = max(top, ratio)
            for _ in range(ascent_steps):
                f = tree_localized(G, f)
                if lp_norm(f, q) == 0:
                    break
                top = max(top, tile_type_ratio(space, G, f, q))
        per.append(top)
        best = max(best, top)
    return TileTypeEstimate(best, best_random, per)


# ---------------------------------------------------------------- major subsets

@dataclass
class MajorSubset:
    E: np.ndarray
    F: np.ndarray
    E_prime: np.ndarray
    F_prime: np.ndarray
    G: np.ndarray
    case: int
    dilation: int            # s with 1 < 2^s |E| <= 2
    L: int
    M: int

    def measures(self) -> dict:
        m = lambda mask: measure(mask, self.L)
        return {"E": m(self.E), "F": m(self.F), "E_prime": m(self.E_prime), "F_prime": m(self.F_prime),
                "G": m(self.G)}


def normalizing_dilation(mass: float) -> int:
    """Integer s with 1 < 2^s mass <= 2."""
    if not mass > 0:
        raise ValueError("cannot normalize a set of measure zero")
    mantissa, exponent = math.frexp(mass)
    return 2 - exponent if mantissa == 0.5 else 1 - exponent


def major_subset(E, F, L: int, M: int = 0, case: int | None = None) -> MajorSubset:
    """Remove from E (Case 1, dilated |F| <= 1) or from F (Case 2) the level set of the dyadic
    maximal function of the other set, after the dilation normalizing 1 < |E| <= 2."""
    E = np.asarray(E, dtype=bool)
    F = np.asarray(F, dtype=bool)
    if E.shape != (1 << (L + M),) or F.shape != E.shape:
        raise ValueError("set masks do not match the grid")
    mE, mF = measure(E, L), measure(F, L)
    s = normalizing_dilation(mE)
    scaled_F = math.ldexp(mF, s)
    regime = 1 if scaled_F <= 1 else 2
    if case is None:
        case = regime
    elif case != regime:
        raise ValueError(f"case {case} needs dilated |F| {'<= 1' if case == 1 else '> 1'}, got {scaled_F}")
    if case == 1:
        maximal = dyadic_maximal(GridFunction(L, M, F.astype(float))).scalar()
        G = maximal > 4.0 * scaled_F
        E_prime, F_prime = E & ~G, F.copy()
        if not measure(E_prime, L) >= mE / 2:
            raise AssertionError("major subset of E lost more than half of E")
    else:
        maximal = dyadic_maximal(GridFunction(L, M, E.astype(float))).scalar()
        G = maximal > 8.0 / scaled_F
        E_prime, F_prime = E.copy(), F & ~G
        if not measure(F_prime, L) >= mF / 2:
            raise AssertionError("major subset of F lost more than half of F")
    return MajorSubset(E, F, E_prime, F_prime, G, case, s, L, M)


# ---------------------------------------------------------------- restricted pairing

@dataclass
class PairingEstimate:
    max_ratio: float
    ratios: list


def restricted_pairing_value(f: GridFunction, g: GridFunction, bitiles: Sequence[Bitile], B: BreakpointData) -> float:
    """max over sign choices of |<C_P f, g>| for fixed breakpoint data: sum_P |t_P|."""
    return float(np.sum(np.abs(pairing_terms(f, g, bitiles, B))))


def restricted_pairing_ratio(bitiles: Iterable[Bitile], major: MajorSubset, p: float, r: float, q: float,
                             space: ValueSpace = SCALAR, rng: np.random.Generator | None = None,
                             trials: int = 4, kmax: int = 4) -> PairingEstimate:
    """max |<C_P f, g>| / (|F|^(1/p) |E|^(1/p')) over random |f| <= 1_F', |g| <= 1_E', random
    or optimal breakpoint data, and the best sign assignment."""
    check_parameters(p, r, q)
    rng = np.random.default_rng(0) if rng is None else rng
    bitiles = sorted(set(bitiles))
    L, M = major.L, major.M
    mE, mF = measure(major.E, L), measure(major.F, L)
    if mE == 0 or mF == 0 or not bitiles:
        return PairingEstimate(0.0, [0.0] * trials)
    denom = mF ** (1 / p) * mE ** (1 / conjugate_exponent(p))
    cells = 1 << (L + M)
    ratios = []
    for t in range(trials):
        vecs = rng.standard_normal((cells, space.d))
        vecs /= np.maximum(np.asarray(space.norm(vecs)), 1e-300)[:, None]
        scale = np.ones(cells) if t % 2 == 0 else rng.uniform(0, 1, cells)
        f = GridFunction(L, M, vecs * (scale * major.F_prime)[:, None], space)
        signs = rng.choice([-1.0, 1.0], cells) if t % 2 == 0 else rng.uniform(-1, 1, cells)
        g = GridFunction(L, M, signs * major.E_prime)
        if t % 2 == 0:
            B = optimal_breakpoints(f, bitiles, r)
        else:
            B = breakpoints_near(bitiles, cells, r, rng, kmax, space.dual())
        ratios.append(restricted_pairing_value(f, g, bitiles, B) / denom)
    return PairingEstimate(max(ratios), ratios)


# ---------------------------------------------------------------- Haar BMO size

@dataclass
class BmoSizeCheck:
    lhs: float
    rhs: float
    used: list
    skipped: list

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs * (1 + 1e-12)

    @property
    def ratio(self) -> float:
        if self.lhs == 0:
            return 0.0
        return self.lhs / self.rhs if self.rhs > 0 else math.inf

    def __bool__(self):
        return self.holds


def bmo_size_check(J: Iterable[DyadicInterval], f: GridFunction, lam: float, K: DyadicInterval, p: float) -> BmoSizeCheck:
    """||sum_{I in J, I in K} <f, h_I> h_I||_p against lam |K|^(1/p).

    Intervals I with inf_I Mf > lam fail the precondition and are skipped (listed in `skipped`).
    """
    if not 1 <= p < math.inf:
        raise ValueError(f"p must satisfy 1 <= p < inf, got {p}")
    maximal = dyadic_maximal(f).scalar()
    used, skipped = [], []
    for I in sorted(set(J)):
        if I.k <= -f.L:
            raise ValueError(f"the Haar function of {I} is not resolved by the grid")
        if float(maximal[interval_cell_mask(I, f.L, f.M)].min()) <= lam:
            used.append(I)
        else:
            skipped.append(I)
    inside = [I for I in used if K.contains_interval(I)]
    part = walsh.tile_projection(f, [Tile(I, 1) for I in inside]) if inside else GridFunction.zeros(f.L, f.M, f.space)
    return BmoSizeCheck(lp_norm(part, p), lam * K.length ** (1 / p), used, skipped)
