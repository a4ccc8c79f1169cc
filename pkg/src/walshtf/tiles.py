"""Tiles, bitiles, their partial orders, trees, good collections, reflection and the converse construction.

A tile is I x |I|^-1 [n, n+1) (area 1).  A bitile is I x 2|I|^-1 [n, n+1) (area 2); its
down-tile has frequency index 2n and its up-tile 2n+1.  Frequency intervals are stored as
DyadicInterval values with scale -k (tiles) or 1-k (bitiles), where |I| = 2^k.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import DyadicInterval, GridFunction
from . import walsh


@dataclass(frozen=True, order=True)
class Tile:
    time: DyadicInterval
    freq_index: int

    def __post_init__(self):
        if self.freq_index < 0:
            raise ValueError("frequency index must be nonnegative")

    @property
    def freq(self) -> DyadicInterval:
        return DyadicInterval(-self.time.k, self.freq_index)

    def intersects(self, other: Tile) -> bool:
        return self.time.intersects(other.time) and self.freq.intersects(other.freq)

    def __str__(self):
        return f"{self.time}x{self.freq}"


@dataclass(frozen=True, order=True)
class Bitile:
    time: DyadicInterval
    freq_index: int

    def __post_init__(self):
        if self.freq_index < 0:
            raise ValueError("frequency index must be nonnegative")

    @classmethod
    def make(cls, k: int, n_time: int, n_freq: int) -> Bitile:
        return cls(DyadicInterval(k, n_time), n_freq)

    @property
    def k(self) -> int:
        return self.time.k

    @property
    def freq(self) -> DyadicInterval:
        return DyadicInterval(1 - self.time.k, self.freq_index)

    @property
    def center(self) -> float:
        return self.freq.center

    def down(self) -> Tile:
        return Tile(self.time, 2 * self.freq_index)

    def up(self) -> Tile:
        return Tile(self.time, 2 * self.freq_index + 1)

    def representable(self, L: int, M: int, parts: str = "du") -> bool:
        tiles = {"d": self.down(), "u": self.up()}
        return all(walsh.tile_is_representable(tiles[s].time, tiles[s].freq_index, L, M) for s in parts)

    def intersects(self, other: Bitile) -> bool:
        return self.time.intersects(other.time) and self.freq.intersects(other.freq)

    def to_json(self) -> dict:
        return {"k": self.time.k, "n_time": self.time.n, "n_freq": self.freq_index}

    @classmethod
    def from_json(cls, data: dict) -> Bitile:
        return cls.make(int(data["k"]), int(data["n_time"]), int(data["n_freq"]))

    def __str__(self):
        return f"{self.time}x{self.freq}"


def tile_le(P: Tile, Q: Tile) -> bool:
    """P <= Q iff I_P is inside I_Q and omega_Q is inside omega_P."""
    return Q.time.contains_interval(P.time) and P.freq.contains_interval(Q.freq)


def bitile_le_u(P: Bitile, Q: Bitile) -> bool:
    return tile_le(P.up(), Q.up())


def bitile_le_d(P: Bitile, Q: Bitile) -> bool:
    return tile_le(P.down(), Q.down())


def bitile_le(P: Bitile, Q: Bitile) -> bool:
    return bitile_le_u(P, Q) or bitile_le_d(P, Q)


def _le_for(orientation: str):
    if orientation == "u":
        return bitile_le_u
    if orientation == "d":
        return bitile_le_d
    raise ValueError(f"orientation must be 'u' or 'd', got {orientation!r}")


def relation_matrix(bitiles: Sequence[Bitile], tops: Sequence[Bitile], order: str = "general") -> np.ndarray:
    """Boolean matrix [t, i] of bitiles[i] <= tops[t] in the up, down or general order."""
    if not len(bitiles) or not len(tops):
        return np.zeros((len(tops), len(bitiles)), dtype=bool)
    kP, mP, nP = (np.array(v, dtype=np.int64)[None, :] for v in zip(*[(P.k, P.time.n, P.freq_index) for P in bitiles]))
    kT, mT, nT = (np.array(v, dtype=np.int64)[:, None] for v in zip(*[(T.k, T.time.n, T.freq_index) for T in tops]))
    shift = np.maximum(kT - kP, 0)
    inside = (kP <= kT) & ((mP >> shift) == mT)
    up = inside & (((2 * nT + 1) >> shift) == 2 * nP + 1)
    down = inside & (((2 * nT) >> shift) == 2 * nP)
    if order == "up":
        return up
    if order == "down":
        return down
    if order == "general":
        return up | down
    raise ValueError(f"unknown order {order!r}")


@dataclass(frozen=True, eq=False)
class Tree:
    """A set of bitiles below a common top.  Equality compares the bitile sets only."""

    bitiles: frozenset
    top: Bitile
    kind: str = "general"

    def __post_init__(self):
        object.__setattr__(self, "bitiles", frozenset(self.bitiles))
        rel = {"general": bitile_le, "up": bitile_le_u, "down": bitile_le_d}.get(self.kind)
        if rel is None:
            raise ValueError(f"unknown tree kind {self.kind!r}")
        bad = [P for P in self.bitiles if not rel(P, self.top)]
        if bad:
            raise ValueError(f"{len(bad)} bitiles are not below the top {self.top} (kind {self.kind})")

    def __eq__(self, other):
        return isinstance(other, Tree) and self.bitiles == other.bitiles

    def __hash__(self):
        return hash(self.bitiles)

    def __len__(self):
        return len(self.bitiles)

    def __iter__(self):
        return iter(sorted(self.bitiles))


def tree_split(T: Tree) -> tuple[Tree, Tree]:
    """Up part {P <= top in the up order}; remaining bitiles with P <= top in the down order."""
    up = {P for P in T.bitiles if bitile_le_u(P, T.top)}
    down = {P for P in T.bitiles if P not in up and bitile_le_d(P, T.top)}
    return Tree(up, T.top, "up"), Tree(down, T.top, "down")


def haar_factorization(P: Bitile, T: Bitile, L: int, M: int = 0, kind: str = "up") -> int:
    """Sign e with w_{P_d} = e w_{T_u}^inf h_{I_P} (up-trees) or w_{P_u} = e w_{T_d}^inf h_{I_P} (down-trees)."""
    if kind == "up":
        if not bitile_le_u(P, T):
            raise ValueError(f"{P} is not below {T} in the up order")
        packet, outer = P.down(), T.up()
    elif kind == "down":
        if not bitile_le_d(P, T):
            raise ValueError(f"{P} is not below {T} in the down order")
        packet, outer = P.up(), T.down()
    else:
        raise ValueError("kind must be 'up' or 'down'")
    lhs = walsh.wave_packet(packet, L, M).values
    rhs = (walsh.wave_packet_inf(outer, L, M) * walsh.haar(P.time, L, M)).values
    for sign in (1, -1):
        if np.max(np.abs(lhs - sign * rhs)) <= 1e-12:
            return sign
    raise RuntimeError(f"no sign factors the wave packet of {P} through the top {T}")


def reflect(P: Bitile, N: int) -> Bitile:
    """Mirror the frequency axis about 2^(N-1): omega_P -> 2^N - omega_P, swapping down and up parts."""
    shift = N + P.time.k - 1
    if shift < 0:
        raise ValueError(f"2^{N} is below the top frequency of {P}")
    index = (1 << shift) - P.freq_index - 1
    if index < 0:
        raise ValueError(f"reflecting {P} about 2^{N} gives negative frequencies")
    return Bitile(P.time, index)


def reflection_exponent(bitiles: Iterable[Bitile]) -> int:
    """Smallest N >= 0 with sup omega_P <= 2^N for all given bitiles."""
    N = 0
    for P in bitiles:
        top = (P.freq_index + 1) * 2.0 ** (1 - P.time.k)
        N = max(N, math.ceil(math.log2(top)))
    return N


@dataclass(frozen=True)
class GoodCollection:
    trees: tuple
    tops: tuple
    orientation: str = "u"

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(frozenset(t) for t in self.trees))
        object.__setattr__(self, "tops", tuple(self.tops))
        if len(self.trees) != len(self.tops):
            raise ValueError("one top per tree is required")
        _le_for(self.orientation)

    def bitiles(self) -> frozenset:
        return frozenset().union(*self.trees) if self.trees else frozenset()

    def __len__(self):
        return len(self.trees)

    def reflected(self, N: int | None = None) -> GoodCollection:
        if N is None:
            N = reflection_exponent(list(self.bitiles()) + list(self.tops))
        flip = {"u": "d", "d": "u"}[self.orientation]
        trees = [frozenset(reflect(P, N) for P in t) for t in self.trees]
        return GoodCollection(trees, [reflect(T, N) for T in self.tops], flip)

    def to_json(self) -> dict:
        return {
            "trees": [[P.to_json() for P in sorted(t)] for t in self.trees],
            "tops": [T.to_json() for T in self.tops],
            "orientation": self.orientation,
        }

    @classmethod
    def from_json(cls, data: dict) -> GoodCollection:
        trees = [[Bitile.from_json(x) for x in t] for t in data["trees"]]
        return cls(trees, [Bitile.from_json(x) for x in data["tops"]], data["orientation"])


@dataclass
class GoodCheck:
    ok: bool
    violations: list = field(default_factory=list)

    def __bool__(self):
        return self.ok


def is_good_collection(trees: Sequence, tops: Sequence[Bitile], orientation: str = "u") -> GoodCheck:
    """Check monotone top centers and the greedy membership law.

    Violations are triples (P, j, k): P sits in tree j although P <= T_k with k < j, or
    (P, j, None) when P is misplaced relative to tree j for another reason.  Centers that
    break monotonicity are reported as (None, j, j - 1).  Equal consecutive centers are
    accepted only when the two tops have disjoint time intervals.
    """
    trees = [frozenset(t) for t in trees]
    if len(trees) != len(tops):
        return GoodCheck(False, [(None, None, None)])
    rel = _le_for(orientation)
    sign = 1 if orientation == "u" else -1
    violations = []
    for j in range(1, len(tops)):
        a, b = sign * tops[j - 1].center, sign * tops[j].center
        if a > b or (a == b and tops[j - 1].time.intersects(tops[j].time)):
            violations.append((None, j, j - 1))
    everything = frozenset().union(*trees) if trees else frozenset()
    for j, tree in enumerate(trees):
        for P in everything:
            below = rel(P, tops[j])
            earlier = next((k for k in range(j) if bitile_le(P, tops[k])), None)
            expected = below and earlier is None
            if expected != (P in tree):
                violations.append((P, j, earlier))
    return GoodCheck(not violations, violations)


def check_good(G: GoodCollection) -> GoodCheck:
    return is_good_collection(G.trees, G.tops, G.orientation)


def overlapping_parts(bitiles: Iterable[Bitile], part: str = "d") -> list[tuple[Bitile, Bitile]]:
    """Pairs of distinct bitiles whose down-tiles (part='d') or up-tiles (part='u') intersect."""
    items = sorted(set(bitiles))
    pick = (lambda P: P.down()) if part == "d" else (lambda P: P.up())
    tiles = [pick(P) for P in items]
    out = []
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            if tiles[i].intersects(tiles[j]):
                out.append((items[i], items[j]))
    return out


def interval_cell_mask(I: DyadicInterval, L: int, M: int) -> np.ndarray:
    """Cells of the (L, M) grid whose centers lie in I."""
    c2 = 2 * np.arange(1 << (M + L), dtype=np.int64) + 1          # 2^(L+1) times the cell center
    shift = I.k + L + 1
    if shift >= 0:
        return (c2 >> shift) == I.n
    # interval shorter than half a cell: compare n <= c2 * 2^-shift < n + 1 in integers
    scaled = c2 << -shift
    return (scaled >= I.n) & (scaled < I.n + 1)


def nj_functions(G: GoodCollection, L: int, M: int = 0) -> np.ndarray:
    """Array N[cell, j], j = 0..len(G): N_j(x) = c(omega of the last top up to j whose interval holds x)."""
    if G.orientation != "u":
        raise ValueError("breakpoint functions are defined for u-good collections; reflect first")
    cells = 1 << (M + L)
    out = np.zeros((cells, len(G) + 1))
    current = np.zeros(cells)
    for j, T in enumerate(G.tops, start=1):
        mask = interval_cell_mask(T.time, L, M)
        current = np.where(mask, T.center, current)
        out[:, j] = current
    return out


def _bitile_arrays(bitiles: Sequence[Bitile], L: int, M: int):
    lo = np.array([P.freq.left for P in bitiles])
    hi = np.array([P.freq.right for P in bitiles])
    mid = (lo + hi) / 2
    masks = np.array([interval_cell_mask(P.time, L, M) for P in bitiles]).reshape(len(bitiles), -1)
    return lo, mid, hi, masks


def good_set_mismatches(G: GoodCollection, L: int, M: int = 0) -> list[tuple[int, int, Bitile]]:
    """Compare S(j,x) = {P in T_j : x in I_P} with the breakpoint description
    B(j,x) = {P : x in I_P, N_j(x) in [omega_{P_u}), N_{j-1}(x) not in the interior of omega_P}
    on every cell and every j; returns the (j, cell, P) entries where they differ."""
    if G.orientation == "d":
        G = G.reflected()
    everything = sorted(G.bitiles())
    if not everything:
        return []
    lo, mid, hi, masks = _bitile_arrays(everything, L, M)
    N = nj_functions(G, L, M)
    out = []
    for j in range(1, len(G) + 1):
        now, before = N[:, j][None, :], N[:, j - 1][None, :]
        in_up = (mid[:, None] <= now) & (now < hi[:, None])
        outside = ~((lo[:, None] < before) & (before < hi[:, None]))
        B = masks & in_up & outside
        member = np.array([P in G.trees[j - 1] for P in everything])
        S = masks & member[:, None]
        for i, c in zip(*np.nonzero(S != B)):
            out.append((j, int(c), everything[i]))
    return out


@dataclass
class ConverseCollection:
    """Trees built from a finite family of dyadic intervals in [0, 1)."""

    N: int
    up_tree: Tree | None
    levels: GoodCollection
    splits: tuple

    @property
    def top(self) -> Bitile:
        return self.up_tree.top


def converse_bitile(I: DyadicInterval, N: int) -> Bitile:
    """I x [2^(N+1) - 2/|I|, 2^(N+1))."""
    return Bitile(I, (1 << (N + I.k)) - 1)


def converse_trees(J: Iterable[DyadicInterval]) -> ConverseCollection:
    J = sorted(set(J))
    for I in J:
        if I.k > 0 or (I.k == 0 and I.n != 0):
            raise ValueError(f"interval {I} is not inside [0, 1)")
    if not J:
        empty = GoodCollection((), (), "u")
        return ConverseCollection(0, None, empty, (empty, empty))
    N = -min(I.k for I in J)
    bitiles = {I: converse_bitile(I, N) for I in J}
    top = Bitile.make(0, 0, (1 << N) - 1)
    up_tree = Tree(bitiles.values(), top, "up")
    trees, tops = [], []
    for j in range(N + 1):
        trees.append(frozenset(P for I, P in bitiles.items() if I.k == j - N))
        tops.append(Bitile.make(1, 0, (1 << (N + 1)) - (1 << (N - j))))
    levels = GoodCollection(trees, tops, "u")
    splits = tuple(GoodCollection(trees[s::2], tops[s::2], "u") for s in (0, 1))
    return ConverseCollection(N, up_tree, levels, splits)


def converse_identity_deviation(C: ConverseCollection, f: GridFunction, r: float) -> float:
    """Max over cells of the gap between the two sides of the level identity
    sum_j |sum_{P in T_j} <w f, w_{P_d}> w_{P_d}(x)|^r = sum_j |sum_{|I| = 2^(j-N)} <f, h_I> h_I(x)|^r,
    where w is the unimodular wave packet of the common top's up-tile."""
    if C.up_tree is None:
        return 0.0
    twist = walsh.wave_packet_inf(C.top.up(), f.L, f.M)
    twisted = f * twist
    lhs = np.zeros(f.n_cells)
    rhs = np.zeros(f.n_cells)
    for tree in C.levels.trees:
        if not tree:
            continue
        part = walsh.tile_projection(twisted, [P.down() for P in tree])
        lhs += part.norms() ** r
        haar_part = walsh.tile_projection(f, [Tile(P.time, 1) for P in tree])
        rhs += haar_part.norms() ** r
    return float(np.max(np.abs(lhs - rhs)))


def collection_to_json(bitiles: Iterable[Bitile]) -> list:
    return [P.to_json() for P in sorted(bitiles)]


def collection_from_json(data: list) -> list[Bitile]:
    return [Bitile.from_json(x) for x in data]


def grid_bitiles(L: int, M: int = 0, parts: str = "du", within: DyadicInterval | None = None) -> list[Bitile]:
    """Every bitile of the (L, M) grid whose requested parts are representable."""
    out = []
    for k in range(-L, M + 1):
        limit = 1 << (L + k)                          # tile indices available at this scale
        count = (limit + 1) // 2 if parts == "d" else limit // 2
        for m in range(1 << (M - k)):
            I = DyadicInterval(k, m)
            if within is not None and not within.contains_interval(I):
                continue
            out.extend(Bitile(I, n) for n in range(count))
    return out
