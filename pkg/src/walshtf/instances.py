"""Seeded random instances: functions, sets, bitile collections, trees and good collections."""
from __future__ import annotations

import numpy as np

from .core import SCALAR, DyadicInterval, GridFunction, ValueSpace, lp_norm
from .tiles import Bitile, ConverseCollection, GoodCollection, Tree, converse_trees, grid_bitiles, relation_matrix


def random_function(L: int, M: int = 0, space: ValueSpace = SCALAR, rng: np.random.Generator | None = None,
                    kind: str = "gaussian") -> GridFunction:
    """kind: 'gaussian' (iid normal), 'unit' (gaussian scaled to unit L^2 norm), 'integer'
    (values in -3..3) or 'bounded' (|f| <= 1 everywhere)."""
    rng = np.random.default_rng() if rng is None else rng
    cells = 1 << (L + M)
    if kind == "integer":
        return GridFunction(L, M, rng.integers(-3, 4, (cells, space.d)).astype(float), space)
    values = rng.standard_normal((cells, space.d))
    if kind == "gaussian":
        return GridFunction(L, M, values, space)
    if kind == "unit":
        f = GridFunction(L, M, values, space)
        return f * (1.0 / lp_norm(f, 2.0))
    if kind == "bounded":
        norms = np.asarray(space.norm(values))
        values = values / np.maximum(norms, 1e-300)[:, None] * rng.uniform(0, 1, cells)[:, None]
        return GridFunction(L, M, values, space)
    raise ValueError(f"unknown function kind {kind!r}")


def random_set(L: int, M: int = 0, rng: np.random.Generator | None = None, fill: float | None = None,
               blocks: bool = False) -> np.ndarray:
    """Random union of cells (or of random dyadic blocks), never empty."""
    rng = np.random.default_rng() if rng is None else rng
    cells = 1 << (L + M)
    fill = rng.uniform(0.05, 0.95) if fill is None else fill
    if blocks:
        mask = np.zeros(cells, dtype=bool)
        while not mask.any() or mask.mean() < fill:
            k = int(rng.integers(-L, M + 1))
            I = DyadicInterval(k, int(rng.integers(0, 1 << (M - k))))
            lo, hi = I.cell_range(L)
            mask[lo:hi] = True
        return mask
    mask = rng.random(cells) < fill
    if not mask.any():
        mask[rng.integers(0, cells)] = True
    return mask


def random_collection(L: int, M: int = 0, rng: np.random.Generator | None = None, count: int = 10,
                      parts: str = "du", within: DyadicInterval | None = None,
                      max_freq: float | None = None) -> list[Bitile]:
    """Distinct random grid bitiles, optionally with omega_P inside [0, max_freq)."""
    rng = np.random.default_rng() if rng is None else rng
    pool = grid_bitiles(L, M, parts, within)
    if max_freq is not None:
        pool = [P for P in pool if P.freq.right <= max_freq]
    count = min(count, len(pool))
    return sorted(pool[i] for i in rng.choice(len(pool), count, replace=False))


def random_tree(L: int, M: int = 0, rng: np.random.Generator | None = None, kind: str = "up",
                max_size: int = 12) -> Tree:
    """A random nonempty subset of {P <= T} for a random top T with both parts representable."""
    rng = np.random.default_rng() if rng is None else rng
    pool = grid_bitiles(L, M, "du")
    order = {"up": "up", "down": "down", "general": "general"}[kind]
    while True:
        T = pool[int(rng.integers(len(pool)))]
        below = relation_matrix(pool, [T], order)[0]
        members = [P for P, m in zip(pool, below) if m]
        if members:
            break
    size = int(rng.integers(1, min(max_size, len(members)) + 1))
    chosen = [members[i] for i in rng.choice(len(members), size, replace=False)]
    return Tree(chosen, T, kind)


def random_dyadic_family(rng: np.random.Generator, depth: int, count: int) -> list[DyadicInterval]:
    """Random dyadic subintervals of [0, 1) of length at least 2^-depth."""
    out = set()
    for _ in range(count):
        k = -int(rng.integers(0, depth + 1))
        out.add(DyadicInterval(k, int(rng.integers(0, 1 << -k))))
    return sorted(out)


def converse_instance(rng: np.random.Generator, L: int, count: int = 12) -> ConverseCollection:
    """Trees built from a random dyadic family fine enough to be resolved at resolution L."""
    return converse_trees(random_dyadic_family(rng, L - 1, count))


def size_selected_collection(L: int, M: int = 0, rng: np.random.Generator | None = None, count: int = 40,
                             q: float = 2.0, space: ValueSpace = SCALAR,
                             max_freq: float | None = None) -> GoodCollection:
    """The up-trees chosen by size selection on a random collection and random f."""
    from .carleson import size
    from .decomposition import size_decompose
    rng = np.random.default_rng() if rng is None else rng
    bitiles = random_collection(L, M, rng, count, "d", max_freq=max_freq)
    f = random_function(L, M, space, rng)
    s = size(bitiles, f, q)
    if s == 0:
        return GoodCollection((), (), "u")
    return size_decompose(bitiles, f, q, s * rng.uniform(0.05, 0.9)).up_trees


def good_collections(L: int, rng: np.random.Generator, count: int, M: int = 0) -> list[GoodCollection]:
    """Alternating converse-construction splits, size-selected collections and reflections of
    size-selected collections about 2^L (which keeps every reflected tile on the grid)."""
    out = []
    i = 0
    while len(out) < count:
        if i % 3 == 0 and M == 0:
            C = converse_instance(rng, L)
            out.extend(G for G in C.splits if len(G))
        else:
            reflected = i % 3 == 2
            G = size_selected_collection(L, M, rng, max_freq=float(1 << L) if reflected else None)
            if len(G):
                out.append(G.reflected(L) if reflected else G)
        i += 1
    return out[:count]


def breakpoints_near(bitiles, cells: int, r: float, rng: np.random.Generator, kmax: int = 4,
                     space: ValueSpace = SCALAR):
    """Random breakpoint data whose breakpoints fall inside the frequency intervals of the given
    bitiles, so that the linearized operator actually sees them."""
    from .carleson import BreakpointData
    bitiles = list(bitiles)
    rows = []
    for _ in range(cells):
        k = int(rng.integers(0, kmax + 1)) if bitiles else 0
        picks = [bitiles[i] for i in rng.integers(0, len(bitiles), k)] if k else []
        ns = sorted({P.freq.left + float(rng.uniform(0, 1)) * P.freq.length for P in picks} - {0.0})
        vecs = rng.standard_normal((len(ns), space.d))
        if len(ns) and np.all(vecs == 0):
            vecs[0, 0] = 1.0
        rows.append((ns, vecs))
    return BreakpointData.from_rows(rows, r, space)
