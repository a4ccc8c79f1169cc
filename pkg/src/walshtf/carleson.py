"""Partial Walsh sums, the telescoping bitile decomposition and the variational Carleson operators.

For a bitile collection P and a cell x, the operator C_{r,P} f(x) is a supremum over
increasing breakpoints N_0 < ... < N_K of

    sum_j | sum_P <f, w_{P_d}> w_{P_d}(x) 1{N_j in [omega_{P_u}), N_{j-1} not in the interior of omega_P} |^r.

The indicators only see where each breakpoint sits relative to the endpoints of the
omega_P, so the supremum is a longest-path problem over finitely many candidates.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import SCALAR, DyadicInterval, GridFunction, ValueSpace, conjugate_exponent, lp_norm
from .tiles import (Bitile, Tile, Tree, bitile_le_d, bitile_le_u, grid_bitiles, interval_cell_mask, reflect,
                    relation_matrix)
from . import variation, walsh


# ---------------------------------------------------------------- partial sums

def partial_sum(f: GridFunction, N: int) -> GridFunction:
    """S_N f = sum_{n < N} <f, w_n> w_n on [0, 1)."""
    if not 0 <= N <= f.n_cells:
        raise ValueError(f"partial sum index {N} outside [0, {f.n_cells}]")
    coefs = walsh.walsh_coefficients(f)
    coefs[N:] = 0.0
    return walsh.inverse_walsh(coefs, f.space)


def partial_sums(f: GridFunction) -> np.ndarray:
    """Array (cells, 2^L + 1, d) with entry [x, N] = S_N f(x)."""
    coefs = walsh.walsh_coefficients(f)
    W = walsh.walsh_matrix(f.L).astype(float)                 # [n, cell]
    terms = W.T[:, :, None] * coefs[None, :, :]
    out = np.zeros((f.n_cells, f.n_cells + 1, f.d))
    np.cumsum(terms, axis=1, out=out[:, 1:, :])
    return out


# ---------------------------------------------------------------- telescoping

def omega_partition(zeta: int, zeta_next: int) -> list[tuple[DyadicInterval, str]]:
    """Maximal dyadic intervals partitioning [zeta, zeta_next), each labelled 'u' when it is
    the upper half of its dyadic parent and 'd' otherwise."""
    if zeta < 0 or zeta >= zeta_next:
        raise ValueError(f"need 0 <= zeta < zeta' (got {zeta}, {zeta_next})")
    out = []
    a = zeta
    while a < zeta_next:
        s = (a & -a).bit_length() - 1 if a else (zeta_next).bit_length()
        while (1 << s) > zeta_next - a:
            s -= 1
        I = DyadicInterval(s, a >> s)
        out.append((I, "u" if I.is_upper_half() else "d"))
        a += 1 << s
    return out


def telescoping_collections(zeta: int, zeta_next: int) -> dict[str, list[Bitile]]:
    """Bitiles in [0, 1) whose up-tile (key 'u') or down-tile (key 'd') frequency is one of
    the maximal intervals of [zeta, zeta')."""
    out: dict[str, list[Bitile]] = {"u": [], "d": []}
    for omega, label in omega_partition(zeta, zeta_next):
        k = -omega.k
        for m in range(1 << omega.k):
            out[label].append(Bitile.make(k, m, omega.n // 2))
    return out


def telescoping_check(f: GridFunction, zeta: int, zeta_next: int) -> float:
    """Max over cells of |S_{zeta'} f - S_zeta f - (bitile sum over both collections)|."""
    if zeta_next > f.n_cells:
        raise ValueError(f"zeta' = {zeta_next} exceeds the grid bandwidth {f.n_cells}")
    parts = telescoping_collections(zeta, zeta_next)
    tiles = [P.up() for P in parts["u"]] + [P.down() for P in parts["d"]]
    rhs = walsh.tile_projection(f, tiles)
    lhs = partial_sum(f, zeta_next) - partial_sum(f, zeta)
    return float(np.max(np.abs(lhs.values - rhs.values), initial=0.0))


# ---------------------------------------------------------------- variational Carleson norm

@dataclass(frozen=True)
class NormRatio:
    norm: float
    ratio: float

    @property
    def degenerate(self) -> bool:
        return math.isnan(self.ratio)


def variational_carleson_norm(f: GridFunction, p: float, r: float) -> NormRatio:
    """||V^r of {S_N f(x)}_{N=0..2^L}||_p and its ratio to ||f||_p (NaN when f = 0)."""
    if f.M != 0:
        raise ValueError("partial Walsh sums are taken on the unit interval (M = 0)")
    value = variation.lp_vr_norm(partial_sums(f), p, r, L=f.L, space=f.space)
    denom = lp_norm(f, p)
    return NormRatio(value, value / denom if denom > 0 else math.nan)


# ---------------------------------------------------------------- wave packet data

@dataclass
class PacketData:
    """Per-bitile frequency endpoints and the wave packets of one tile of each bitile.

    Packets are kept unnormalized (values +-1 on I_Q) together with <f, w_Q^inf>, so every
    term <f, w_Q> w_Q(x) = <f, w_Q^inf> w_Q^inf(x) / |I_Q| is an exact dyadic rational
    whenever f is.
    """

    bitiles: list
    lo: np.ndarray
    mid: np.ndarray
    hi: np.ndarray
    signs: np.ndarray          # (n, cells) +-1 on I_Q, 0 elsewhere
    raw: np.ndarray            # (n, d) <f, w_Q^inf>
    lengths: np.ndarray        # (n,) |I_Q|

    @property
    def masks(self) -> np.ndarray:
        return self.signs != 0

    @property
    def coefs(self) -> np.ndarray:
        """<f, w_Q> for every bitile."""
        return self.raw / np.sqrt(self.lengths)[:, None]

    @property
    def packets(self) -> np.ndarray:
        """w_Q on every cell."""
        return self.signs / np.sqrt(self.lengths)[:, None]

    def terms(self) -> np.ndarray:
        """(n, cells, d) array of <f, w_Q> w_Q(x)."""
        return self.raw[:, None, :] * (self.signs / self.lengths[:, None])[:, :, None]

    def terms_at(self, x: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices of bitiles whose time interval holds cell x and their vectors <f, w_Q> w_Q(x)."""
        active = np.nonzero(self.signs[:, x])[0]
        return active, self.raw[active] * (self.signs[active, x] / self.lengths[active])[:, None]


def packet_data(f: GridFunction, bitiles: Iterable[Bitile], part: str = "d") -> PacketData:
    bitiles = list(bitiles)
    n = len(bitiles)
    signs = np.zeros((n, f.n_cells))
    raw = np.zeros((n, f.d))
    for i, P in enumerate(bitiles):
        tile = P.down() if part == "d" else P.up()
        walsh.check_tile(tile.time, tile.freq_index, f.L, f.M)
        lo, hi = tile.time.cell_range(f.L)
        signs[i, lo:hi] = walsh.walsh_signs(tile.freq_index, f.L + tile.time.k)
        raw[i] = signs[i, lo:hi] @ f.values[lo:hi] * f.cell_width
    lo_f = np.array([P.freq.left for P in bitiles])
    hi_f = np.array([P.freq.right for P in bitiles])
    lengths = np.array([P.time.length for P in bitiles])
    return PacketData(bitiles, lo_f, (lo_f + hi_f) / 2, hi_f, signs, raw, lengths)


def _candidates(lo, mid, hi) -> np.ndarray:
    """0, every endpoint, and one point inside each gap between consecutive endpoints."""
    ends = np.unique(np.concatenate([[0.0], lo, mid, hi]))
    gaps = (ends[:-1] + ends[1:]) / 2
    return np.sort(np.concatenate([ends, gaps]))


def _step_vectors(lo, mid, hi, vectors, points, tilde: bool) -> np.ndarray:
    """Array S[a, b, :] = sum of the vectors of bitiles whose indicator fires for the step points[a] -> points[b]."""
    c = points[None, :]
    interior = (lo[:, None] < c) & (c < hi[:, None])
    if tilde:
        before = (lo[:, None] < c) & (c <= mid[:, None])          # (omega_{P_d}]
        after = ~interior
    else:
        before = ~interior
        after = (mid[:, None] <= c) & (c < hi[:, None])           # [omega_{P_u})
    return np.einsum("pa,pb,pd->abd", before.astype(float), after.astype(float), vectors)


def _longest_chain(W: np.ndarray) -> tuple[float, list[int]]:
    """max over increasing index chains of the sum of W[a, b] along consecutive pairs."""
    m = W.shape[0]
    best = np.zeros(m)
    pred = np.full(m, -1)
    for b in range(1, m):
        scores = best[:b] + W[:b, b]
        a = int(np.argmax(scores))
        if scores[a] > 0:
            best[b], pred[b] = scores[a], a
    end = int(np.argmax(best))
    path = [end]
    while pred[path[-1]] >= 0:
        path.append(int(pred[path[-1]]))
    return float(best[end]), path[::-1]


@dataclass
class Chain:
    """An optimal breakpoint chain at one cell: its points, step vectors and the value C^r."""

    power: float
    points: np.ndarray
    steps: np.ndarray          # (len(points) - 1, d)

    def value(self, r: float) -> float:
        return float(variation._root(self.power, r))


def crp_chain(data: PacketData, x: int, r: float, space: ValueSpace = SCALAR, tilde: bool = False) -> Chain:
    active, vectors = data.terms_at(x)
    if len(active) == 0:
        return Chain(0.0, np.zeros(1), np.zeros((0, space.d)))
    lo, mid, hi = data.lo[active], data.mid[active], data.hi[active]
    points = _candidates(lo, mid, hi)
    S = _step_vectors(lo, mid, hi, vectors, points, tilde)
    W = np.asarray(space.norm(S)) ** r
    power, path = _longest_chain(np.triu(W, 1))
    if len(path) < 2:
        return Chain(0.0, points[path], np.zeros((0, space.d)))
    steps = np.array([S[a, b] for a, b in zip(path[:-1], path[1:])])
    return Chain(power, points[path], steps)


def _check_r(r: float):
    if not 1 <= r < math.inf:
        raise ValueError(f"the variation exponent must lie in [1, inf), got {r}")


def c_rp(f: GridFunction, bitiles: Iterable[Bitile], r: float, x: int, tilde: bool = False) -> float:
    """Exact value of C_{r,P} f at cell x (or of its up-tile counterpart when tilde=True)."""
    _check_r(r)
    bitiles = list(bitiles)
    if not bitiles:
        return 0.0
    data = packet_data(f, bitiles, "u" if tilde else "d")
    return crp_chain(data, x, r, f.space, tilde).value(r)


def c_rp_tilde(f: GridFunction, bitiles: Iterable[Bitile], r: float, x: int) -> float:
    """Up-tile version: terms <f, w_{P_u}> w_{P_u}(x) with N_{j-1} in (omega_{P_d}] and N_j outside the interior of omega_P."""
    return c_rp(f, bitiles, r, x, tilde=True)


def c_rp_all(f: GridFunction, bitiles: Iterable[Bitile], r: float, tilde: bool = False) -> np.ndarray:
    """C_{r,P} f on every cell."""
    _check_r(r)
    bitiles = list(bitiles)
    out = np.zeros(f.n_cells)
    if not bitiles:
        return out
    data = packet_data(f, bitiles, "u" if tilde else "d")
    for x in range(f.n_cells):
        out[x] = crp_chain(data, x, r, f.space, tilde).value(r)
    return out


@lru_cache(maxsize=256)
def _combinations(m: int, k: int) -> np.ndarray:
    return np.array(list(itertools.combinations(range(m), k)), dtype=np.int64).reshape(-1, k)


def _definition_weights(f: GridFunction, bitiles: Sequence[Bitile], r: float, x: int, points, tilde: bool):
    """W[a, b] computed straight from the indicator definition, bitile by bitile."""
    m = len(points)
    S = np.zeros((m, m, f.d))
    center = (x + 0.5) * f.cell_width
    for P in bitiles:
        if not P.time.contains(center):
            continue
        packet = P.up() if tilde else P.down()
        unit = walsh.wave_packet_inf(packet, f.L, f.M).values[:, 0]
        value = (unit @ f.values) * f.cell_width * unit[x] / P.time.length
        for a in range(m):
            for b in range(a + 1, m):
                lower, upper = points[a], points[b]
                if tilde:
                    d = P.down().freq
                    fires = (d.left < lower <= d.right) and not P.freq.contains_interior(upper)
                else:
                    fires = P.up().freq.contains(upper) and not P.freq.contains_interior(lower)
                if fires:
                    S[a, b] += value
    return np.asarray(f.space.norm(S)) ** r


def c_rp_bruteforce(f: GridFunction, bitiles: Sequence[Bitile], r: float, x: int,
                    points: Sequence[float] | None = None, tilde: bool = False,
                    max_points: int | None = None) -> float:
    """Reference value of C_{r,P} f(x): enumerate every increasing breakpoint sequence drawn
    from `points` (default: the candidate set) with at most `max_points` entries.

    Each bitile can fire in at most one step of a chain, so an optimal chain needs at most
    twice as many points as there are bitiles over x; that is the default bound.
    """
    bitiles = list(bitiles)
    center = (x + 0.5) * f.cell_width
    active = [P for P in bitiles if P.time.contains(center)]
    if not active:
        return 0.0
    if points is None:
        ends = sorted({0.0} | {v for P in active for v in (P.freq.left, P.freq.center, P.freq.right)})
        points = sorted(set(ends) | {(a + b) / 2 for a, b in zip(ends[:-1], ends[1:])})
    points = np.asarray(points, dtype=float)
    W = _definition_weights(f, active, r, x, points, tilde)
    limit = min(len(points), max_points or 2 * len(active))
    best = 0.0
    for k in range(2, limit + 1):
        idx = _combinations(len(points), k)
        totals = np.zeros(len(idx))
        for i in range(k - 1):
            totals += W[idx[:, i], idx[:, i + 1]]
        best = max(best, float(totals.max()))
    return float(variation._root(best, r))


def c_rp_fine_grid(f: GridFunction, bitiles: Sequence[Bitile], r: float, x: int,
                   refinement: int = 4, tilde: bool = False) -> float:
    """C_{r,P} f(x) with breakpoints restricted to a uniform grid `refinement` times finer than the
    finest endpoint spacing (both endpoints included); an independent check of the candidate reduction."""
    bitiles = list(bitiles)
    if not bitiles:
        return 0.0
    step = min(P.up().freq.length for P in bitiles) / refinement
    top = max(P.freq.right for P in bitiles)
    points = np.arange(0.0, top + 2 * step, step)
    W = _definition_weights(f, bitiles, r, x, points, tilde)
    power, _ = _longest_chain(np.triu(W, 1))
    return float(variation._root(power, r))


# ---------------------------------------------------------------- reflection

def reflection_twist(bitiles: Iterable[Bitile], N: int, L: int, M: int = 0) -> GridFunction:
    """The unimodular function prod_{j=-k0}^{N-1} r_j(x), k0 the coarsest time scale (at least 0).

    On each I_P it agrees up to a constant sign with w_{2^(N+k)-1}(x/|I_P|), which links the
    wave packets of P and of its reflection: w_{reflect(P)_u} = w_{2^(N+k)-1}(x/|I_P|) w_{P_d}.
    """
    k0 = max([0] + [P.k for P in bitiles])
    if N > L:
        raise ValueError(f"reflection exponent {N} exceeds the grid resolution {L}")
    c2 = 2 * np.arange(1 << (M + L), dtype=np.int64) + 1
    parity = np.zeros(len(c2), dtype=np.int64)
    for j in range(-k0, N):
        parity ^= (c2 >> (L - j)) & 1
    return GridFunction(L, M, 1.0 - 2.0 * parity)


def tilde_via_reflection(f: GridFunction, bitiles: Sequence[Bitile], r: float, x: int, N: int | None = None) -> float:
    """c_rp of the twisted function on the reflected collection; equals c_rp_tilde(f, P, r, x)."""
    from .tiles import reflection_exponent
    bitiles = list(bitiles)
    if not bitiles:
        return 0.0
    N = reflection_exponent(bitiles) if N is None else N
    twisted = f * reflection_twist(bitiles, N, f.L, f.M)
    return c_rp(twisted, [reflect(P, N) for P in bitiles], r, x)


# ---------------------------------------------------------------- breakpoint data

@dataclass(frozen=True, eq=False)
class BreakpointData:
    """Per cell x: K(x) breakpoints 0 < N_1(x) < ... < N_K(x) and dual vectors a_j(x).

    `space` is the dual space X* holding the a_j, with its own norm.

    Arrays: K (cells,), N (cells, Kmax) padded with NaN, a (cells, Kmax, d).  N_0 = 0 is
    implicit.  Rows are normalized so that sum_j |a_j|^r' = 1 wherever K > 0.
    """

    K: np.ndarray
    N: np.ndarray
    a: np.ndarray
    r: float
    space: ValueSpace = SCALAR

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.int64)
        N = np.asarray(self.N, dtype=float)
        a = np.asarray(self.a, dtype=float)
        cells = len(K)
        if N.ndim != 2 or N.shape[0] != cells or a.shape != N.shape + (self.space.d,):
            raise ValueError("breakpoint arrays have inconsistent shapes")
        if np.any(K < 0) or np.any(K > N.shape[1]):
            raise ValueError("breakpoint counts out of range")
        used = np.arange(N.shape[1])[None, :] < K[:, None]
        if np.any(np.isnan(N[used])) or np.any(N[used] <= 0):
            raise ValueError("breakpoints must be positive reals (N_0 = 0 is implicit)")
        gaps = np.diff(np.where(used, N, 0.0), axis=1)
        if np.any((gaps <= 0) & used[:, 1:]):
            raise ValueError("breakpoints must be strictly increasing in every cell")
        a = np.where(used[:, :, None], a, 0.0)
        weights = self._row_weights(a)
        if np.any((weights == 0) & (K > 0)):
            raise ValueError("a cell with K > 0 has all dual vectors equal to zero")
        if np.any(np.abs(weights - 1.0) > 1e-12):
            scale = np.where(weights > 0, weights, 1.0) ** (-1.0 / self.r_conj)
            a = a * scale[:, None, None]
        N = np.where(used, N, np.nan)
        for arr in (K, N, a):
            arr.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "a", a)

    @property
    def r_conj(self) -> float:
        return self.r / (self.r - 1.0)

    @property
    def cells(self) -> int:
        return len(self.K)

    def _row_weights(self, a) -> np.ndarray:
        return np.sum(np.asarray(self.space.norm(a)) ** self.r_conj, axis=1)

    def normalization_error(self) -> float:
        w = self._row_weights(self.a)
        return float(np.max(np.abs(np.where(self.K > 0, w - 1.0, 0.0)), initial=0.0))

    def with_zero_start(self) -> np.ndarray:
        """Array (cells, Kmax + 1) holding N_0 = 0 followed by the breakpoints (NaN padded)."""
        return np.concatenate([np.zeros((self.cells, 1)), self.N], axis=1)

    @classmethod
    def empty(cls, cells: int, r: float, space: ValueSpace = SCALAR) -> BreakpointData:
        return cls(np.zeros(cells, dtype=np.int64), np.zeros((cells, 0)), np.zeros((cells, 0, space.d)), r, space)

    @classmethod
    def from_rows(cls, rows: Sequence[tuple[Sequence[float], Sequence]], r: float,
                  space: ValueSpace = SCALAR) -> BreakpointData:
        """Build from per-cell (breakpoints, dual vectors) pairs."""
        kmax = max([len(n) for n, _ in rows] + [0])
        cells = len(rows)
        K = np.zeros(cells, dtype=np.int64)
        N = np.full((cells, kmax), np.nan)
        a = np.zeros((cells, kmax, space.d))
        for x, (ns, vecs) in enumerate(rows):
            K[x] = len(ns)
            N[x, :len(ns)] = ns
            if len(ns):
                a[x, :len(ns)] = np.asarray(vecs, dtype=float).reshape(len(ns), space.d)
        return cls(K, N, a, r, space)

    def to_json(self) -> dict:
        return {
            "r": self.r,
            "space": self.space.to_json(),
            "cells": [
                {"N": self.N[x, :k].tolist(), "a": self.a[x, :k].tolist()}
                for x, k in enumerate(self.K.tolist())
            ],
        }


def optimal_breakpoints(f: GridFunction, bitiles: Iterable[Bitile], r: float) -> BreakpointData:
    """Breakpoint data realizing C_{r,P} f(x) at every cell through the linearized operator:
    the breakpoints of an optimal chain and dual vectors proportional to |step|^(r-1) times a
    norming functional of each step."""
    _check_r(r)
    if r == 1:
        raise ValueError("the linearization needs r > 1")
    bitiles = list(bitiles)
    data = packet_data(f, bitiles, "d")
    rows = []
    for x in range(f.n_cells):
        chain = crp_chain(data, x, r, f.space) if bitiles else Chain(0.0, np.zeros(1), np.zeros((0, f.d)))
        if chain.power <= 0:
            rows.append(([], []))
            continue
        sizes = np.asarray(f.space.norm(chain.steps))
        duals = f.space.norming_functional(chain.steps) * (sizes ** (r - 1))[:, None]
        duals = duals / chain.power ** (1.0 / conjugate_exponent(r))
        points = list(chain.points)
        if points[0] > 0:
            breakpoints, vecs = points, [np.zeros(f.d)] + list(duals)
        else:
            breakpoints, vecs = points[1:], list(duals)
        rows.append((breakpoints, vecs))
    return BreakpointData.from_rows(rows, r, f.space.dual())


def random_breakpoints(cells: int, r: float, rng: np.random.Generator, kmax: int = 4,
                       top: float = 8.0, resolution: float = 0.5, space: ValueSpace = SCALAR) -> BreakpointData:
    """Random breakpoints on the lattice resolution * {1, 2, ...} below `top`, with random dual vectors."""
    lattice = np.arange(resolution, top, resolution)
    rows = []
    for _ in range(cells):
        k = int(rng.integers(0, min(kmax, len(lattice)) + 1))
        ns = np.sort(rng.choice(lattice, size=k, replace=False))
        vecs = rng.standard_normal((k, space.d))
        if k and np.all(vecs == 0):
            vecs[0, 0] = 1.0
        rows.append((ns, vecs))
    return BreakpointData.from_rows(rows, r, space)


# ---------------------------------------------------------------- linearized operator

def _signs(bitiles: Sequence[Bitile], signs: Mapping[Bitile, int] | None) -> np.ndarray:
    if signs is None:
        return np.ones(len(bitiles))
    out = np.array([signs[P] for P in bitiles], dtype=float)
    if not np.all(np.abs(out) == 1):
        raise ValueError("signs must be +1 or -1")
    return out


def dual_coefficients(bitiles: Sequence[Bitile], B: BreakpointData, L: int, M: int = 0) -> np.ndarray:
    """a_P(x) = sum_j 1{N_j(x) in [omega_{P_u}), N_{j-1}(x) not in the interior of omega_P} a_j(x),
    as an array (len(bitiles), cells, d)."""
    full = B.with_zero_start()
    prev, now = full[:, :-1], full[:, 1:]
    out = np.zeros((len(bitiles), B.cells, B.space.d))
    for i, P in enumerate(bitiles):
        lo, hi = P.freq.left, P.freq.right
        mid = (lo + hi) / 2
        fires = (now >= mid) & (now < hi) & ~((prev > lo) & (prev < hi))
        fires &= interval_cell_mask(P.time, L, M)[:, None]
        out[i] = np.einsum("xj,xjd->xd", fires.astype(float), B.a)
    return out


def linearized_cp(f: GridFunction, bitiles: Iterable[Bitile], signs: Mapping[Bitile, int] | None,
                  B: BreakpointData) -> GridFunction:
    """x -> sum_P eps_P <<f, w_{P_d}> w_{P_d}(x), a_P(x)>, a scalar function."""
    bitiles = list(bitiles)
    if B.cells != f.n_cells:
        raise ValueError("breakpoint data and function live on different grids")
    if B.space.d != f.d:
        raise ValueError("dual vectors and function values have different dimensions")
    if B.normalization_error() > 1e-12:
        raise ValueError("breakpoint data violates sum_j |a_j|^r' = 1")
    if not bitiles:
        return GridFunction.zeros(f.L, f.M)
    data = packet_data(f, bitiles, "d")
    eps = _signs(bitiles, signs)
    a_P = dual_coefficients(bitiles, B, f.L, f.M)
    pairs = np.einsum("pd,pxd->px", data.coefs, a_P)
    return GridFunction(f.L, f.M, np.sum(eps[:, None] * data.packets * pairs, axis=0))


def pairing_terms(f: GridFunction, g: GridFunction, bitiles: Sequence[Bitile], B: BreakpointData) -> np.ndarray:
    """t_P = <<f, w_{P_d}> w_{P_d} a_P, g> for every bitile; sum_P eps_P t_P is the pairing."""
    data = packet_data(f, bitiles, "d")
    a_P = dual_coefficients(bitiles, B, f.L, f.M)
    pairs = np.einsum("pd,pxd->px", data.coefs, a_P)
    weight = g.scalar() if g.d == 1 else g.norms()
    return f.cell_width * np.sum(data.packets * pairs * weight[None, :], axis=1)


# ---------------------------------------------------------------- size

def _tree_members(bitiles: Sequence[Bitile], tops: Sequence[Bitile], rel) -> np.ndarray:
    """Boolean matrix [top, bitile] of the relation rel(bitile, top)."""
    if rel is bitile_le_u:
        return relation_matrix(bitiles, tops, "up")
    if rel is bitile_le_d:
        return relation_matrix(bitiles, tops, "down")
    out = np.zeros((len(tops), len(bitiles)), dtype=bool)
    for t, T in enumerate(tops):
        for i, P in enumerate(bitiles):
            out[t, i] = rel(P, T)
    return out


def candidate_tops(bitiles: Iterable[Bitile], L: int, M: int = 0) -> list[Bitile]:
    """Every grid bitile whose down-tile is representable.  Tops with an unrepresentable up-tile
    only occur at the finest scale, where they carry the single-bitile tree of themselves."""
    return grid_bitiles(L, M, "d")


@dataclass
class SizeResult:
    value: float
    top: Bitile | None
    members: frozenset


def tree_energies(f: GridFunction, bitiles: Sequence[Bitile], tops: Sequence[Bitile], q: float,
                  member_matrix: np.ndarray | None = None) -> np.ndarray:
    """For each top T: (1/|I_T|) int |sum_{P <=_u T} <f, w_{P_d}> w_{P_d}|^q."""
    if member_matrix is None:
        member_matrix = _tree_members(bitiles, tops, bitile_le_u)
    if not len(bitiles) or not len(tops):
        return np.zeros(len(tops))
    funcs = packet_data(f, bitiles, "d").terms()
    sums = np.tensordot(member_matrix.astype(float), funcs, axes=(1, 0))  # (tops, cells, d)
    norms = np.asarray(f.space.norm(sums))
    lengths = np.array([T.time.length for T in tops])
    return f.cell_width * np.sum(norms ** q, axis=1) / lengths


def size(bitiles: Iterable[Bitile], f: GridFunction, q: float, detail: bool = False):
    """sup over up-trees T in the collection of ((1/|I_T|) int |sum_{P in T} <f, w_{P_d}> w_{P_d}|^q)^(1/q),
    evaluated over the maximal up-tree under every representable top."""
    bitiles = sorted(set(bitiles))
    if not bitiles:
        return SizeResult(0.0, None, frozenset()) if detail else 0.0
    tops = candidate_tops(bitiles, f.L, f.M)
    members = _tree_members(bitiles, tops, bitile_le_u)
    energies = tree_energies(f, bitiles, tops, q, members)
    t = int(np.argmax(energies))
    value = float(energies[t] ** (1.0 / q))
    if not detail:
        return value
    return SizeResult(value, tops[t], frozenset(P for P, m in zip(bitiles, members[t]) if m))


def size_subtree_bruteforce(bitiles: Iterable[Bitile], f: GridFunction, q: float) -> float:
    """Reference size: every nonempty subset that is an up-tree under some representable top, with
    the smallest such top (largest normalization)."""
    bitiles = sorted(set(bitiles))
    tops = candidate_tops(bitiles, f.L, f.M)
    members = _tree_members(bitiles, tops, bitile_le_u)
    funcs = packet_data(f, bitiles, "d").terms()
    lengths = np.array([T.time.length for T in tops])
    best = 0.0
    n = len(bitiles)
    for mask in range(1, 1 << n):
        chosen = np.array([(mask >> i) & 1 for i in range(n)], dtype=bool)
        fits = np.all(members[:, chosen], axis=1)
        if not fits.any():
            continue
        shortest = lengths[fits].min()
        total = funcs[chosen].sum(axis=0)
        energy = f.cell_width * np.sum(np.asarray(f.space.norm(total)) ** q) / shortest
        best = max(best, energy)
    return float(best ** (1.0 / q))


# ---------------------------------------------------------------- density

@dataclass
class DensityResult:
    value: float
    first_omitted_scale: int
    witness: tuple | None = None        # (P, P') attaining the supremum


def density_table(g: GridFunction, B: BreakpointData) -> dict[int, np.ndarray]:
    """For each time scale k: D[k][m, n] = (1/2^k) int_{I} |g|^r' sum_{j: N_j in omega} |a_j|^r'
    over the bitile I x omega with I = [m 2^k, (m+1) 2^k) and omega of index n at scale 1 - k."""
    rc = B.r_conj
    weight = (g.norms() ** rc)[:, None] * np.asarray(B.space.norm(B.a)) ** rc      # (cells, Kmax)
    used = ~np.isnan(B.N)
    cells, j = np.nonzero(used & (weight > 0))
    w = weight[cells, j]
    freqs = B.N[cells, j]
    out = {}
    for k in range(-g.L, g.M + 1):
        m = cells >> (k + g.L)
        n = np.floor(freqs / math.ldexp(1.0, 1 - k)).astype(np.int64)
        width = int(n.max()) + 1 if len(n) else 1
        table = np.zeros((1 << (g.M - k), width))
        np.add.at(table, (m, n), w)
        out[k] = table * (g.cell_width / math.ldexp(1.0, k))
    return out


def density(bitiles: Iterable[Bitile], g: GridFunction, B: BreakpointData, r: float | None = None,
            detail: bool = False, table: dict | None = None):
    """sup over P in the collection and bitiles P' >= P inside the domain of the density averages,
    raised to 1/r'.  The supremum stops at time scale M; `first_omitted_scale` reports M + 1."""
    if r is not None and abs(r - B.r) > 1e-15:
        raise ValueError("exponent r differs from the one used to normalize the breakpoint data")
    if table is None:
        table = density_table(g, B)
    best, witness = 0.0, None
    for P in set(bitiles):
        for k in range(max(P.k, -g.L), g.M + 1):
            D = table[k]
            m = P.time.n >> (k - P.k)
            lo = P.freq_index << (k - P.k)
            hi = min((P.freq_index + 1) << (k - P.k), D.shape[1])
            if lo >= hi:
                continue
            seg = D[m, lo:hi]
            i = int(np.argmax(seg))
            if seg[i] > best:
                best, witness = float(seg[i]), (P, Bitile.make(k, m, lo + i))
    value = best ** (1.0 / B.r_conj)
    if detail:
        return DensityResult(value, g.M + 1, witness)
    return value


def density_values(bitiles: Sequence[Bitile], table: dict[int, np.ndarray], M: int) -> np.ndarray:
    """sup_{P' >= P} of the density average (before the 1/r' root) for each bitile separately."""
    out = np.zeros(len(bitiles))
    for i, P in enumerate(bitiles):
        for k in range(P.k, M + 1):
            D = table[k]
            m = P.time.n >> (k - P.k)
            lo = P.freq_index << (k - P.k)
            hi = min((P.freq_index + 1) << (k - P.k), D.shape[1])
            if lo < hi:
                out[i] = max(out[i], float(D[m, lo:hi].max()))
    return out


# ---------------------------------------------------------------- tree operator

def a_sets(T: Tree, B: BreakpointData, L: int, M: int = 0) -> dict[tuple[Bitile, int], np.ndarray]:
    """A(P, j) = I_P intersected with {N_{j-1} not in the interior of omega_P, N_j in [omega_{P_u})},
    as boolean cell masks for every P in the tree and j = 1..Kmax."""
    full = B.with_zero_start()
    out = {}
    for P in T:
        lo, hi = P.freq.left, P.freq.right
        mid = (lo + hi) / 2
        time = interval_cell_mask(P.time, L, M)
        for j in range(1, full.shape[1]):
            now, prev = full[:, j], full[:, j - 1]
            mask = time & (now >= mid) & (now < hi) & ~((prev > lo) & (prev < hi))
            out[(P, j)] = mask
    return out


def a_set_overlaps(T: Tree, B: BreakpointData, L: int, M: int = 0) -> list[tuple]:
    """Pairs ((P, j), (P', j')) of distinct indices whose A-sets share a cell."""
    sets = a_sets(T, B, L, M)
    keys = [key for key, mask in sets.items() if mask.any()]
    out = []
    for i in range(len(keys)):
        for k in range(i + 1, len(keys)):
            if np.any(sets[keys[i]] & sets[keys[k]]):
                out.append((keys[i], keys[k]))
    return out


@dataclass
class TreeEstimate:
    lhs: float
    size: float
    density: float
    top_length: float
    s: float

    @property
    def rhs(self) -> float:
        return self.size * self.density * self.top_length ** (1.0 / self.s)

    @property
    def ratio(self) -> float:
        if self.lhs == 0:
            return 0.0
        return self.lhs / self.rhs if self.rhs > 0 else math.inf


def tree_operator_norm(T: Tree, f: GridFunction, g: GridFunction, signs: Mapping[Bitile, int] | None,
                       B: BreakpointData, s: float, q: float = 2.0) -> TreeEstimate:
    """||g C_T f||_s against size(T) density(T) |I_T|^(1/s)."""
    rc = B.r_conj
    if not 1 <= s <= rc + 1e-12:
        raise ValueError(f"s must lie in [1, r'] = [1, {rc}], got {s}")
    bitiles = list(T)
    op = linearized_cp(f, bitiles, signs, B)
    weight = g.scalar() if g.d == 1 else g.norms()
    lhs = lp_norm(op * GridFunction(g.L, g.M, weight), s)
    return TreeEstimate(lhs, size(bitiles, f, q), density(bitiles, g, B), T.top.time.length, s)
