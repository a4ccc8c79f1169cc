"""r-variation norms, mixed L^p(V^r) norms, dyadic martingales, maximal function and BMO.

The variation of a finite sequence x_0..x_n is

    V^r(x) = sup_{i_0 < ... < i_K} (sum_j |x_{i_j} - x_{i_{j-1}}|^r)^(1/r),

computed exactly by dynamic programming over chain end points.  For scalar sequences
the DP only needs predecessors j for which x_j and x_i are the two extremes of the
window x_j..x_i: any chain can be refined to one with this property without lowering
its sum, since inserting a point outside the range of its neighbours never decreases
|a - b|^r for r >= 1.  That pruning makes the scalar kernel close to linear on
random-walk data.
"""
from __future__ import annotations

import itertools
import math
import os
from typing import Sequence

import numba
import numpy as np

from .core import SCALAR, GridFunction, ValueSpace, lp_norm

if "NUMBA_THREADING_LAYER" not in os.environ:
    try:
        from numba.np.ufunc import omppool  # noqa: F401
        numba.config.THREADING_LAYER = "omp"
    except ImportError:
        pass


@numba.njit(cache=True, nogil=True, parallel=True)
def _scalar_variation_power(X, r):
    """sum of |increments|^r along the best chain, for every row of X."""
    rows, n = X.shape
    out = np.zeros(rows)
    for row in numba.prange(rows):
        x = X[row]
        best = np.zeros(n)
        top = 0.0
        for i in range(1, n):
            xi = x[i]
            lo = np.inf
            hi = -np.inf
            value = 0.0
            for j in range(i - 1, -1, -1):
                xj = x[j]
                if min(xi, xj) <= lo and max(xi, xj) >= hi:
                    cand = best[j] + abs(xi - xj) ** r
                    if cand > value:
                        value = cand
                if xj < lo:
                    lo = xj
                if xj > hi:
                    hi = xj
                if lo < xi and hi > xi:
                    break
            best[i] = value
            if value > top:
                top = value
        out[row] = top
    return out


def _as_batch(seq, space: ValueSpace) -> np.ndarray:
    """Reshape a sequence (n,), (n, d) or batch (..., n, d) to (batch, n, d)."""
    a = np.asarray(seq, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[-1] != space.d:
        if space.d == 1:
            a = a[..., None]
        else:
            raise ValueError(f"sequence entries have dimension {a.shape[-1]}, space has {space.d}")
    return a.reshape((-1,) + a.shape[-2:])


def variation_power_batch(batch: np.ndarray, r: float, space: ValueSpace = SCALAR) -> np.ndarray:
    """V^r(x)^r for every sequence in an array of shape (batch, n, d); r must be finite."""
    if r < 1:
        raise ValueError(f"variation exponent must be at least 1, got {r}")
    if math.isinf(r):
        raise ValueError("use variation_batch for r = inf")
    b, n, _ = batch.shape
    if n < 2:
        return np.zeros(b)
    if space.d == 1 and space.weights is None:
        return _scalar_variation_power(np.ascontiguousarray(batch[:, :, 0]), float(r))
    best = np.zeros((b, n))
    for i in range(1, n):
        steps = np.asarray(space.norm(batch[:, i:i + 1, :] - batch[:, :i, :])) ** r
        best[:, i] = np.max(best[:, :i] + steps, axis=1)
    return best.max(axis=1)


def variation_batch(batch: np.ndarray, r: float, space: ValueSpace = SCALAR) -> np.ndarray:
    """V^r of every sequence in an array of shape (batch, n, d)."""
    if r < 1:
        raise ValueError(f"variation exponent must be at least 1, got {r}")
    b, n, _ = batch.shape
    if n < 2:
        return np.zeros(b)
    if math.isinf(r):
        if space.d == 1 and space.weights is None:
            x = batch[:, :, 0]
            return x.max(axis=1) - x.min(axis=1)
        out = np.zeros(b)
        for i in range(1, n):
            out = np.maximum(out, np.asarray(space.norm(batch[:, i:i + 1, :] - batch[:, :i, :])).max(axis=1))
        return out
    return _root(variation_power_batch(batch, r, space), r)


def _root(power, r: float):
    return np.power(power, 1.0 / r)


def variation_norm(seq, r: float, space: ValueSpace = SCALAR, start: int = 0, stop: int | None = None) -> float:
    """Exact V^r norm of a single sequence, optionally restricted to the index range [start, stop)."""
    batch = _as_batch(seq, space)
    if batch.shape[0] != 1:
        raise ValueError("variation_norm takes a single sequence; use variation_batch")
    return float(variation_batch(batch[:, start:stop], r, space)[0])


def variation_bruteforce(seq, r: float, space: ValueSpace = SCALAR) -> float:
    """Reference value: maximize over every increasing index subsequence."""
    x = _as_batch(seq, space)[0]
    n = len(x)
    best = 0.0
    for size in range(2, n + 1):
        for idx in itertools.combinations(range(n), size):
            steps = np.asarray(space.norm(np.diff(x[list(idx)], axis=0)))
            value = float(steps.max()) if math.isinf(r) else float(np.sum(steps ** r))
            best = max(best, value)
    return best if math.isinf(r) else float(_root(np.float64(best), r))


def lp_vr_norm(family: Sequence[GridFunction] | np.ndarray, p: float, r: float,
               L: int | None = None, space: ValueSpace | None = None) -> float:
    """L^p norm of x -> V^r of the sequence {f_n(x)}.

    `family` is a list of GridFunctions on a common grid, or an array (cells, n, d)
    together with the resolution L.
    """
    if isinstance(family, np.ndarray):
        if L is None:
            raise ValueError("an array family needs the grid resolution L")
        batch, space = family, space or SCALAR
    else:
        family = list(family)
        batch, L, space = stack_family(family), family[0].L, family[0].space
    per_cell = variation_batch(batch, r, space)
    return _lp_of_cells(per_cell, p, L)


def stack_family(family: Sequence[GridFunction]) -> np.ndarray:
    first = family[0]
    for f in family[1:]:
        first.check_grid(f)
    return np.stack([f.values for f in family], axis=1)


def _lp_of_cells(values: np.ndarray, p: float, L: int) -> float:
    if math.isinf(p):
        return float(np.max(values, initial=0.0))
    return float((math.ldexp(float(np.sum(values ** p)), -L)) ** (1.0 / p))


def cond_expectation(f: GridFunction, k: int) -> GridFunction:
    """Average of f over the dyadic interval of length 2^k containing each cell."""
    if not -f.L <= k <= f.M:
        raise ValueError(f"scale {k} is outside the representable range [{-f.L}, {f.M}]")
    width = 1 << (k + f.L)
    blocks = f.values.reshape(-1, width, f.d)
    means = blocks.mean(axis=1, keepdims=True)
    return f.with_values(np.broadcast_to(means, blocks.shape).reshape(f.values.shape))


def martingale(f: GridFunction) -> np.ndarray:
    """Array (cells, L+M+1, d) of E_k f from the coarsest scale k = M down to k = -L."""
    return np.stack([cond_expectation(f, k).values for k in range(f.M, -f.L - 1, -1)], axis=1)


def dyadic_maximal(f: GridFunction) -> GridFunction:
    out = np.zeros(f.n_cells)
    for k in range(-f.L, f.M + 1):
        out = np.maximum(out, cond_expectation(f, k).norms())
    return GridFunction(f.L, f.M, out)


def bmo_norm(f: GridFunction) -> float:
    """sup over dyadic I of the mean over I of norm(f - mean_I f)."""
    best = 0.0
    for k in range(-f.L, f.M + 1):
        osc = (f - cond_expectation(f, k)).norms()
        per_interval = osc.reshape(-1, 1 << (k + f.L)).mean(axis=1)
        best = max(best, float(per_interval.max()))
    return best


def lepingle_ratio(f: GridFunction, p: float, r: float) -> float:
    """||V^r of the dyadic martingale of f||_p / ||f||_p."""
    denom = lp_norm(f, p)
    if denom == 0:
        raise ZeroDivisionError("the ratio is undefined for f = 0")
    return lp_vr_norm(martingale(f), p, r, L=f.L, space=f.space) / denom


def haar_level(f: GridFunction, k: int) -> GridFunction:
    """sum over |I| = 2^-k of <f, h_I> h_I, which is E_{-k-1} f - E_{-k} f."""
    return cond_expectation(f, -k - 1) - cond_expectation(f, -k)


def haar_cotype_sum(f: GridFunction, q: float) -> float:
    """(sum_k ||Haar level k of f||_q^q)^(1/q) over the levels k = 0..L-1 resolved by the grid."""
    if f.M != 0:
        raise ValueError("the Haar cotype sum is defined on the unit interval (M = 0)")
    total = sum(lp_norm(haar_level(f, k), q) ** q for k in range(f.L))
    return float(total ** (1.0 / q))
