"""Rademacher and Walsh functions (Paley order), the fast Walsh transform, wave packets and Haar functions.

On a grid of resolution L the cell c has center (c + 1/2) 2^-L, and r_i at that center
is -1 exactly when bit L-1-i of c is set.  Hence w_n(center of c) = (-1)^popcount(n & rev_L(c)),
where rev_L reverses the lowest L bits.  All grid evaluations below use this integer rule.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .core import DyadicInterval, GridFunction, SCALAR, ValueSpace


def rademacher(i: int, x: float) -> int:
    """sgn sin(2 pi 2^i x): +1 on the first half of each period 2^-i, -1 on the second."""
    if x < 0:
        raise ValueError("Rademacher functions are evaluated on the positive half-line")
    half_periods = math.floor(math.ldexp(x, i + 1))
    return -1 if half_periods % 2 else 1


def walsh_eval(n: int, x: float) -> int:
    if n < 0:
        raise ValueError("Walsh index must be nonnegative")
    value, i = 1, 0
    while n:
        if n & 1:
            value *= rademacher(i, x)
        n >>= 1
        i += 1
    return value


@lru_cache(maxsize=32)
def bit_reversal(bits: int) -> np.ndarray:
    """Permutation c -> c with its lowest `bits` bits reversed."""
    c = np.arange(1 << bits, dtype=np.int64)
    out = np.zeros_like(c)
    for b in range(bits):
        out |= ((c >> b) & 1) << (bits - 1 - b)
    out.setflags(write=False)
    return out


def walsh_signs(n: int, bits: int) -> np.ndarray:
    """w_n at the 2^bits cell centers of [0, 1) as an int8 array of +-1."""
    if n >= 1 << bits:
        raise ValueError(f"w_{n} is not constant on cells of width 2^-{bits}")
    parity = np.bitwise_count(np.int64(n) & bit_reversal(bits)) & 1
    return (1 - 2 * parity).astype(np.int8)


@lru_cache(maxsize=8)
def walsh_matrix(L: int) -> np.ndarray:
    """Matrix W[n, c] = w_n(center of cell c) for n, c < 2^L."""
    n = np.arange(1 << L, dtype=np.int64)[:, None]
    parity = np.bitwise_count(n & bit_reversal(L)[None, :]) & 1
    out = (1 - 2 * parity).astype(np.int8)
    out.setflags(write=False)
    return out


def walsh_function(n: int, L: int, M: int = 0) -> GridFunction:
    """w_n on [0, 2^M) (it has period 1)."""
    signs = walsh_signs(n, L).astype(float)
    return GridFunction(L, M, np.tile(signs, 1 << M))


def fwht(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Unnormalized Walsh-Hadamard butterfly (natural order) along `axis`; returns a new array."""
    a = np.moveaxis(np.array(x, dtype=float), axis, 0)
    n = a.shape[0]
    if n & (n - 1):
        raise ValueError("transform length must be a power of two")
    rest = a.shape[1:]
    h = 1
    while h < n:
        b = a.reshape((n // (2 * h), 2, h) + rest)
        top = b[:, 0] + b[:, 1]
        bottom = b[:, 0] - b[:, 1]
        a = np.stack([top, bottom], axis=1).reshape((n,) + rest)
        h *= 2
    return np.moveaxis(a, 0, axis)


def walsh_coefficients(f: GridFunction) -> np.ndarray:
    """Array of shape (2^L, d) with entry n equal to <f, w_n> on [0, 1)."""
    if f.M != 0:
        raise ValueError("Walsh coefficients are defined for functions on the unit interval (M = 0)")
    permuted = f.values[bit_reversal(f.L)]
    return fwht(permuted) * f.cell_width


def inverse_walsh(coefficients: np.ndarray, space: ValueSpace = SCALAR) -> GridFunction:
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.ndim == 1:
        coefficients = coefficients[:, None]
    L = int(coefficients.shape[0]).bit_length() - 1
    if coefficients.shape[0] != 1 << L:
        raise ValueError("number of coefficients must be a power of two")
    return GridFunction(L, 0, fwht(coefficients)[bit_reversal(L)], space)


def naive_walsh_coefficients(f: GridFunction) -> np.ndarray:
    """O(4^L) reference: evaluate every w_n at every cell center with `walsh_eval`."""
    if f.M != 0:
        raise ValueError("Walsh coefficients are defined for functions on the unit interval (M = 0)")
    centers = f.centers()
    size = f.n_cells
    table = np.array([[walsh_eval(n, x) for x in centers] for n in range(size)], dtype=float)
    return table @ f.values * f.cell_width


def check_tile(time: DyadicInterval, freq_index: int, L: int, M: int):
    if time.k < -L:
        raise ValueError(f"tile time interval {time} is finer than the grid")
    if time.k > M or time.n >= 1 << (M - time.k):
        raise ValueError(f"tile time interval {time} leaves the domain [0, 2^{M})")
    if freq_index >= 1 << (L + time.k):
        raise ValueError(f"tile frequency index {freq_index} at scale {time.k} is finer than the grid")


def tile_is_representable(time: DyadicInterval, freq_index: int, L: int, M: int) -> bool:
    try:
        check_tile(time, freq_index, L, M)
    except ValueError:
        return False
    return True


def wave_packet_inf(P, L: int, M: int = 0) -> GridFunction:
    """1_{I_P}(x) w_n(x / |I_P|) for a tile P with time interval I_P and frequency index n."""
    time, n = P.time, P.freq_index
    check_tile(time, n, L, M)
    vals = np.zeros(1 << (M + L))
    lo, hi = time.cell_range(L)
    vals[lo:hi] = walsh_signs(n, L + time.k)
    return GridFunction(L, M, vals)


def wave_packet(P, L: int, M: int = 0) -> GridFunction:
    """L^2-normalized wave packet |I_P|^{-1/2} 1_{I_P}(x) w_n(x / |I_P|)."""
    return wave_packet_inf(P, L, M) * (1.0 / math.sqrt(P.time.length))


class _HaarTile:
    __slots__ = ("time", "freq_index")

    def __init__(self, time: DyadicInterval):
        self.time = time
        self.freq_index = 1


def haar(I: DyadicInterval, L: int, M: int = 0) -> GridFunction:
    """h_I = |I|^{-1/2} (1 on the left half of I, -1 on the right half)."""
    return wave_packet(_HaarTile(I), L, M)


def packet_coefficients(f: GridFunction, k: int) -> np.ndarray:
    """<f, w_P> for every tile P with |I_P| = 2^k, as an array indexed [time n, frequency n, coordinate]."""
    if not -f.L <= k <= f.M:
        raise ValueError(f"scale {k} is not representable on the grid")
    width = 1 << (f.L + k)
    blocks = f.values.reshape(-1, width, f.d)[:, bit_reversal(f.L + k), :]
    return fwht(blocks, axis=1) * (f.cell_width / math.sqrt(math.ldexp(1.0, k)))


def packet_synthesis(coefficients: np.ndarray, k: int, L: int, M: int,
                     space: ValueSpace = SCALAR) -> GridFunction:
    """Inverse of `packet_coefficients`: sum over tiles of coefficient * w_P."""
    width = 1 << (L + k)
    c = np.asarray(coefficients, dtype=float).reshape(1 << (M - k), width, space.d)
    vals = fwht(c, axis=1)[:, bit_reversal(L + k), :] / math.sqrt(math.ldexp(1.0, k))
    return GridFunction(L, M, vals.reshape(-1, space.d), space)


def tile_coefficient(f: GridFunction, P) -> np.ndarray:
    """<f, w_P> as a vector of length d."""
    time, n = P.time, P.freq_index
    check_tile(time, n, f.L, f.M)
    lo, hi = time.cell_range(f.L)
    signs = walsh_signs(n, f.L + time.k).astype(float)
    return signs @ f.values[lo:hi] * (f.cell_width / math.sqrt(time.length))


def tile_projection(f: GridFunction, tiles, weights=None) -> GridFunction:
    """sum over tiles P of weight_P <f, w_P> w_P, grouped by scale through the blockwise transform."""
    tiles = list(tiles)
    if weights is None:
        weights = [1.0] * len(tiles)
    by_scale: dict[int, list] = {}
    for P, w in zip(tiles, weights):
        check_tile(P.time, P.freq_index, f.L, f.M)
        by_scale.setdefault(P.time.k, []).append((P.time.n, P.freq_index, float(w)))
    total = np.zeros_like(f.values)
    for k, entries in by_scale.items():
        coefs = packet_coefficients(f, k)
        mask = np.zeros(coefs.shape[:2])
        for m, n, w in entries:
            mask[m, n] += w
        total += packet_synthesis(coefs * mask[:, :, None], k, f.L, f.M, f.space).values
    return f.with_values(total)
