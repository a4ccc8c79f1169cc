"""Dyadic intervals, finite-dimensional value spaces and grid-sampled step functions.

A grid is fixed by two integers: the resolution ``L`` (cells of width 2^-L) and
the extent ``M`` (domain [0, 2^M)).  Every function is constant on cells, so all
integrals are finite sums of cell_width * value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np


@dataclass(frozen=True, order=True)
class DyadicInterval:
    """The interval [n 2^k, (n+1) 2^k) on the positive half-line."""

    k: int
    n: int

    def __post_init__(self):
        if self.n < 0:
            raise ValueError(f"dyadic index must be nonnegative, got {self.n}")

    @property
    def length(self) -> float:
        return math.ldexp(1.0, self.k)

    @property
    def left(self) -> float:
        return math.ldexp(float(self.n), self.k)

    @property
    def right(self) -> float:
        return math.ldexp(float(self.n + 1), self.k)

    @property
    def center(self) -> float:
        return math.ldexp(2.0 * self.n + 1.0, self.k - 1)

    def exact_bounds(self) -> tuple[Fraction, Fraction]:
        unit = Fraction(2) ** self.k
        return self.n * unit, (self.n + 1) * unit

    def parent(self) -> DyadicInterval:
        return DyadicInterval(self.k + 1, self.n // 2)

    def ancestor(self, k: int) -> DyadicInterval:
        if k < self.k:
            raise ValueError("ancestor scale must not be finer than the interval")
        return DyadicInterval(k, self.n >> (k - self.k))

    def children(self) -> tuple[DyadicInterval, DyadicInterval]:
        return DyadicInterval(self.k - 1, 2 * self.n), DyadicInterval(self.k - 1, 2 * self.n + 1)

    def is_upper_half(self) -> bool:
        return self.n % 2 == 1

    def contains(self, x: float) -> bool:
        return self.left <= x < self.right

    def contains_interior(self, x: float) -> bool:
        return self.left < x < self.right

    def contains_interval(self, other: DyadicInterval) -> bool:
        if other.k > self.k:
            return False
        return (other.n >> (self.k - other.k)) == self.n

    def intersects(self, other: DyadicInterval) -> bool:
        return self.contains_interval(other) or other.contains_interval(self)

    def cell_range(self, L: int) -> tuple[int, int]:
        """Half-open range of cell indices covered at resolution L."""
        if self.k < -L:
            raise ValueError(f"interval of scale {self.k} is finer than the grid resolution 2^-{L}")
        width = 1 << (self.k + L)
        return self.n * width, (self.n + 1) * width

    def to_json(self) -> dict:
        return {"k": self.k, "n": self.n}

    @classmethod
    def from_json(cls, data: dict) -> DyadicInterval:
        return cls(int(data["k"]), int(data["n"]))

    def __str__(self):
        lo, hi = self.exact_bounds()
        return f"[{lo},{hi})"


def conjugate_exponent(p: float) -> float:
    if p < 1:
        raise ValueError(f"exponent must be at least 1, got {p}")
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


@dataclass(frozen=True)
class ValueSpace:
    """R^d with the norm (sum_i |s_i v_i|^p)^(1/p); s is an optional positive weight vector.

    The dual space carries the conjugate exponent and the reciprocal weights, so that
    the coordinate pairing satisfies |<u, v>| <= norm(u) * dual_norm(v).
    """

    d: int = 1
    p: float = 2.0
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be positive")
        if not (self.p >= 1):
            raise ValueError(f"norm exponent must lie in [1, inf], got {self.p}")
        if self.weights is not None:
            w = tuple(float(x) for x in self.weights)
            if len(w) != self.d or min(w) <= 0:
                raise ValueError("weights must be d positive numbers")
            object.__setattr__(self, "weights", w)

    def dual(self) -> ValueSpace:
        w = None if self.weights is None else tuple(1.0 / x for x in self.weights)
        return ValueSpace(self.d, conjugate_exponent(self.p), w)

    def norm(self, v) -> np.ndarray | float:
        """Norm along the last axis."""
        v = np.asarray(v, dtype=float)
        if self.weights is not None:
            v = v * np.asarray(self.weights)
        if self.d == 1:
            out = np.abs(v[..., 0])
        elif math.isinf(self.p):
            out = np.max(np.abs(v), axis=-1)
        elif self.p == 1:
            out = np.sum(np.abs(v), axis=-1)
        elif self.p == 2:
            out = np.sqrt(np.sum(v * v, axis=-1))
        else:
            out = np.sum(np.abs(v) ** self.p, axis=-1) ** (1.0 / self.p)
        return out if out.ndim else float(out)

    def dual_norm(self, v) -> np.ndarray | float:
        return self.dual().norm(v)

    @staticmethod
    def pairing(u, v) -> np.ndarray | float:
        out = np.sum(np.asarray(u, dtype=float) * np.asarray(v, dtype=float), axis=-1)
        return out if np.ndim(out) else float(out)

    def norming_functional(self, v) -> np.ndarray:
        """Dual vectors a with dual_norm(a) = 1 and <v, a> = norm(v) (zero where v = 0)."""
        v = np.asarray(v, dtype=float)
        s = np.ones(self.d) if self.weights is None else np.asarray(self.weights)
        u = v * s
        nrm = np.asarray(self.norm(v), dtype=float)[..., None]
        safe = np.where(nrm > 0, nrm, 1.0)
        if self.d == 1 or self.p == 1:
            a = np.sign(u)
        elif math.isinf(self.p):
            a = np.zeros_like(u)
            idx = np.argmax(np.abs(u), axis=-1)
            np.put_along_axis(a, idx[..., None], np.sign(np.take_along_axis(u, idx[..., None], -1)), -1)
        else:
            a = np.sign(u) * (np.abs(u) / safe) ** (self.p - 1)
        return np.where(nrm > 0, a * s, 0.0)

    def describe(self) -> str:
        base = f"lp:{self.d}:{'inf' if math.isinf(self.p) else format(self.p, 'g')}"
        return base if self.weights is None else base + ":w"

    @classmethod
    def parse(cls, text: str) -> ValueSpace:
        """Parse a descriptor such as ``lp:4:2`` (d=4, p=2) or ``lp:1:2``."""
        parts = text.split(":")
        if len(parts) != 3 or parts[0] != "lp":
            raise ValueError(f"space descriptor must look like lp:d:p, got {text!r}")
        return cls(int(parts[1]), float(parts[2]))

    def to_json(self) -> dict:
        out = {"d": self.d, "norm": "lp", "p": "inf" if math.isinf(self.p) else self.p}
        if self.weights is not None:
            out["weights"] = list(self.weights)
        return out


SCALAR = ValueSpace(1, 2.0)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Step function on [0, 2^M) with 2^(M+L) cells and values in a ValueSpace."""

    L: int
    M: int
    values: np.ndarray
    space: ValueSpace = field(default=SCALAR)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        n = 1 << (self.M + self.L) if self.M + self.L >= 0 else 0
        if self.M + self.L < 0:
            raise ValueError("the grid must contain at least one cell")
        if vals.shape != (n, self.space.d):
            raise ValueError(f"expected values of shape {(n, self.space.d)}, got {vals.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, L: int, M: int = 0, space: ValueSpace = SCALAR) -> GridFunction:
        return cls(L, M, np.zeros((1 << (M + L), space.d)), space)

    @classmethod
    def indicator(cls, L: int, M: int, interval: DyadicInterval) -> GridFunction:
        vals = np.zeros(1 << (M + L))
        lo, hi = interval.cell_range(L)
        vals[lo:min(hi, len(vals))] = 1.0
        return cls(L, M, vals)

    @property
    def n_cells(self) -> int:
        return self.values.shape[0]

    @property
    def cell_width(self) -> float:
        return math.ldexp(1.0, -self.L)

    @property
    def d(self) -> int:
        return self.space.d

    def centers(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.cell_width

    def scalar(self) -> np.ndarray:
        if self.d != 1:
            raise ValueError("function is not scalar-valued")
        return self.values[:, 0]

    def norms(self) -> np.ndarray:
        return np.asarray(self.space.norm(self.values))

    def same_grid(self, other: GridFunction) -> bool:
        return self.L == other.L and self.M == other.M

    def check_grid(self, other: GridFunction):
        if not self.same_grid(other):
            raise ValueError(
                f"incompatible discretizations: (L={self.L}, M={self.M}) vs (L={other.L}, M={other.M})")

    def with_values(self, values) -> GridFunction:
        return GridFunction(self.L, self.M, values, self.space)

    def __add__(self, other: GridFunction) -> GridFunction:
        self.check_grid(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: GridFunction) -> GridFunction:
        self.check_grid(other)
        return self.with_values(self.values - other.values)

    def __neg__(self) -> GridFunction:
        return self.with_values(-self.values)

    def __mul__(self, other) -> GridFunction:
        """Multiply by a number or pointwise by a scalar-valued GridFunction."""
        if isinstance(other, GridFunction):
            self.check_grid(other)
            if other.d == 1:
                return self.with_values(self.values * other.values)
            if self.d == 1:
                return other.with_values(other.values * self.values)
            raise ValueError("pointwise products need one scalar factor")
        return self.with_values(self.values * float(other))

    __rmul__ = __mul__

    def restrict(self, interval: DyadicInterval) -> GridFunction:
        lo, hi = interval.cell_range(self.L)
        vals = np.zeros_like(self.values)
        vals[lo:hi] = self.values[lo:hi]
        return self.with_values(vals)

    def to_json(self) -> dict:
        out = {"L": self.L, "M": self.M}
        out.update(self.space.to_json())
        out["values"] = self.values.tolist()
        return out

    @classmethod
    def from_json(cls, data: dict) -> GridFunction:
        if data.get("norm", "lp") != "lp":
            raise ValueError(f"unsupported norm kind {data['norm']!r}")
        p = data.get("p", 2.0)
        p = math.inf if p == "inf" else float(p)
        weights = data.get("weights")
        space = ValueSpace(int(data["d"]), p, tuple(weights) if weights else None)
        return cls(int(data["L"]), int(data["M"]), np.asarray(data["values"], dtype=float), space)

    def __repr__(self):
        return f"GridFunction(L={self.L}, M={self.M}, space={self.space.describe()})"


def lp_norm(f: GridFunction, p: float) -> float:
    norms = f.norms()
    if math.isinf(p):
        return float(norms.max(initial=0.0))
    if p < 1:
        raise ValueError("p must be at least 1")
    return float((f.cell_width * np.sum(norms ** p)) ** (1.0 / p))


def integral(f: GridFunction) -> np.ndarray:
    return f.cell_width * f.values.sum(axis=0)


def pairing(f: GridFunction, g: GridFunction) -> float:
    """Exact integral of the coordinate pairing <f(x), g(x)>."""
    f.check_grid(g)
    if f.d != g.d:
        raise ValueError(f"pairing needs matching dimensions, got {f.d} and {g.d}")
    return float(f.cell_width * np.sum(f.values * g.values))


def measure(mask: np.ndarray, L: int) -> float:
    """Lebesgue measure of a union of cells given as a boolean mask."""
    return math.ldexp(float(np.count_nonzero(mask)), -L)


def dyadic_intervals(L: int, M: int, min_scale: int | None = None) -> list[DyadicInterval]:
    """All dyadic intervals inside [0, 2^M) with scale between min_scale (default -L) and M."""
    lo = -L if min_scale is None else min_scale
    return [DyadicInterval(k, n) for k in range(lo, M + 1) for n in range(1 << (M - k))]


def stack_values(functions: Sequence[GridFunction]) -> np.ndarray:
    """Array of shape (cells, len(functions), d) holding the sequence at every cell."""
    first = functions[0]
    for f in functions[1:]:
        first.check_grid(f)
    return np.stack([f.values for f in functions], axis=1)
