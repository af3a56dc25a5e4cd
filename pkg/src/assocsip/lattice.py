"""Multi-indices, half-open lattice rectangles and d-dimensional prefix sums.

Lattice points are tuples of non-negative Python ints.  Products of
coordinates go through :func:`checked_prod`, which refuses to exceed the
signed 64-bit range instead of silently wrapping.  A rectangle ``Rect(lo, hi)``
is the half-open box ``(lo, hi]``: it contains every j with lo < j <= hi.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from typing import Iterator, Sequence

import numpy as np

from . import _backend

INT64_MAX = 2**63 - 1

MultiIndex = tuple[int, ...]


def as_index(j: Sequence[int]) -> MultiIndex:
    return tuple(int(x) for x in j)


def checked_prod(values: Sequence[int]) -> int:
    """[N] := prod N_s, failing loudly once the product leaves int64."""
    p = 1
    for v in values:
        p *= int(v)
        if abs(p) > INT64_MAX:
            raise OverflowError(
                f"product of {tuple(values)} needs {abs(p).bit_length() + 1} bits; exceeds int64"
            )
    return p


def leq(i: Sequence[int], j: Sequence[int]) -> bool:
    """i <= j componentwise."""
    return all(a <= b for a, b in zip(i, j))


def lt(i: Sequence[int], j: Sequence[int]) -> bool:
    """i < j in every coordinate."""
    return all(a < b for a, b in zip(i, j))


def sup_norm(i: Sequence[int]) -> int:
    return max(abs(x) for x in i)


@dataclass(frozen=True)
class Rect:
    """The half-open lattice box (lo, hi]."""

    lo: MultiIndex
    hi: MultiIndex

    def __post_init__(self):
        lo, hi = as_index(self.lo), as_index(self.hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if len(lo) != len(hi) or not lo:
            raise ValueError(f"corner dimensions differ or are empty: {lo}, {hi}")
        if any(a < 0 for a in lo):
            raise ValueError(f"negative lattice coordinate in {lo}")
        if not leq(lo, hi):
            raise ValueError(f"need lo <= hi componentwise, got ({lo}, {hi}]")

    @classmethod
    def from_origin(cls, hi: Sequence[int]) -> "Rect":
        return cls((0,) * len(hi), tuple(hi))

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> MultiIndex:
        return tuple(b - a for a, b in zip(self.lo, self.hi))

    @property
    def volume(self) -> int:
        return checked_prod(self.shape)

    @property
    def is_empty(self) -> bool:
        return any(a == b for a, b in zip(self.lo, self.hi))

    def contains(self, j: Sequence[int]) -> bool:
        return all(a < x <= b for a, x, b in zip(self.lo, j, self.hi))

    def contains_rect(self, other: "Rect") -> bool:
        if other.is_empty:
            return True
        return leq(self.lo, other.lo) and leq(other.hi, self.hi)

    def intersects(self, other: "Rect") -> bool:
        if self.is_empty or other.is_empty:
            return False
        return all(max(a, c) < min(b, e) for a, b, c, e in zip(self.lo, self.hi, other.lo, other.hi))

    def points(self) -> Iterator[MultiIndex]:
        return product(*(range(a + 1, b + 1) for a, b in zip(self.lo, self.hi)))

    def split(self, axis: int, at: int) -> tuple["Rect", "Rect"]:
        """Cut along ``axis`` at coordinate ``at`` into (lo, ..at..] and (..at.., hi]."""
        if not self.lo[axis] <= at <= self.hi[axis]:
            raise ValueError(f"cut {at} outside [{self.lo[axis]}, {self.hi[axis]}]")
        left_hi = list(self.hi)
        left_hi[axis] = at
        right_lo = list(self.lo)
        right_lo[axis] = at
        return Rect(self.lo, tuple(left_hi)), Rect(tuple(right_lo), self.hi)

    def slices(self) -> tuple[slice, ...]:
        """numpy slices selecting this box from a 0-based cell array (cell j at j - 1)."""
        return tuple(slice(a, b) for a, b in zip(self.lo, self.hi))


class PrefixGrid:
    """Immutable summed-area table with ``cumulative[N] == S_N``.

    ``cumulative`` has shape ``extent + 1``; its leading faces are zero so that
    lattice corners index it directly.
    """

    __slots__ = ("cumulative",)

    def __init__(self, cumulative: np.ndarray):
        cumulative.flags.writeable = False
        self.cumulative = cumulative

    @property
    def extent(self) -> MultiIndex:
        return tuple(n - 1 for n in self.cumulative.shape)

    @property
    def d(self) -> int:
        return self.cumulative.ndim

    def __getitem__(self, n: Sequence[int]) -> float:
        return float(self.cumulative[tuple(n)])

    def rect_sum(self, v: Rect) -> float:
        return rect_sum(self, v)

    def rect_sums(self, lo, hi) -> np.ndarray:
        return rect_sums(self, lo, hi)

    def total(self) -> float:
        return float(self.cumulative[self.extent])


def build_prefix_grid(cells) -> PrefixGrid:
    """Summed-area table of a d-dimensional cell array (cell j stored at j - 1)."""
    cells = np.asarray(cells, dtype=np.float64)
    if cells.ndim == 0 or any(n <= 0 for n in cells.shape):
        raise ValueError(f"grid extent must be positive in every coordinate, got {cells.shape}")
    checked_prod(n + 1 for n in cells.shape)
    if not np.all(np.isfinite(cells)):
        raise ValueError("cell values must be finite")
    cum = np.zeros(tuple(n + 1 for n in cells.shape), dtype=np.float64)
    cum[(slice(1, None),) * cells.ndim] = cells
    _backend.prefix_scan(cum)
    return PrefixGrid(cum)


def _check_inside(grid: PrefixGrid, hi: Sequence[int]) -> None:
    if len(hi) != grid.d or not leq(hi, grid.extent):
        raise ValueError(f"rectangle corner {tuple(hi)} exceeds grid extent {grid.extent}")


def rect_sum(grid: PrefixGrid, v: Rect) -> float:
    """S(V) by 2^d-term inclusion-exclusion on the cumulative corners."""
    _check_inside(grid, v.hi)
    if v.is_empty:
        return 0.0
    item = grid.cumulative.item
    lo, hi = v.lo, v.hi
    total = 0.0
    for sign, picks in _corners(grid.d):
        total = total + sign * item(tuple(hi[s] if take else lo[s] for s, take in enumerate(picks)))
    return total


@lru_cache(maxsize=None)
def _corners(d: int) -> tuple:
    """(sign, which axes take hi) for the 2^d inclusion-exclusion corners, in mask order."""
    out = []
    for mask in range(1 << d):
        picks = tuple(bool((mask >> s) & 1) for s in range(d))
        out.append((-1.0 if (d - sum(picks)) % 2 else 1.0, picks))
    return tuple(out)


def rect_sums(grid: PrefixGrid, lo, hi) -> np.ndarray:
    """Vectorised :func:`rect_sum` for Q boxes given as (Q, d) corner arrays."""
    lo = np.ascontiguousarray(lo, dtype=np.int64)
    hi = np.ascontiguousarray(hi, dtype=np.int64)
    if lo.shape != hi.shape or lo.ndim != 2 or lo.shape[1] != grid.d:
        raise ValueError(f"corner arrays must both have shape (Q, {grid.d})")
    if lo.size:
        if np.any(lo < 0) or np.any(lo > hi):
            raise ValueError("need 0 <= lo <= hi for every query")
        if np.any(hi > np.asarray(grid.extent)):
            raise ValueError(f"a query rectangle exceeds grid extent {grid.extent}")
    out = _backend.rect_sums(grid.cumulative, lo, hi)
    if lo.size:
        out[np.any(lo == hi, axis=1)] = 0.0  # degenerate boxes are exactly empty
    return out


def g_tau_contains(j: Sequence[int], tau: float) -> bool:
    """Membership of j in the wedge G_tau: j_s >= prod_{s' != s} j_{s'}^tau for every s."""
    if any(x < 1 for x in j):
        raise ValueError(f"G_tau is defined for positive indices, got {tuple(j)}")
    powers = [float(x) ** tau for x in j]
    for s, x in enumerate(j):
        bound = 1.0
        for t, p in enumerate(powers):
            if t != s:
                bound *= p
        if float(x) < bound:
            return False
    return True


def g_tau_mask(points: np.ndarray, tau: float) -> np.ndarray:
    """Vectorised G_tau membership for an (P, d) array of positive points."""
    pts = np.asarray(points, dtype=np.float64)
    powers = pts**tau
    keep = np.ones(len(pts), dtype=bool)
    for s in range(pts.shape[1]):
        others = np.prod(np.delete(powers, s, axis=1), axis=1)
        keep &= pts[:, s] >= others
    return keep


def geometric_grid(extent: Sequence[int], tau: float, per_axis: int = 40) -> np.ndarray:
    """Points of G_tau on a per-axis geometric grid inside (0, extent], sorted by [N]."""
    axes = [np.unique(np.rint(np.geomspace(1, n, per_axis)).astype(np.int64)) for n in extent]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(extent))
    return sort_by_volume(mesh[g_tau_mask(mesh, tau)])


def sort_by_volume(points: np.ndarray) -> np.ndarray:
    """Order points by [N], ties broken lexicographically."""
    points = np.asarray(points, dtype=np.int64)
    vol = np.prod(points.astype(np.float64), axis=1)
    order = np.lexsort(tuple(points[:, s] for s in reversed(range(points.shape[1]))) + (vol,))
    return points[order]


def log_volume(n: Sequence[int]) -> float:
    return sum(math.log(x) for x in n)
