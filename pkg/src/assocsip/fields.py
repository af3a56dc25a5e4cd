"""Seeded associated random fields, discrete Wiener sheets and conditional fills.

Moving-average fields X_j = sum_i a_i Z_{j-i} with nonnegative weights are
nondecreasing functions of independent innovations, hence associated.  The
innovations are drawn on the box extended by a halo of kernel width so that
every returned cell has the full stationary law.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _backend
from .covariance import CovarianceModel, IIDCovariance, KernelCovariance
from .lattice import PrefixGrid, Rect, as_index, build_prefix_grid, checked_prod, leq
from .rng import stream

LAWS = ("gaussian", "centered_exponential", "rademacher")


def draw_innovations(gen: np.random.Generator, law: str, shape) -> np.ndarray:
    """Standardized (mean 0, variance 1) innovations."""
    if law == "gaussian":
        return gen.standard_normal(shape)
    if law == "centered_exponential":
        return gen.standard_exponential(shape) - 1.0
    if law == "rademacher":
        return gen.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0
    raise ValueError(f"unknown innovation law {law!r}; choose from {LAWS}")


def tent_kernel(d: int, width: int = 3) -> np.ndarray:
    """Separable tent weights, e.g. (0.5, 1, 0.5) per axis for width 3."""
    half = (width - 1) / 2.0
    w = 1.0 - np.abs(np.arange(width) - half) / (half + 1.0)
    w = w / w.max()
    out = np.ones((1,) * d)
    for s in range(d):
        shape = [1] * d
        shape[s] = width
        out = out * w.reshape(shape)
    return out


@dataclass(frozen=True, eq=False)
class FieldModel:
    d: int
    kind: str = "iid"
    law: str = "gaussian"
    kernel: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("iid", "moving_average"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.law not in LAWS:
            raise ValueError(f"unknown innovation law {self.law!r}")
        if self.kind == "moving_average":
            if self.kernel is None:
                raise ValueError("moving_average needs a kernel")
            k = np.asarray(self.kernel, dtype=np.float64)
            if k.ndim != self.d:
                raise ValueError(f"kernel is {k.ndim}-dimensional, field is {self.d}-dimensional")
            if np.any(k < 0) or not np.all(np.isfinite(k)) or not np.any(k > 0):
                raise ValueError("kernel weights must be finite, nonnegative, not all zero")
            object.__setattr__(self, "kernel", np.ascontiguousarray(k))

    @property
    def is_gaussian(self) -> bool:
        return self.law == "gaussian"

    def covariance(self) -> CovarianceModel:
        if self.kind == "iid":
            return IIDCovariance(self.d, 1.0)
        return kernel_autocovariance(self.kernel)

    def to_dict(self) -> dict:
        out = {"d": self.d, "kind": self.kind, "law": self.law}
        if self.kernel is not None:
            out["kernel"] = self.kernel.tolist()
        return out


def kernel_autocovariance(kernel) -> KernelCovariance:
    """rho(i) = sum_m a_m a_{m+i}; sigma^2 = (sum_m a_m)^2."""
    return KernelCovariance(kernel)


@dataclass(frozen=True, eq=False)
class FieldSample:
    model: FieldModel
    extent: tuple[int, ...]
    seed: int
    replicate: int
    cells: np.ndarray
    grid: PrefixGrid


@dataclass(frozen=True, eq=False)
class WienerSheet:
    variance: float
    extent: tuple[int, ...]
    increments: np.ndarray
    grid: PrefixGrid
    assigned: tuple = field(default=())

    def W(self, v: Rect) -> float:
        return self.grid.rect_sum(v)


def _check_extent(extent: Sequence[int], d: int | None = None) -> tuple[int, ...]:
    extent = as_index(extent)
    if not extent or any(n <= 0 for n in extent):
        raise ValueError(f"extent must be positive in every coordinate, got {extent}")
    if d is not None and len(extent) != d:
        raise ValueError(f"extent {extent} does not have dimension {d}")
    checked_prod(n + 1 for n in extent)
    return extent


def simulate_cells(model: FieldModel, extent: Sequence[int], seed: int, replicate: int = 0,
                   stream_name: str = "field", key: Sequence[int] = ()) -> np.ndarray:
    """Cell values of one realization (cell j at array index j - 1)."""
    extent = _check_extent(extent, model.d)
    gen = stream(seed, stream_name, replicate, *key)
    if model.kind == "iid":
        return draw_innovations(gen, model.law, extent)
    halo = tuple(n + k - 1 for n, k in zip(extent, model.kernel.shape))
    z = draw_innovations(gen, model.law, halo)
    return _backend.ma_filter(z, model.kernel)


def simulate_field(model: FieldModel, extent: Sequence[int], seed: int, replicate: int = 0) -> FieldSample:
    extent = _check_extent(extent, model.d)
    cells = simulate_cells(model, extent, seed, replicate)
    return FieldSample(model, extent, int(seed), int(replicate), cells, build_prefix_grid(cells))


def simulate_wiener_sheet(variance: float, extent: Sequence[int], seed: int, replicate: int = 0) -> WienerSheet:
    """Independent N(0, variance) unit-cell increments; W(R) ~ N(0, variance |R|)."""
    if variance <= 0:
        raise ValueError("sheet variance must be positive")
    extent = _check_extent(extent)
    gen = stream(seed, "sheet", replicate)
    inc = np.sqrt(variance) * gen.standard_normal(extent)
    return WienerSheet(float(variance), extent, inc, build_prefix_grid(inc))


def conditional_fill(assignments: Mapping[Rect, float], variance: float, extent: Sequence[int],
                     seed: int, replicate: int = 0) -> WienerSheet:
    """Wiener sheet conditioned on prescribed sums over disjoint rectangles.

    Draws the unconditioned increments G, then shifts the cells of each assigned
    rectangle B by (s - sum_B G)/|B|.  Given the sums this is exactly the
    Gaussian bridge law of the cells.
    """
    if variance <= 0:
        raise ValueError("sheet variance must be positive")
    extent = _check_extent(extent)
    rects = list(assignments)
    for a, ra in enumerate(rects):
        if ra.d != len(extent) or not leq(ra.hi, extent):
            raise ValueError(f"assigned rectangle {ra} lies outside the extent {extent}")
        for rb in rects[a + 1:]:
            if ra.intersects(rb):
                raise ValueError(f"assigned rectangles overlap: {ra} and {rb}")
    gen = stream(seed, "sheet", replicate)
    inc = np.sqrt(variance) * gen.standard_normal(extent)
    for r in rects:
        if r.is_empty:
            continue
        target = float(assignments[r])
        if not np.isfinite(target):
            raise ValueError(f"prescribed sum for {r} is not finite")
        view = inc[r.slices()]
        view += (target - view.sum()) / r.volume
    return WienerSheet(float(variance), extent, inc, build_prefix_grid(inc), tuple(rects))


def dump_grid(path, cells: np.ndarray) -> None:
    """Flat binary dump: one ASCII header line, then float64 little-endian, row-major."""
    cells = np.ascontiguousarray(cells, dtype="<f8")
    header = f"d={cells.ndim} extent={','.join(str(n) for n in cells.shape)}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(cells.tobytes(order="C"))


def load_grid(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        fields = dict(item.split("=") for item in header)
        shape = tuple(int(x) for x in fields["extent"].split(","))
        if len(shape) != int(fields["d"]):
            raise ValueError("header dimension does not match extent")
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(shape).astype(np.float64)
