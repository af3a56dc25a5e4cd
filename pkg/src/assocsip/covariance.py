"""Exact second moments of stationary fields with nonnegative covariance rho(i).

sigma^2 = sum_i rho(i), u(n) = sum_{||i|| >= n} rho(i) and
sigma^2(V) = Var S(V) for finite unions of lattice rectangles.  Sums over pairs
of rectangles reduce to per-axis overlap counts: the number of pairs (x, y)
with x - y = t in two integer intervals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import signal, special

from .geometry import BlockGeometry, Parameters, block_distance
from .lattice import Rect


class CovarianceModel:
    """Base class; subclasses fill in rho, sigma2 and u."""

    kind = "abstract"
    d: int
    # per-axis factor f with rho(i) = scale * prod_s f(i_s), or None
    scale: float | None = None
    support: int | None = None  # largest sup-norm lag with rho != 0; None if unbounded

    def rho(self, lags) -> np.ndarray:
        """rho at an (..., d) integer array of lags."""
        lags = np.asarray(lags, dtype=np.int64)
        return self.rho_grid([lags[..., s] for s in range(self.d)])

    def rho_grid(self, axes: Sequence[np.ndarray]) -> np.ndarray:
        raise NotImplementedError

    def axis_factor(self, t: np.ndarray) -> np.ndarray | None:
        return None

    @property
    def rho0(self) -> float:
        return float(self.rho(np.zeros(self.d, dtype=np.int64)))

    @property
    def sigma2(self) -> float:
        raise NotImplementedError

    def u(self, n: int) -> float:
        raise NotImplementedError

    @property
    def decay_rate(self) -> float:
        """lam with u(n) = O(exp(-lam n)); inf for finite range, nan if none."""
        return math.nan

    def to_dict(self) -> dict:
        raise NotImplementedError


class IIDCovariance(CovarianceModel):
    kind = "iid"
    support = 0

    def __init__(self, d: int, sigma0sq: float = 1.0):
        if sigma0sq <= 0:
            raise ValueError("sigma0sq must be positive")
        self.d, self.sigma0sq = d, float(sigma0sq)
        self.scale = self.sigma0sq

    def axis_factor(self, t):
        return (np.asarray(t) == 0).astype(np.float64)

    def rho_grid(self, axes):
        out = self.sigma0sq
        for t in axes:
            out = out * (np.asarray(t) == 0)
        return np.asarray(out, dtype=np.float64)

    @property
    def sigma2(self):
        return self.sigma0sq

    def u(self, n):
        _check_n(n)
        return self.sigma0sq if n == 0 else 0.0

    @property
    def decay_rate(self):
        return math.inf

    def to_dict(self):
        return {"kind": self.kind, "d": self.d, "sigma0sq": self.sigma0sq}


class ProductGeometric(CovarianceModel):
    """rho(i) = sigma0sq * prod_s a^|i_s|."""

    kind = "product_geometric"

    def __init__(self, d: int, sigma0sq: float = 1.0, a: float = 0.5):
        if not 0.0 <= a < 1.0:
            raise ValueError("need 0 <= a < 1")
        if sigma0sq <= 0:
            raise ValueError("sigma0sq must be positive")
        self.d, self.sigma0sq, self.a = d, float(sigma0sq), float(a)
        self.scale = self.sigma0sq
        self.support = 0 if a == 0.0 else None

    def axis_factor(self, t):
        return self.a ** np.abs(np.asarray(t, dtype=np.float64))

    def rho_grid(self, axes):
        out = self.sigma0sq
        for t in axes:
            out = out * self.axis_factor(t)
        return np.asarray(out, dtype=np.float64)

    def _axis_total(self, n: int) -> float:
        # sum_{|t| <= n - 1} a^|t|
        a = self.a
        if n <= 0:
            return 0.0
        return 1.0 + 2.0 * a * (1.0 - a ** (n - 1)) / (1.0 - a)

    @property
    def sigma2(self):
        return self.sigma0sq * ((1.0 + self.a) / (1.0 - self.a)) ** self.d

    def u(self, n):
        _check_n(n)
        if n == 0:
            return self.sigma2
        return max(self.sigma2 - self.sigma0sq * self._axis_total(n) ** self.d, 0.0)

    @property
    def decay_rate(self):
        return math.inf if self.a == 0.0 else -math.log(self.a)

    def to_dict(self):
        return {"kind": self.kind, "d": self.d, "sigma0sq": self.sigma0sq, "a": self.a}


class PowerCovariance(CovarianceModel):
    """rho(i) = c (1 + ||i||)^(-p) with p > d; u(n) = O(n^-(p-d))."""

    kind = "power"

    def __init__(self, d: int, c: float = 1.0, p: float = 5.0):
        if p <= d:
            raise ValueError(f"sigma^2 diverges for p <= d (p={p}, d={d})")
        if c <= 0:
            raise ValueError("c must be positive")
        self.d, self.c, self.p = d, float(c), float(p)
        # shell count at sup-norm radius m >= 1, in j = m + 1: (2j - 1)^d - (2j - 3)^d
        self._shell = P.polysub(P.polypow([-1.0, 2.0], d), P.polypow([-3.0, 2.0], d))

    @property
    def nu(self) -> float:
        return self.p - self.d

    def rho_grid(self, axes):
        norm = None
        for t in axes:
            a = np.abs(np.asarray(t, dtype=np.int64))
            norm = a if norm is None else np.maximum(norm, a)
        return self.c * (1.0 + norm.astype(np.float64)) ** (-self.p)

    def _tail(self, n: int) -> float:
        # sum_{m >= n} shell(m) c (1+m)^-p for n >= 1, via Hurwitz zeta in j = m + 1
        total = 0.0
        for k, coef in enumerate(self._shell):
            if coef != 0.0:
                total += coef * special.zeta(self.p - k, n + 1)
        return self.c * total

    @property
    def sigma2(self):
        return self.c + self._tail(1)

    def u(self, n):
        _check_n(n)
        return self.sigma2 if n == 0 else self._tail(n)

    def u_truncated(self, n: int, tol: float = 1e-12, max_shells: int = 10**7) -> float:
        """u(n) by direct shell summation, stopped once the integral tail bound is < tol."""
        _check_n(n)
        d, p = self.d, self.p
        # shell(m) (1+m)^-p <= d 2^d (1+m)^(d-1-p), so the tail past M is <= c d 2^d M^(d-p)/(p-d)
        need = (tol * (p - d) / (self.c * d * 2**d)) ** (1.0 / (d - p))
        stop = max(n + 1, int(math.ceil(need)) + 1)
        if stop > max_shells:
            raise ValueError(f"certified truncation needs {stop} shells; use u() instead")
        m = np.arange(max(n, 1), stop, dtype=np.float64)
        shells = (2 * m + 1) ** d - (2 * m - 1) ** d
        total = float(np.sum(shells * self.c * (1.0 + m) ** (-p)))
        if n == 0:
            total += self.c
        return total

    @property
    def decay_rate(self):
        return math.nan

    def to_dict(self):
        return {"kind": self.kind, "d": self.d, "c": self.c, "p": self.p}


class KernelCovariance(CovarianceModel):
    """Autocovariance of a moving average with nonnegative kernel a:
    rho(i) = sum_m a_m a_{m+i}."""

    kind = "kernel_induced"

    def __init__(self, kernel):
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.ndim == 0 or kernel.size == 0:
            raise ValueError("kernel must be a non-empty d-dimensional array")
        if np.any(kernel < 0) or not np.all(np.isfinite(kernel)):
            raise ValueError("kernel weights must be finite and nonnegative")
        if not np.any(kernel > 0):
            raise ValueError("kernel must have a positive weight")
        self.kernel = kernel
        self.d = kernel.ndim
        self.acf = signal.correlate(kernel, kernel, mode="full", method="direct")
        self.acf = np.maximum(self.acf, 0.0)
        self.center = tuple(n - 1 for n in kernel.shape)
        self.support = max(kernel.shape) - 1

    def rho_grid(self, axes):
        idx = []
        inside = True
        for s, t in enumerate(axes):
            t = np.asarray(t, dtype=np.int64)
            j = t + self.center[s]
            ok = (j >= 0) & (j < self.acf.shape[s])
            inside = inside & ok
            idx.append(np.clip(j, 0, self.acf.shape[s] - 1))
        return np.where(inside, self.acf[tuple(np.broadcast_arrays(*idx))], 0.0)

    @property
    def sigma2(self):
        return float(self.kernel.sum()) ** 2

    def u(self, n):
        _check_n(n)
        grids = np.meshgrid(*(np.arange(m) - c for m, c in zip(self.acf.shape, self.center)), indexing="ij")
        norm = np.max(np.abs(np.stack(grids)), axis=0)
        return float(self.acf[norm >= n].sum())

    @property
    def decay_rate(self):
        return math.inf

    def to_dict(self):
        return {"kind": self.kind, "d": self.d, "kernel": self.kernel.tolist()}


def model_from_dict(spec: dict) -> CovarianceModel:
    kind = spec["kind"]
    if kind == "iid":
        return IIDCovariance(spec["d"], spec.get("sigma0sq", 1.0))
    if kind == "product_geometric":
        return ProductGeometric(spec["d"], spec.get("sigma0sq", 1.0), spec.get("a", 0.5))
    if kind == "power":
        return PowerCovariance(spec["d"], spec.get("c", 1.0), spec.get("p", spec["d"] + 3.0))
    if kind == "kernel_induced":
        return KernelCovariance(spec["kernel"])
    raise ValueError(f"unknown covariance kind {kind!r}")


def _check_n(n):
    if n < 0:
        raise ValueError("u(n) needs n >= 0")


def overlap_counts(x_lo: int, x_hi: int, y_lo: int, y_hi: int):
    """Lags t and counts #{(x, y): x in (x_lo, x_hi], y in (y_lo, y_hi], x - y = t}."""
    t = np.arange(x_lo + 1 - y_hi, x_hi - y_lo, dtype=np.int64)
    count = np.minimum(y_hi, x_hi - t) - np.maximum(y_lo + 1, x_lo + 1 - t) + 1
    return t, np.maximum(count, 0).astype(np.float64)


def cross_covariance(model: CovarianceModel, v1: Rect, v2: Rect) -> float:
    """sum_{j in V1, k in V2} rho(j - k)."""
    if v1.d != model.d or v2.d != model.d:
        raise ValueError("rectangle dimension does not match the model")
    if v1.is_empty or v2.is_empty:
        return 0.0
    lags, weights = [], []
    for s in range(model.d):
        t, c = overlap_counts(v1.lo[s], v1.hi[s], v2.lo[s], v2.hi[s])
        if model.support is not None:
            keep = np.abs(t) <= model.support
            t, c = t[keep], c[keep]
            if t.size == 0:
                return 0.0
        lags.append(t)
        weights.append(c)
    if model.scale is not None:
        total = model.scale
        for t, c in zip(lags, weights):
            total *= float(np.dot(c, model.axis_factor(t)))
        return float(total)
    grid = model.rho_grid(np.ix_(*lags))
    # contract one axis at a time against its overlap counts
    for c in weights:
        grid = np.tensordot(grid, c, axes=([0], [0]))
    return float(grid)


def exact_sigma2(model: CovarianceModel, v) -> float:
    """Var S(V) for a rectangle or a list of pairwise disjoint rectangles."""
    pieces = [v] if isinstance(v, Rect) else list(v)
    if not pieces or all(p.is_empty for p in pieces):
        raise ValueError("V must be nonempty")
    total = 0.0
    for a, pa in enumerate(pieces):
        total += cross_covariance(model, pa, pa)
        for pb in pieces[a + 1:]:
            total += 2.0 * cross_covariance(model, pa, pb)
    return total


def brute_force_sigma2(model: CovarianceModel, v) -> float:
    """O(|V|^2) double sum; the oracle for :func:`exact_sigma2`."""
    pieces = [v] if isinstance(v, Rect) else list(v)
    pts = np.array([p for piece in pieces for p in piece.points()], dtype=np.int64)
    diffs = pts[:, None, :] - pts[None, :, :]
    return float(model.rho(diffs).sum())


@dataclass(frozen=True)
class VarianceBounds:
    ratio: float
    lower: float
    upper: float

    @property
    def ok(self) -> bool:
        slack = 1e-12 * max(1.0, abs(self.upper))
        return self.lower - slack <= self.ratio <= self.upper + slack


def check_variance_bounds(model: CovarianceModel, v) -> VarianceBounds:
    """rho(0) <= sigma^2(V)/|V| <= sigma^2."""
    pieces = [v] if isinstance(v, Rect) else list(v)
    vol = sum(p.volume for p in pieces)
    return VarianceBounds(exact_sigma2(model, pieces) / vol, model.rho0, model.sigma2)


@dataclass(frozen=True)
class BlockVarianceSandwich:
    k: tuple
    lambda2_ratio: VarianceBounds  # lambda_k^2 / [k]^alpha
    tau2_ratio: VarianceBounds     # tau_k^2 / |I_k|

    @property
    def ok(self) -> bool:
        return self.lambda2_ratio.ok and self.tau2_ratio.ok


def check_block_variance(model: CovarianceModel, geometry: BlockGeometry, k) -> BlockVarianceSandwich:
    blk = geometry.block(k)
    lam = check_variance_bounds(model, blk.H)
    pieces = [p for p in blk.I_pieces if not p.is_empty]
    tau = check_variance_bounds(model, pieces)
    return BlockVarianceSandwich(blk.k, lam, tau)


@dataclass(frozen=True)
class GapRateFit:
    sides: tuple[int, ...]
    volumes: tuple[int, ...]
    gaps: tuple[float, ...]
    fitted_slope: float
    target: float


def susceptibility_gap_fit(model: CovarianceModel, sides: Sequence[int]) -> GapRateFit:
    """g(l) = sigma^2 - sigma^2(V_l)/|V_l| over squares of side l, and its log-log slope in |V|."""
    sides = tuple(int(l) for l in sides)
    if len(sides) < 3:
        raise ValueError("need at least 3 volumes")
    vols, gaps = [], []
    for l in sides:
        v = Rect.from_origin((l,) * model.d)
        vols.append(v.volume)
        gaps.append(model.sigma2 - exact_sigma2(model, v) / v.volume)
    vols_a, gaps_a = np.array(vols, dtype=np.float64), np.array(gaps)
    pos = gaps_a > 1e-14 * model.sigma2
    if pos.sum() >= 2:
        slope = float(np.polyfit(np.log(vols_a[pos]), np.log(gaps_a[pos]), 1)[0])
    else:
        slope = math.nan
    target = -(model.p / model.d - 2.0) if isinstance(model, PowerCovariance) else math.nan
    return GapRateFit(sides, tuple(vols), tuple(float(g) for g in gaps), slope, target)


def block_sum_covariance(model: CovarianceModel, i, j, geometry: BlockGeometry) -> tuple[float, float]:
    """(E u_i u_j exactly, lam * M_ij^beta)."""
    i, j = tuple(i), tuple(j)
    if i == j:
        raise ValueError("block_sum_covariance needs i != j")
    exact = cross_covariance(model, geometry.block(i).H, geometry.block(j).H)
    _, m_ij = block_distance(i, j, geometry.params)
    lam = model.decay_rate
    if not math.isfinite(lam):
        lam = geometry.params.lam if geometry.params.lam is not None else 1.0
    return exact, lam * m_ij**geometry.params.beta


def block_covariance_constant(model: CovarianceModel, geometry: BlockGeometry, pairs) -> float:
    """max over pairs of E(u_i u_j) exp(lam M_ij^beta): the estimated bound constant."""
    worst = 0.0
    for i, j in pairs:
        exact, expo = block_sum_covariance(model, i, j, geometry)
        if exact > 0.0:
            worst = max(worst, exact * math.exp(expo))
    return worst
