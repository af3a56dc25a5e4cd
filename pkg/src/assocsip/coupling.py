"""Block sums, smoothing, quantile transform and the surrogate Wiener coupling.

Per good block i: u_i = S(H_i), v_i = S(I_i), an independent smoothing draw
w_i ~ N(0, tau_i^2), xi_i = (u_i + w_i)/sqrt(lambda_i^2 + tau_i^2),
eta_i = Phi^-1(F_i(xi_i)) and e_i = sqrt(lambda_i^2 + tau_i^2)(xi_i - eta_i).

The sheet is coupled constructively: W(B_i) := sigma sqrt|B_i| eta_i on every
good block, with the remaining cells drawn from the conditional Gaussian law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .covariance import CovarianceModel, exact_sigma2
from .fields import FieldModel, FieldSample, WienerSheet, conditional_fill, simulate_cells, simulate_field
from .geometry import BlockGeometry, Parameters
from .lattice import (PrefixGrid, build_prefix_grid, checked_prod, g_tau_contains, g_tau_mask, geometric_grid,
                      leq, sort_by_volume)
from .rng import stream


class StandardNormalCDF:
    """Phi, flagged so the quantile transform can take its exact identity branch."""

    is_standard_normal = True

    def __call__(self, x):
        return special.ndtr(x)


STANDARD_NORMAL = StandardNormalCDF()


class EmpiricalCDF:
    """F(x) = rank(x)/(R+1), clamped to [1/(R+1), R/(R+1)] so Phi^-1(F) stays finite."""

    is_standard_normal = False

    def __init__(self, values):
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.size < 2:
            raise ValueError("empirical CDF needs at least 2 values")
        if not np.all(np.isfinite(values)):
            raise ValueError("empirical CDF values must be finite")
        self.sorted = np.sort(values)
        self.n = values.size

    def __call__(self, x):
        rank = np.searchsorted(self.sorted, x, side="right")
        return np.clip(rank, 1, self.n) / (self.n + 1.0)


def empirical_cdf(values) -> EmpiricalCDF:
    return EmpiricalCDF(values)


def quantile_transform(xi, F) -> tuple:
    """(eta, xi - eta) with eta = Phi^-1(F(xi))."""
    if getattr(F, "is_standard_normal", False):
        eta = np.array(xi, dtype=np.float64, copy=True)
    else:
        p = np.asarray(F(xi), dtype=np.float64)
        if np.any((p <= 0.0) | (p >= 1.0)):
            raise ValueError("F(xi) must lie strictly inside (0, 1)")
        eta = special.ndtri(p)
    if np.ndim(eta) == 0:
        eta = float(eta)
        return eta, float(xi) - eta
    return eta, np.asarray(xi) - eta


@dataclass(frozen=True)
class BlockStat:
    index: tuple[int, ...]
    u: float
    v: float
    v_pieces: tuple[float, ...]
    lambda2: float
    tau2: float
    w: float
    xi: float
    eta: float
    e: float
    volume: int  # |B_i|

    @property
    def scale(self) -> float:
        return math.sqrt(self.lambda2 + self.tau2)

    def deficit(self, sigma: float) -> float:
        """a_i = sigma - sqrt((lambda_i^2 + tau_i^2)/|B_i|)."""
        return sigma - math.sqrt((self.lambda2 + self.tau2) / self.volume)


def block_moments(cov: CovarianceModel, geometry: BlockGeometry, blocks) -> dict:
    """Exact (lambda_i^2, tau_i^2) for each block; tau^2 includes cross terms between I-pieces."""
    out = {}
    for k in blocks:
        blk = geometry.block(k)
        pieces = [p for p in blk.I_pieces if not p.is_empty]
        out[blk.k] = (exact_sigma2(cov, blk.H), exact_sigma2(cov, pieces))
    return out


def calibrate_block_cdfs(model: FieldModel, geometry: BlockGeometry, blocks, moments: dict,
                         replicates: int, seed: int) -> dict:
    """Empirical CDFs of xi_i from independent calibration replicates.

    By stationarity u_i has the law of the sum over a box of H_i's shape at the
    origin, so one field of the largest H shape per replicate serves every block.
    """
    if replicates < 2:
        raise ValueError("need at least 2 calibration replicates")
    blocks = [tuple(k) for k in blocks]
    shapes = {k: geometry.block(k).H.shape for k in blocks}
    extent = tuple(max(s[a] for s in shapes.values()) for a in range(geometry.d))
    uniq = sorted(set(shapes.values()))
    u_samples = {s: np.empty(replicates) for s in uniq}
    for rep in range(replicates):
        cum = build_prefix_grid(simulate_cells(model, extent, seed, rep, "calibration")).cumulative
        for s in uniq:
            u_samples[s][rep] = cum[s]
    cdfs = {}
    for k in blocks:
        lam2, tau2 = moments[k]
        w = stream(seed, "calibration_smoothing", 0, *k).standard_normal(replicates) * math.sqrt(tau2)
        cdfs[k] = EmpiricalCDF((u_samples[shapes[k]] + w) / math.sqrt(lam2 + tau2))
    return cdfs


class BlockStats(dict):
    """Mapping block index -> BlockStat, in good-set order."""

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.values()], dtype=np.float64)


def compute_block_stats(sample: FieldSample, geometry: BlockGeometry, cov: CovarianceModel, seed: int,
                        cdfs: dict | None = None, moments: dict | None = None) -> BlockStats:
    """Block sums, smoothing draws and the transform for every good block inside the sample."""
    expected = sample.model.covariance()
    if (expected.kind != cov.kind or not math.isclose(expected.sigma2, cov.sigma2, rel_tol=1e-12)
            or not math.isclose(expected.rho0, cov.rho0, rel_tol=1e-12)):
        raise ValueError("covariance model does not match the sample's field model")
    blocks = geometry.blocks_within(sample.extent)
    if moments is None:
        moments = block_moments(cov, geometry, blocks)
    if cdfs is None:
        if not sample.model.is_gaussian:
            raise ValueError("non-Gaussian fields need calibrated CDFs for the transform")
        cdfs = {}
    grid = sample.grid
    out = BlockStats()
    for k in blocks:
        blk = geometry.block(k)
        lam2, tau2 = moments[k]
        u = grid.rect_sum(blk.H)
        pieces = tuple(grid.rect_sum(p) for p in blk.I_pieces)
        v = math.fsum(pieces)
        w = float(stream(seed, "smoothing", sample.replicate, *k).standard_normal()) * math.sqrt(tau2)
        scale = math.sqrt(lam2 + tau2)
        xi = (u + w) / scale
        F = cdfs.get(k, STANDARD_NORMAL) if sample.model.is_gaussian else cdfs[k]
        eta, _ = quantile_transform(xi, F)
        out[k] = BlockStat(k, u, v, pieces, lam2, tau2, w, xi, eta, scale * (xi - eta), blk.B.volume)
    return out


@dataclass(frozen=True)
class DecompositionTerms:
    k: tuple[int, ...]
    T1: float  # sum e_i
    T2: float  # sum sqrt|B_i| (sqrt((lambda^2+tau^2)/|B_i|) - sigma) eta_i
    T3: float  # sum sigma sqrt|B_i| eta_i
    T4: float  # sum w_i
    T5: float  # sum v_i
    S_R: float  # S(R_k) from the prefix grid

    @property
    def reconstructed(self) -> float:
        return self.T1 + self.T2 + self.T3 - self.T4 + self.T5

    @property
    def residual(self) -> float:
        return self.reconstructed - self.S_R

    @property
    def tolerance(self) -> float:
        scale = max(1.0, abs(self.S_R), abs(self.T1) + abs(self.T2) + abs(self.T3) + abs(self.T4) + abs(self.T5))
        return 1e-8 * scale

    @property
    def identity_holds(self) -> bool:
        return abs(self.residual) <= self.tolerance


def decompose_core(stats: BlockStats, k, geometry: BlockGeometry, sigma: float,
                   grid: PrefixGrid) -> DecompositionTerms:
    """The five sums over L_k whose signed combination reproduces S(R_k)."""
    core = geometry.core(k)
    if core.empty:
        raise ValueError(f"L_k is empty for k={core.k}")
    missing = [i for i in core.L_k if i not in stats]
    if missing:
        raise ValueError(f"block stats missing for {missing[:5]}")
    sel = [stats[i] for i in core.L_k]
    T1 = math.fsum(s.e for s in sel)
    T2 = math.fsum(math.sqrt(s.volume) * (math.sqrt((s.lambda2 + s.tau2) / s.volume) - sigma) * s.eta for s in sel)
    T3 = math.fsum(sigma * math.sqrt(s.volume) * s.eta for s in sel)
    T4 = math.fsum(s.w for s in sel)
    T5 = math.fsum(s.v for s in sel)
    return DecompositionTerms(core.k, T1, T2, T3, T4, T5, grid.rect_sum(core.R))


def build_coupled_sheet(stats: BlockStats, geometry: BlockGeometry, sigma: float, extent, seed: int,
                        replicate: int = 0, mode: str = "surrogate",
                        sample: FieldSample | None = None) -> WienerSheet:
    """Surrogate coupling W(B_i) = sigma sqrt|B_i| eta_i, or the identity coupling W = S."""
    if mode == "identity":
        if sample is None:
            raise ValueError("identity coupling needs the field sample")
        m = sample.model
        if not (m.kind == "iid" and m.is_gaussian and math.isclose(sigma * sigma, 1.0)):
            raise ValueError("identity coupling is defined for iid N(0, sigma^2) fields only")
        inc = np.array(sample.cells, copy=True)
        return WienerSheet(sigma * sigma, sample.extent, inc, build_prefix_grid(inc))
    if mode != "surrogate":
        raise ValueError(f"unknown coupling mode {mode!r}")
    assignments = {}
    for k, s in stats.items():
        if not math.isfinite(s.eta):
            raise ValueError(f"eta for block {k} is not finite")
        assignments[geometry.block(k).B] = sigma * math.sqrt(s.volume) * s.eta
    return conditional_fill(assignments, sigma * sigma, extent, seed, replicate)


def probe_points(geometry: BlockGeometry, extent, tau: float, per_axis: int = 40) -> np.ndarray:
    """Block corners N_k in G_tau plus a geometric grid of G_tau points, sorted by [N]."""
    pts = {tuple(int(x) for x in row) for row in geometric_grid(extent, tau, per_axis)}
    for k in geometry.all_blocks():
        N = geometry.corner(k)
        if leq(N, extent) and g_tau_contains(N, tau):
            pts.add(N)
    return sort_by_volume(np.array(sorted(pts), dtype=np.int64))


def _abs_max_box(cum: np.ndarray, hi) -> float:
    box = tuple(slice(0, h + 1) for h in hi)
    return float(np.max(np.abs(cum[box])))


def corner_maxima(cum: np.ndarray, low, high, J) -> float:
    """max over N_J in (low_J, high_J] of |S(prod_{J}(low, N] x prod_{J^c}(0, low])|."""
    idx = tuple(slice(low[s], high[s] + 1) if s in J else slice(low[s], low[s] + 1)
                for s in range(len(low)))
    a = cum[idx]
    for s in J:
        first = [slice(None)] * a.ndim
        first[s] = slice(0, 1)
        a = a - a[tuple(first)]
    rest = [slice(None)] * a.ndim
    for s in J:
        rest[s] = slice(1, None)
    return float(np.max(np.abs(a[tuple(rest)])))


def remainder_maxima(grid: PrefixGrid, geometry: BlockGeometry, k) -> dict:
    """D_s(N_k) for each axis and M_k^(J) for each nonempty J."""
    rem = geometry.remainder(k)
    cum = grid.cumulative
    D = [_abs_max_box(cum, strip.hi) for strip in rem.strips]
    if not leq(rem.high, grid.extent):
        raise ValueError(f"N_(k+1) = {rem.high} exceeds the grid extent {grid.extent}")
    M = {J: corner_maxima(cum, rem.low, rem.high, J) for J in rem.corners}
    return {"D": D, "M": M}


@dataclass
class CouplingProfile:
    probes: np.ndarray
    S: np.ndarray
    W: np.ndarray
    epsilon: float
    remainders: dict = field(default_factory=dict)  # k -> {"D", "D_hat", "M", "M_hat"}

    @property
    def volumes(self) -> np.ndarray:
        return np.prod(self.probes.astype(np.float64), axis=1)

    @property
    def gap(self) -> np.ndarray:
        return np.abs(self.S - self.W)

    @property
    def ratio(self) -> np.ndarray:
        return self.gap / self.volumes ** (0.5 - self.epsilon)

    def max_ratio(self, lo: float, hi: float) -> float:
        vol = self.volumes
        sel = (vol >= lo) & (vol <= hi)
        if not np.any(sel):
            raise ValueError(f"no probe point with [N] in [{lo}, {hi}]")
        return float(np.max(self.ratio[sel]))


def coupling_error_profile(sample: FieldSample, sheet: WienerSheet, geometry: BlockGeometry, tau: float,
                           eps: float, scales: Sequence = (), probes: np.ndarray | None = None) -> CouplingProfile:
    """|S_N - W_N| at probe points in G_tau, plus remainder maxima at the given block scales."""
    if not 0.0 < eps < 0.5:
        raise ValueError("epsilon must lie in (0, 1/2)")
    if probes is None:
        probes = probe_points(geometry, sample.extent, tau)
    probes = np.asarray(probes, dtype=np.int64)
    if probes.size == 0:
        raise ValueError("empty probe set")
    if not np.all(g_tau_mask(probes, tau)):
        raise ValueError("probe points must lie in G_tau")
    idx = tuple(probes[:, s] for s in range(probes.shape[1]))
    S = sample.grid.cumulative[idx]
    W = sheet.grid.cumulative[idx]
    prof = CouplingProfile(probes, np.asarray(S, dtype=np.float64), np.asarray(W, dtype=np.float64), eps)
    for k in scales:
        k = tuple(k)
        rs = remainder_maxima(sample.grid, geometry, k)
        rw = remainder_maxima(sheet.grid, geometry, k)
        prof.remainders[k] = {"D": rs["D"], "D_hat": rw["D"], "M": rs["M"], "M_hat": rw["M"]}
    return prof


SCALE_STATS = (
    "sum|e_i|",
    "sum sqrt|B_i| a_i |eta_i|",
    "sum|w_i|",
    "sum|v_i|",
    "max_s D_s",
    "max_s Dhat_s",
    "max_J M^(J)",
    "max_J Mhat^(J)",
)


@dataclass
class ReplicateRecord:
    replicate: int
    stats: BlockStats
    terms: dict       # k -> DecompositionTerms
    profile: CouplingProfile
    scale_stats: dict  # k -> {name: value}
    e2: dict          # k -> e_k^2 for the diagonal block k


@dataclass
class CouplingExperiment:
    field_model: FieldModel
    params: Parameters
    extent: tuple[int, ...]
    scales: tuple
    epsilon: float
    seed: int
    mode: str
    records: list = field(default_factory=list)

    def stat_matrix(self, name: str) -> np.ndarray:
        """(replicates, scales) array of a per-scale statistic normalised by [N_k]^(1/2)."""
        geometry = BlockGeometry(self.params, tuple(max(k) for k in zip(*self.scales)))
        norms = [math.sqrt(checked_prod(geometry.corner(k))) for k in self.scales]
        return np.array([[r.scale_stats[k][name] / nk for k, nk in zip(self.scales, norms)]
                         for r in self.records])

    def e2_matrix(self) -> np.ndarray:
        """(replicates, scales) array of e_k^2 / [k]^alpha."""
        a = self.params.alpha
        return np.array([[r.e2[k] / checked_prod(x**a for x in k) for k in self.scales] for r in self.records])

    def identity_failures(self) -> list:
        return [(r.replicate, k, t.residual) for r in self.records for k, t in r.terms.items()
                if not t.identity_holds]

    def profile_halves(self, lo: float, hi: float) -> np.ndarray:
        """(replicates, 2) max ratio on the lower and upper log-halves of [lo, hi]."""
        mid = math.sqrt(lo * hi)
        return np.array([[r.profile.max_ratio(lo, mid), r.profile.max_ratio(mid, hi)] for r in self.records])

    def eta_matrix(self) -> tuple[list, np.ndarray]:
        blocks = list(self.records[0].stats)
        return blocks, np.array([[r.stats[k].eta for k in blocks] for r in self.records])


def run_coupling_experiment(field_model: FieldModel, params: Parameters, extent, scales, replicates: int,
                            seed: int, eps: float = 0.05, calibration_replicates: int = 2000,
                            mode: str = "surrogate", cdfs: dict | None = None) -> CouplingExperiment:
    """Full pipeline on independent replicates: stats, decomposition, coupled sheet, profile."""
    extent = tuple(int(x) for x in extent)
    scales = tuple(tuple(int(x) for x in k) for k in scales)
    if len(extent) != params.d or any(len(k) != params.d for k in scales):
        raise ValueError("extent and scales must match the dimension")
    geometry = _geometry_for_extent(params, extent)
    cov = field_model.covariance()
    sigma = math.sqrt(cov.sigma2)
    blocks = geometry.blocks_within(extent)
    moments = block_moments(cov, geometry, blocks)
    if cdfs is None and not field_model.is_gaussian:
        cdfs = calibrate_block_cdfs(field_model, geometry, blocks, moments, calibration_replicates, seed)
    probes = probe_points(geometry, extent, params.tau)
    exp = CouplingExperiment(field_model, params, extent, scales, eps, seed, mode)
    for rep in range(replicates):
        sample = simulate_field(field_model, extent, seed, rep)
        stats = compute_block_stats(sample, geometry, cov, seed, cdfs, moments)
        sheet = build_coupled_sheet(stats, geometry, sigma, extent, seed, rep, mode, sample)
        prof = coupling_error_profile(sample, sheet, geometry, params.tau, eps, scales, probes)
        terms, per_scale, e2 = {}, {}, {}
        for k in scales:
            terms[k] = decompose_core(stats, k, geometry, sigma, sample.grid)
            L_k = geometry.core(k).L_k
            sel = [stats[i] for i in L_k]
            rem = prof.remainders[k]
            per_scale[k] = {
                "sum|e_i|": math.fsum(abs(s.e) for s in sel),
                "sum sqrt|B_i| a_i |eta_i|": math.fsum(math.sqrt(s.volume) * abs(s.deficit(sigma) * s.eta) for s in sel),
                "sum|w_i|": math.fsum(abs(s.w) for s in sel),
                "sum|v_i|": math.fsum(abs(s.v) for s in sel),
                "max_s D_s": max(rem["D"]),
                "max_s Dhat_s": max(rem["D_hat"]),
                "max_J M^(J)": max(rem["M"].values()),
                "max_J Mhat^(J)": max(rem["M_hat"].values()),
            }
            e2[k] = stats[k].e ** 2
        exp.records.append(ReplicateRecord(rep, stats, terms, prof, per_scale, e2))
    return exp


def _geometry_for_extent(params: Parameters, extent) -> BlockGeometry:
    """Geometry whose kmax covers every block fitting inside the extent."""
    probe = BlockGeometry(params, (1,) * params.d)
    kmax = []
    for n in extent:
        l = 0
        while probe.n(l + 1) <= n:
            l += 1
        if l < 1:
            raise ValueError(f"extent {tuple(extent)} does not contain a single block")
        kmax.append(l)
    return BlockGeometry(params, tuple(kmax))


def correlation_with_errors(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise sample correlations and their approximate standard errors (1 - r^2)/sqrt(R)."""
    r = np.corrcoef(samples, rowvar=False)
    n = samples.shape[0]
    return r, (1.0 - r**2) / math.sqrt(n)


def e_window_shrinkage(exp: CouplingExperiment, K: float) -> dict:
    """Median |eta - xi| over replicates with |xi| <= K sqrt(log[k]), per diagonal scale."""
    out = {}
    for k in exp.scales:
        bound = K * math.sqrt(math.log(checked_prod(k)))
        diffs = [abs(r.stats[k].eta - r.stats[k].xi) for r in exp.records if abs(r.stats[k].xi) <= bound]
        out[k] = float(np.median(diffs)) if diffs else math.nan
    return out


__all__ = [
    "STANDARD_NORMAL", "EmpiricalCDF", "empirical_cdf", "quantile_transform", "BlockStat", "BlockStats",
    "block_moments", "calibrate_block_cdfs", "compute_block_stats", "DecompositionTerms", "decompose_core",
    "build_coupled_sheet", "probe_points", "coupling_error_profile", "CouplingProfile", "remainder_maxima",
    "corner_maxima", "run_coupling_experiment", "CouplingExperiment", "SCALE_STATS",
]
