"""Deterministic blocking combinatorics for the lattice Z_+^d.

Boundary sequence n_l = sum_{i<=l} (i^alpha + i^beta); block B_k = (N_{k-1}, N_k]
with N_k = (n_{k_1}, ..., n_{k_d}); big block H_k at the low corner of B_k with
side k_s^alpha; small block I_k = B_k minus H_k.  A block is *good* when it lies
in the wedge G_rho, rho = tau / 8.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations, product
from typing import Iterator, Sequence

from .lattice import INT64_MAX, MultiIndex, Rect, as_index, checked_prod, leq


@dataclass(frozen=True)
class Parameters:
    """Blocking exponents plus the moment / decay constants the hypotheses mention.

    ``lam`` is the exponential decay rate of u(n); ``nu`` an optional power rate.
    """

    d: int
    alpha: int
    beta: int
    tau: float
    r: float = 1.0
    delta: float = 1.0
    lam: float | None = 1.0
    nu: float | None = None
    sigma0sq: float = 1.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if int(self.alpha) != self.alpha or int(self.beta) != self.beta:
            raise ValueError("alpha and beta must be integers")
        if not self.alpha > self.beta > 1:
            raise ValueError(f"need alpha > beta > 1, got alpha={self.alpha}, beta={self.beta}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.r <= 0 or self.delta <= 0:
            raise ValueError("r and delta must be positive")
        if self.lam is not None and self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.nu is not None and self.nu <= 0:
            raise ValueError("nu must be positive")
        if self.sigma0sq <= 0:
            raise ValueError("rho(0) must be positive")

    @property
    def rho(self) -> float:
        return self.tau / 8.0

    @property
    def r0(self) -> float:
        return max(1.0, 1.0 / (self.r + self.delta))

    @property
    def eps0(self) -> float:
        r = self.r
        return 2.0 * r * r * self.beta / ((2.0 + r) * (4.0 + 3.0 * r))

    @property
    def alpha0(self) -> float:
        return 1.0 / (2.0 * (self.alpha + 1))

    @property
    def delta0(self) -> float | None:
        return None if self.nu is None else self.nu / self.d - 1.0

    @property
    def s(self) -> float:
        return 2.0 + self.r + self.delta

    @property
    def nu0(self) -> float:
        return self.r * (2.0 + self.r + self.delta) / (2.0 * self.delta)

    def to_dict(self) -> dict:
        return {
            "d": self.d, "alpha": self.alpha, "beta": self.beta, "tau": self.tau,
            "r": self.r, "delta": self.delta, "lam": self.lam, "nu": self.nu,
            "sigma0sq": self.sigma0sq,
        }


class _Boundary:
    """Lazily extended exact boundary sequence with int64 overflow checks."""

    def __init__(self, alpha: int, beta: int):
        self.alpha, self.beta = int(alpha), int(beta)
        self._n = [0]

    def __getitem__(self, l: int) -> int:
        while len(self._n) <= l:
            i = len(self._n)
            nxt = self._n[-1] + i**self.alpha + i**self.beta
            if nxt > INT64_MAX:
                raise OverflowError(
                    f"n_{i} for alpha={self.alpha}, beta={self.beta} needs "
                    f"{nxt.bit_length() + 1} bits; exceeds int64"
                )
            self._n.append(nxt)
        return self._n[l]


def boundary_sequence(alpha: int, beta: int, l_max: int) -> tuple[int, ...]:
    """(n_0, ..., n_{l_max}) in exact integer arithmetic."""
    if not alpha > beta > 1:
        raise ValueError(f"need alpha > beta > 1, got {alpha}, {beta}")
    if l_max < 0:
        raise ValueError("l_max must be >= 0")
    b = _Boundary(alpha, beta)
    return tuple(b[l] for l in range(l_max + 1))


@dataclass(frozen=True)
class BlockDecomposition:
    k: MultiIndex
    B: Rect
    H: Rect
    I_pieces: tuple[Rect, ...]

    @property
    def I_volume(self) -> int:
        return sum(p.volume for p in self.I_pieces)


def _decompose(k: MultiIndex, n: _Boundary, alpha: int) -> BlockDecomposition:
    if any(x < 1 for x in k):
        raise ValueError(f"block indices start at 1, got {k}")
    b_lo = tuple(n[x - 1] for x in k)
    b_hi = tuple(n[x] for x in k)
    h_hi = tuple(lo + x**alpha for lo, x in zip(b_lo, k))
    pieces = []
    for s in range(len(k)):
        # axes < s restricted to H, axis s the small strip, axes > s the whole block
        lo = b_lo[:s] + (h_hi[s],) + b_lo[s + 1:]
        hi = h_hi[:s] + (b_hi[s],) + b_hi[s + 1:]
        pieces.append(Rect(lo, hi))
    return BlockDecomposition(k, Rect(b_lo, b_hi), Rect(b_lo, h_hi), tuple(pieces))


def decompose_block(k: Sequence[int], params: Parameters) -> BlockDecomposition:
    """B_k, H_k and the canonical d-piece tiling of I_k."""
    return _decompose(as_index(k), _Boundary(params.alpha, params.beta), params.alpha)


def _axis_test(i: MultiIndex, s: int, n: _Boundary, rho: float) -> bool:
    # extreme vertex of B_i for the G_rho constraint on axis s
    bound = 1.0
    for t, x in enumerate(i):
        if t != s:
            bound *= float(n[x]) ** rho
    return float(n[i[s] - 1] + 1) >= bound


def _is_good(i: MultiIndex, n: _Boundary, rho: float) -> bool:
    return all(_axis_test(i, s, n, rho) for s in range(len(i)))


def good_block_set(params: Parameters, kmax: Sequence[int]) -> tuple[MultiIndex, ...]:
    """All i <= kmax with B_i inside G_rho, in lexicographic order."""
    kmax = as_index(kmax)
    if any(x < 1 for x in kmax):
        raise ValueError("kmax must be >= (1,...,1)")
    n = _Boundary(params.alpha, params.beta)
    return tuple(i for i in product(*(range(1, x + 1) for x in kmax)) if _is_good(i, n, params.rho))


@dataclass(frozen=True)
class CoreRectangle:
    k: MultiIndex
    M: MultiIndex
    R: Rect
    L_k: tuple[MultiIndex, ...]
    violations: tuple[str, ...] = ()

    @property
    def empty(self) -> bool:
        return not self.L_k


@dataclass(frozen=True)
class RemainderRegions:
    """Strips (0, N_k^(s)] covering (0, N_k] minus R_k, and the corner regions I_k^(J)."""

    k: MultiIndex
    strips: tuple[Rect, ...]
    corners: dict = field(default_factory=dict)  # J (tuple of axes) -> largest I_k^(J)
    low: MultiIndex = ()   # N_k
    high: MultiIndex = ()  # N_{k+1}

    def corner_rect(self, J: Sequence[int], N: Sequence[int]) -> Rect:
        """I_k^(J) for a given N with N_k < N <= N_{k+1} on the axes in J."""
        J = set(J)
        lo = tuple(self.low[s] if s in J else 0 for s in range(len(self.low)))
        hi = tuple(N[s] if s in J else self.low[s] for s in range(len(self.low)))
        return Rect(lo, hi)


@dataclass(frozen=True)
class HypothesisCheck:
    lemma: str
    condition: str
    lhs: float | None
    rhs: float | None
    passed: bool | None  # None: informational only
    note: str = ""


@dataclass(frozen=True)
class ValidationReport:
    params: Parameters
    checks: tuple[HypothesisCheck, ...]
    derived: dict

    @property
    def all_passed(self) -> bool:
        return all(c.passed is not False for c in self.checks)

    @property
    def failures(self) -> tuple[HypothesisCheck, ...]:
        return tuple(c for c in self.checks if c.passed is False)

    def rows(self) -> list[dict]:
        return [
            {"lemma": c.lemma, "condition": c.condition, "lhs": c.lhs, "rhs": c.rhs,
             "status": "info" if c.passed is None else ("pass" if c.passed else "fail"),
             "note": c.note}
            for c in self.checks
        ]


class BlockGeometry:
    """Blocks, good set, core rectangles and the counting bijection for fixed parameters."""

    def __init__(self, params: Parameters, kmax: Sequence[int]):
        kmax = as_index(kmax)
        if len(kmax) != params.d:
            raise ValueError(f"kmax has dimension {len(kmax)}, parameters say d={params.d}")
        if any(x < 1 for x in kmax):
            raise ValueError("kmax must be >= (1,...,1)")
        self.params = params
        self.kmax = kmax
        self._n = _Boundary(params.alpha, params.beta)
        # one extra boundary so N_{k+1} exists for every k <= kmax
        self.boundary = tuple(self._n[l] for l in range(max(kmax) + 2))
        self._blocks: dict[MultiIndex, BlockDecomposition] = {}

    @property
    def d(self) -> int:
        return self.params.d

    def n(self, l: int) -> int:
        return self._n[l]

    def corner(self, k: Sequence[int]) -> MultiIndex:
        """N_k."""
        return tuple(self._n[x] for x in k)

    def block(self, k: Sequence[int]) -> BlockDecomposition:
        k = as_index(k)
        if k not in self._blocks:
            self._blocks[k] = _decompose(k, self._n, self.params.alpha)
        return self._blocks[k]

    def is_good(self, k: Sequence[int]) -> bool:
        return _is_good(as_index(k), self._n, self.params.rho)

    def all_blocks(self) -> Iterator[MultiIndex]:
        return product(*(range(1, x + 1) for x in self.kmax))

    @cached_property
    def good_set(self) -> tuple[MultiIndex, ...]:
        return good_block_set(self.params, self.kmax)

    def blocks_within(self, extent: Sequence[int]) -> tuple[MultiIndex, ...]:
        """Good blocks (up to kmax) whose B_k lies inside (0, extent]."""
        return tuple(k for k in self.good_set if leq(self.corner(k), extent))

    def core(self, k: Sequence[int]) -> CoreRectangle:
        """M_k, R_k = (M_k, N_k] and L_k for a good block k."""
        k = as_index(k)
        if not self.is_good(k):
            raise ValueError(f"block {k} is not good; N_k is not in H")
        lows = []
        for s in range(self.d):
            # smallest good block index along axis s, other coordinates fixed at k
            first = next(
                x for x in range(1, k[s] + 1)
                if _is_good(k[:s] + (x,) + k[s + 1:], self._n, self.params.rho)
            )
            lows.append(first)
        M = tuple(self._n[x - 1] for x in lows)
        R = Rect(M, self.corner(k))
        L_k = tuple(product(*(range(a, b + 1) for a, b in zip(lows, k))))
        violations = []
        bad = [i for i in L_k if not _is_good(i, self._n, self.params.rho)]
        if bad:
            violations.append(f"L_k not inside L (R_k not inside H): {bad[:5]}")
        if not L_k:
            violations.append("L_k is empty")
        return CoreRectangle(k, M, R, L_k, tuple(violations))

    def remainder(self, k: Sequence[int]) -> RemainderRegions:
        k = as_index(k)
        core = self.core(k)
        Nk = self.corner(k)
        Nk1 = tuple(self._n[x + 1] for x in k)
        strips = []
        for s in range(self.d):
            hi = Nk[:s] + (core.M[s],) + Nk[s + 1:]
            strips.append(Rect.from_origin(hi))
        corners = {}
        for size in range(1, self.d + 1):
            for J in combinations(range(self.d), size):
                lo = tuple(Nk[s] if s in J else 0 for s in range(self.d))
                hi = tuple(Nk1[s] if s in J else Nk[s] for s in range(self.d))
                corners[J] = Rect(lo, hi)
        return RemainderRegions(k, tuple(strips), corners, Nk, Nk1)

    def k_star(self, m: int) -> int:
        """Largest l with (m, ..., l, ..., m) passing the vertex test on an axis holding m.

        Every good index whose minimum coordinate is m has its other coordinates
        bounded by this value.  Returns m - 1 when (m, ..., m) itself is not good.
        """
        if self.d == 1:
            raise ValueError("k_star needs d >= 2")
        rho = self.params.rho
        lhs = float(self._n[m - 1] + 1)
        fixed = 1.0
        for _ in range(self.d - 2):
            fixed *= float(self._n[m]) ** rho

        def ok(l):
            return _k_star_ok(self._n, l, lhs, fixed, rho)

        if not ok(m):
            return m - 1
        lo, step = m, 1
        while ok(lo + step):
            lo += step
            step *= 2
        hi = lo + step
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if ok(mid):
                lo = mid
            else:
                hi = mid
        return lo

    def iter_psi(self, m_max: int | None = None) -> Iterator[MultiIndex]:
        """Good block indices in the order L(2), L(3), ... (center, then L_1(m), ..., L_d(m))."""
        d = self.d
        if d == 1:
            m = 1
            while m_max is None or m <= m_max:
                yield (m,)
                m += 1
            return
        m = 2
        while m_max is None or m <= m_max:
            ks = self.k_star(m)
            if ks >= m:
                # one extra layer absorbs rounding differences between product orders
                reach = ks if d == 2 else ks + 1
                yield from (i for i in _region(m, reach, d) if _is_good(i, self._n, self.params.rho))
            m += 1

    def psi(self, m_max: int | None = None, limit: int | None = None) -> tuple[MultiIndex, ...]:
        out = []
        for i in self.iter_psi(m_max):
            out.append(i)
            if limit is not None and len(out) >= limit:
                break
        return tuple(out)


def _k_star_ok(n: _Boundary, l: int, lhs: float, fixed: float, rho: float) -> bool:
    try:
        return lhs >= fixed * float(n[l]) ** rho
    except OverflowError:
        return False


def _region(m: int, ks: int, d: int) -> Iterator[MultiIndex]:
    """L(m): center first, then L_s(m) for s = 1..d, each lexicographic.

    L_s(m) holds indices whose *first* coordinate equal to m sits on axis s and
    whose other coordinates lie in [m, k*(m)]; this covers every index with
    minimum coordinate m exactly once.
    """
    yield (m,) * d
    for s in range(d):
        ranges = []
        for t in range(d):
            if t < s:
                ranges.append(range(m + 1, ks + 1))
            elif t == s:
                ranges.append((m,))
            else:
                ranges.append(range(m, ks + 1))
        for i in product(*ranges):
            if s == 0 and all(x == m for x in i):
                continue
            yield i


def enumerate_psi(params: Parameters, m_max: int, limit: int | None = None) -> tuple[MultiIndex, ...]:
    """psi as an ordered sequence over the good set, regions L(2)..L(m_max)."""
    if m_max < 2:
        raise ValueError("m_max must be >= 2")
    geom = BlockGeometry(params, (1,) * params.d)
    return geom.psi(m_max, limit)


def block_distance(i: Sequence[int], j: Sequence[int], params: Parameters) -> tuple[int, int]:
    """(sup-norm distance between H_i and H_j, M_ij)."""
    i, j = as_index(i), as_index(j)
    if i == j:
        raise ValueError("block_distance needs i != j")
    n = _Boundary(params.alpha, params.beta)
    dist = 0
    m_ij = 0
    for a, b in zip(i, j):
        if a == b:
            continue
        lo, hi = min(a, b), max(a, b)
        # first coordinate of H_hi minus last coordinate of H_lo
        gap = (n[hi - 1] + 1) - (n[lo - 1] + lo**params.alpha)
        dist = max(dist, gap)
        m_ij = max(m_ij, hi - 1)
    return dist, m_ij


def validate_parameters(params: Parameters) -> ValidationReport:
    """Evaluate every lemma hypothesis, reporting both sides of each inequality."""
    p = params
    d, a, b, r, rho = p.d, p.alpha, p.beta, p.r, p.rho
    checks: list[HypothesisCheck] = []

    def add(lemma, cond, lhs, rhs, ok, note=""):
        checks.append(HypothesisCheck(lemma, cond, lhs, rhs, ok, note))

    ratio = a / b
    lo_ratio = 2.0 * p.r0 * r / (2.0 + r)
    hi_ratio = 2.0 * (1.0 + r) / (2.0 + r)
    add("block_exponents", "alpha > beta > 1", a, b, a > b > 1)
    for lemma in ("smoothed_clt_rate", "eta_correlation", "sheet_coupling"):
        add(lemma, "alpha/beta > 2 r0 r/(2+r)", ratio, lo_ratio, ratio > lo_ratio)
        add(lemma, "alpha/beta < 2(1+r)/(2+r)", ratio, hi_ratio, ratio < hi_ratio)
    add("quantile_window", "0 < K < sqrt(2 r beta/(2+r))", None, math.sqrt(2 * r * b / (2 + r)), None,
        "upper limit for the transform window constant K")

    # the moment bound and maximal inequality need a power rate nu >= d nu0;
    # exponential decay of u(n) supplies every power rate
    c2 = p.lam is not None
    if p.nu is None:
        ok34 = True if c2 else None
        add("moment_bound", "nu >= d nu0", None, d * p.nu0, ok34,
            "exponential decay (lam) gives every power rate" if c2 else "nu not supplied")
    else:
        direct = p.nu >= d * p.nu0
        note = "" if direct else ("stated nu too small, but exponential decay (lam) gives every power rate" if c2 else "")
        add("moment_bound", "nu >= d nu0", p.nu, d * p.nu0, direct or c2, note)
    if d >= 3:
        add("moment_bound", "nu0 < 1/(d-2)", p.nu0, 1.0 / (d - 2), p.nu0 < 1.0 / (d - 2))

    threshold36 = (1.0 + 2.0 / r) * (3.0 + 4.0 / r)
    add("transform_residual_sum", "beta > (1+2/r)(3+4/r)", b, threshold36, b > threshold36)

    if p.nu is None:
        add("susceptibility_gap", "d < nu < 2d", None, None, None, "nu not supplied")
        add("variance_deficit_sum", "beta > 3/delta0", b, None, None, "nu not supplied")
    else:
        add("susceptibility_gap", "nu > d", p.nu, d, p.nu > d)
        add("susceptibility_gap", "nu < 2d", p.nu, 2 * d, p.nu < 2 * d)
        d0 = p.delta0
        if d0 > 0:
            add("variance_deficit_sum", "beta > 3/delta0", b, 3.0 / d0, b > 3.0 / d0)
        else:
            add("variance_deficit_sum", "beta > 3/delta0", b, math.inf, False, "delta0 <= 0")

    add("small_block_sum", "alpha - beta > 2 + 4/rho", a - b, 2.0 + 4.0 / rho, a - b > 2.0 + 4.0 / rho)

    growth = (1.0 + 1.0 / rho) * (1.0 - 1.0 / d)
    add("sheet_coupling", "alpha > 3(1+1/rho)(1-1/d)", a, 3.0 * growth, a > 3.0 * growth)
    add("sheet_coupling", "beta > (2/rho)(1+1/rho)(1-1/d)", b, 2.0 / rho * growth, b > 2.0 / rho * growth)
    if not c2:
        add("exponential_decay", "u(n) = O(exp(-lam n))", None, None, False, "lam not supplied")

    thr52 = 16.0 / (3.0 * p.tau) - 1.0
    add("strip_maxima", "alpha > 16/(3 tau) - 1", a, thr52, a > thr52)
    add("corner_maxima", "alpha > 2/gamma", a, None, None,
        "gamma is the unquantified exponent of the anchored maximal inequality")

    derived = {
        "rho": rho, "r0": p.r0, "eps0": p.eps0, "alpha0": p.alpha0, "delta0": p.delta0,
        "s": p.s, "nu0": p.nu0,
    }
    return ValidationReport(p, tuple(checks), derived)


def tiles_exactly(blocks: Sequence[Rect], box: Rect) -> bool:
    """Whether ``blocks`` are pairwise disjoint and their volumes fill ``box``."""
    if any(not box.contains_rect(b) for b in blocks):
        return False
    for x, y in combinations(blocks, 2):
        if x.intersects(y):
            return False
    return sum(b.volume for b in blocks) == box.volume


def volume_product(k: Sequence[int], exponent: int) -> int:
    """[k]^exponent, exactly."""
    return checked_prod(x**exponent for x in k)
