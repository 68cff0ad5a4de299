"""Optimal segmentation into K = 1..kmax segments.

Two engines produce the same :class:`CostTable`:

* :func:`segment_exact` -- segment-neighbourhood DP, O(kmax n^2).  This is
  the reference engine.
* :func:`segment_pruned` -- functional pruning.  For every level it keeps
  the lower envelope of the candidate cost functions over the segment
  parameter and drops last-change candidates that no longer own any part of
  it.  Only surviving candidates are scanned at each position.

Poisson candidates are parameterised by the segment mean mu on
``[0, max y]``; negative-binomial candidates by the success probability p on
``[phi / (phi + max y), 1]``.  In both parameterisations a candidate whose
segment holds ``a`` positions with count sum ``b`` has cost

    Poisson:  C + a*mu - b*log(mu)
    negbin:   C - a*phi*log(p) - b*log(1 - p)

which is convex, so comparing it with the constant cost of a freshly opened
candidate only needs the two ends of a sublevel set.

Ties between last-change positions are resolved towards the smallest
segment start; costs within ``1e-10 * (1 + |cost|)`` count as tied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from countseg import _kernels
from countseg._kernels import seg_cost, tie_tol_jit
from countseg.model import DistributionSpec, PrefixSums, SegmentParams, Segmentation, POISSON

_INF = np.inf
_NEW = -2


class InfeasibleSegmentation(ValueError):
    """kmax * min_seg_len exceeds the series length (or kmax < 1)."""


@dataclass
class CostTable:
    best_cost: np.ndarray  # (kmax + 1, n + 1); row K, column t = cost of [1, t] in K segments
    argmin_last_start: np.ndarray  # 1-based start of the last segment, 0 where undefined
    spec: DistributionSpec
    prefix: PrefixSums
    min_seg_len: int = 1
    engine: str = "exact"
    stats: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def kmax(self) -> int:
        return self.best_cost.shape[0] - 1

    @property
    def n(self) -> int:
        return self.best_cost.shape[1] - 1

    @property
    def per_k_optimum(self) -> np.ndarray:
        """gamma(s_K) for K = 1..kmax (index 0 is K = 1)."""
        return self.best_cost[1:, self.n].copy()

    def segmentation(self, k: int) -> Segmentation:
        return backtrack(self, k)

    def segmentations(self) -> list[Segmentation]:
        return [backtrack(self, k) for k in range(1, self.kmax + 1)]


def _check_args(n: int, kmax: int, min_seg_len: int):
    if kmax < 1 or min_seg_len < 1:
        raise InfeasibleSegmentation("kmax and min_seg_len must be positive")
    if kmax * min_seg_len > n:
        raise InfeasibleSegmentation(
            f"kmax={kmax} segments of length >= {min_seg_len} do not fit in n={n}"
        )


@njit(cache=True, nogil=True)
def _exact_dp(family, phi, cum_y, kmax, min_len):
    n = cum_y.size - 1
    F = np.full((kmax + 1, n + 1), np.inf)
    arg = np.zeros((kmax + 1, n + 1), dtype=np.int64)
    F[0, 0] = 0.0
    buf = np.empty(n + 1)
    for k in range(1, kmax + 1):
        s_lo = (k - 1) * min_len
        for t in range(k * min_len, n + 1):
            s_hi = t - min_len
            best = np.inf
            for s in range(s_lo, s_hi + 1):
                prev = F[k - 1, s]
                if prev == np.inf:
                    buf[s] = np.inf
                    continue
                v = prev + seg_cost(family, phi, cum_y, s, t)
                buf[s] = v
                if v < best:
                    best = v
            lim = best + tie_tol_jit(best)
            for s in range(s_lo, s_hi + 1):
                if buf[s] <= lim:
                    arg[k, t] = s + 1
                    break
            F[k, t] = best
    return F, arg


@njit(cache=True, nogil=True)
def _feval(family, a, b, c, x):
    if family == 0:
        if b <= 0.0:
            return c + a * x
        if x <= 0.0:
            return np.inf
        return c + a * x - b * math.log(x)
    v = c - a * math.log(x)
    if b <= 0.0:
        return v
    if x >= 1.0:
        return np.inf
    return v - b * math.log1p(-x)


@njit(cache=True, nogil=True)
def _fderiv(family, a, b, x):
    if family == 0:
        return a - b / x
    return -a / x + b / (1.0 - x)


@njit(cache=True, nogil=True)
def _argmin_param(family, a, b):
    if family == 0:
        return b / a
    return a / (a + b)


@njit(cache=True, nogil=True)
def _newton_to_level(family, a, b, c, level, x, stop):
    """Move ``x`` monotonically towards the root of f = level, never past ``stop``.

    ``f`` is convex and ``f(x) > level``; Newton iterates from the outside of
    a sublevel set of a convex function approach the boundary without
    overshooting, so the sequence is monotone.
    """
    going_right = stop > x
    for _ in range(200):
        fx = _feval(family, a, b, c, x)
        gap = fx - level
        if gap <= 0.0:
            return x
        d = _fderiv(family, a, b, x)
        if d == 0.0:
            return x
        nx = x - gap / d
        if going_right:
            if nx >= stop:
                return stop
            if nx <= x:
                return x
        else:
            if nx <= stop:
                return stop
            if nx >= x:
                return x
        if abs(nx - x) <= 4e-16 * abs(x):
            return nx
        x = nx
    return x


@njit(cache=True, nogil=True)
def _left_root(family, a, b, c, level, lo, mid):
    """Smallest x in [lo, mid] with f(x) <= level, given f(mid) <= level < f(lo)."""
    x = lo
    if family == 0 and b > 0.0:
        # f(x) >= c - b log x, so f > level below exp((c - level) / b).  Starting
        # there also keeps Newton away from subnormal x, where b / x overflows
        x0 = math.exp((c - level) / b)
        if x0 > x:
            x = x0
        if x <= 0.0:
            x = 5e-324
        if x >= mid:
            return mid
        if _feval(family, a, b, c, x) <= level:
            return x
    return _newton_to_level(family, a, b, c, level, x, mid)


@njit(cache=True, nogil=True)
def _right_root(family, a, b, c, level, mid, hi):
    """Largest x in [mid, hi] with f(x) <= level, given f(mid) <= level < f(hi)."""
    x = hi
    if family == 1 and b > 0.0:
        # negbin near p = 1: f(p) >= c - b log(1 - p)
        x0 = 1.0 - math.exp((c - level) / b)
        if x0 < x:
            x = x0
        if x >= 1.0:
            x = 1.0 - 1.1102230246251565e-16
        if x <= mid:
            return mid
        if _feval(family, a, b, c, x) <= level:
            return x
    return _newton_to_level(family, a, b, c, level, x, mid)


@njit(cache=True, nogil=True)
def _coeffs(family, phi, cum_y, Fprev, tau, t):
    """(a, b, c) of candidate ``tau`` covering points tau+1..t."""
    a = float(t - tau)
    if family == 1:
        a *= phi
    return a, cum_y[t] - cum_y[tau], Fprev[tau]


@njit(cache=True, nogil=True)
def _push(lo_b, hi_b, own_b, m, lo, hi, owner):
    if hi <= lo:
        return m
    if m > 0 and own_b[m - 1] == owner and hi_b[m - 1] == lo:
        hi_b[m - 1] = hi
        return m
    lo_b[m] = lo
    hi_b[m] = hi
    own_b[m] = owner
    return m + 1


@njit(cache=True, nogil=True)
def _pruned_level(family, phi, cum_y, Fprev, k, dom_lo, dom_hi, Fcur, argcur):
    """Fill one DP level by functional pruning; returns (sum of live candidates, max live)."""
    n = cum_y.size - 1
    cap = 64
    lo_a = np.empty(cap)
    hi_a = np.empty(cap)
    own_a = np.empty(cap, dtype=np.int64)
    lo_b = np.empty(cap)
    hi_b = np.empty(cap)
    own_b = np.empty(cap, dtype=np.int64)
    mark = np.full(n + 1, -1, dtype=np.int64)
    live = np.empty(n + 1, dtype=np.int64)
    vals = np.empty(n + 1)
    m = 0
    total_live = 0
    max_live = 0
    for t in range(k, n + 1):
        new_tau = t - 1
        level = Fprev[new_tau]
        if m == 0:
            lo_a[0] = dom_lo
            hi_a[0] = dom_hi
            own_a[0] = new_tau
            m = 1
        elif level < np.inf:
            if 3 * m + 3 > lo_b.size:
                size = 2 * (3 * m + 3)
                lo_b = np.empty(size)
                hi_b = np.empty(size)
                own_b = np.empty(size, dtype=np.int64)
            mb = 0
            for i in range(m):
                lo = lo_a[i]
                hi = hi_a[i]
                tau = own_a[i]
                a, b, c = _coeffs(family, phi, cum_y, Fprev, tau, t - 1)
                xs = _argmin_param(family, a, b)
                mid = min(max(xs, lo), hi)
                if _feval(family, a, b, c, mid) > level:
                    mb = _push(lo_b, hi_b, own_b, mb, lo, hi, _NEW)
                    continue
                r1 = lo
                if mid > lo and _feval(family, a, b, c, lo) > level:
                    r1 = _left_root(family, a, b, c, level, lo, mid)
                r2 = hi
                if mid < hi and _feval(family, a, b, c, hi) > level:
                    r2 = _right_root(family, a, b, c, level, mid, hi)
                mb = _push(lo_b, hi_b, own_b, mb, lo, r1, _NEW)
                mb = _push(lo_b, hi_b, own_b, mb, r1, r2, tau)
                mb = _push(lo_b, hi_b, own_b, mb, r2, hi, _NEW)
            for i in range(mb):
                if own_b[i] == _NEW:
                    own_b[i] = new_tau
            lo_a, lo_b = lo_b, lo_a
            hi_a, hi_b = hi_b, hi_a
            own_a, own_b = own_b, own_a
            m = mb
        nlive = 0
        best = np.inf
        for i in range(m):
            tau = own_a[i]
            if mark[tau] == t:
                continue
            mark[tau] = t
            v = Fprev[tau] + seg_cost(family, phi, cum_y, tau, t)
            live[nlive] = tau
            vals[nlive] = v
            nlive += 1
            if v < best:
                best = v
        lim = best + tie_tol_jit(best)
        pick = n + 1
        for j in range(nlive):
            if vals[j] <= lim and live[j] < pick:
                pick = live[j]
        Fcur[t] = best
        argcur[t] = pick + 1
        total_live += nlive
        if nlive > max_live:
            max_live = nlive
    return total_live, max_live


@njit(cache=True, nogil=True)
def _first_level(family, phi, cum_y, F, arg):
    n = cum_y.size - 1
    for t in range(1, n + 1):
        F[1, t] = seg_cost(family, phi, cum_y, 0, t)
        arg[1, t] = 1


@njit(cache=True, nogil=True)
def _canonical_starts(family, phi, cum_y, F, k, min_len):
    """Backtrack K segments choosing, at every step, the smallest tied start."""
    n = cum_y.size - 1
    starts = np.empty(k, dtype=np.int64)
    t = n
    for j in range(k, 0, -1):
        target = F[j, t]
        lim = target + tie_tol_jit(target)
        found = -1
        for s in range((j - 1) * min_len, t - min_len + 1):
            prev = F[j - 1, s]
            if prev == np.inf:
                continue
            if prev + seg_cost(family, phi, cum_y, s, t) <= lim:
                found = s
                break
        starts[j - 1] = found + 1
        t = found
    return starts


def _param_domain(spec: DistributionSpec, counts: np.ndarray) -> tuple[float, float]:
    ymax = float(counts.max())
    if spec.family == POISSON:
        return 0.0, max(ymax, 1.0)
    top = ymax if ymax > 0 else 1.0
    return spec.phi / (spec.phi + top), 1.0


def segment_exact(series, kmax: int, spec: DistributionSpec, min_seg_len: int = 1) -> CostTable:
    prefix = series if isinstance(series, PrefixSums) else PrefixSums(series)
    _check_args(prefix.n, kmax, min_seg_len)
    F, arg = _exact_dp(spec.code, spec.phi_value, prefix.cum_y, kmax, min_seg_len)
    return CostTable(F, arg, spec, prefix, min_seg_len, engine="exact")


def segment_pruned(series, kmax: int, spec: DistributionSpec, min_seg_len: int = 1) -> CostTable:
    """Functional-pruning DP; falls back to the exact engine when min_seg_len > 1."""
    prefix = series if isinstance(series, PrefixSums) else PrefixSums(series)
    _check_args(prefix.n, kmax, min_seg_len)
    if min_seg_len > 1:
        table = segment_exact(prefix, kmax, spec, min_seg_len)
        table.stats["fallback"] = "exact"
        return table
    n = prefix.n
    F = np.full((kmax + 1, n + 1), _INF)
    arg = np.zeros((kmax + 1, n + 1), dtype=np.int64)
    F[0, 0] = 0.0
    code, phi = spec.code, spec.phi_value
    _first_level(code, phi, prefix.cum_y, F, arg)
    lo, hi = _param_domain(spec, prefix.counts)
    mean_live, max_live = [1.0], [1]
    for k in range(2, kmax + 1):
        total, mx = _pruned_level(code, phi, prefix.cum_y, F[k - 1], k, lo, hi, F[k], arg[k])
        mean_live.append(total / (n - k + 1))
        max_live.append(int(mx))
    stats = {"mean_live_candidates": mean_live, "max_live_candidates": max_live}
    return CostTable(F, arg, spec, prefix, 1, engine="pruned", stats=stats)


def segment(series, kmax: int, spec: DistributionSpec, min_seg_len: int = 1, engine: str = "pruned") -> CostTable:
    if engine == "pruned":
        return segment_pruned(series, kmax, spec, min_seg_len)
    if engine == "exact":
        return segment_exact(series, kmax, spec, min_seg_len)
    raise ValueError(f"unknown engine {engine!r}")


def _starts_from_backpointers(table: CostTable, k: int) -> list[int]:
    starts = []
    t = table.n
    for j in range(k, 0, -1):
        s = int(table.argmin_last_start[j, t])
        starts.append(s)
        t = s - 1
    return starts[::-1]


def backtrack(table: CostTable, k: int) -> Segmentation:
    """Optimal K-segmentation with per-segment MLEs.

    The exact engine's backpointers already follow the smallest-start rule.
    The pruned engine only saw surviving candidates, so its path is
    re-derived from the cost table under the same rule.
    """
    if not 1 <= k <= table.kmax:
        raise IndexError(f"K={k} outside 1..{table.kmax}")
    if k in table._cache:
        return table._cache[k]
    if table.engine == "exact":
        starts = _starts_from_backpointers(table, k)
    else:
        spec = table.spec
        starts = _canonical_starts(
            spec.code, spec.phi_value, table.prefix.cum_y, table.best_cost, k, table.min_seg_len
        ).tolist()
    cum = table.prefix.cum_y
    ends = starts[1:] + [table.n + 1]
    params = []
    for lo, nxt in zip(starts, ends):
        mean = (cum[nxt - 1] - cum[lo - 1]) / (nxt - lo)
        prob = None if table.spec.family == POISSON else table.spec.phi / (table.spec.phi + mean)
        params.append(SegmentParams(float(mean), prob))
    seg = Segmentation(tuple(starts), table.n, tuple(params))
    table._cache[k] = seg
    return seg


@dataclass(frozen=True)
class CandidateFunction:
    """Cost of one last-change candidate as a function of the segment parameter."""

    a: float
    b: float
    c: float
    last_change: int
    family: int

    def __call__(self, x: float) -> float:
        return float(_feval(self.family, self.a, self.b, self.c, float(x)))

    @property
    def minimizer(self) -> float:
        return float(_argmin_param(self.family, self.a, self.b))

    @classmethod
    def from_segment(cls, prefix: PrefixSums, spec: DistributionSpec, tau: int, t: int, offset: float = 0.0):
        """Candidate whose segment covers 0-based prefix range (tau, t]."""
        a = float(t - tau) * (spec.phi if spec.family != POISSON else 1.0)
        b = float(prefix.cum_y[t] - prefix.cum_y[tau])
        return cls(a, b, offset, tau, spec.code)


def level_crossings(f: CandidateFunction, level: float, lo: float, hi: float) -> Optional[tuple[float, float]]:
    """Sub-interval of ``[lo, hi]`` where ``f <= level``, or None if empty.

    This is the root solver used by the pruning step when a constant
    candidate is compared against an existing convex one.
    """
    a, b, c, fam = f.a, f.b, f.c, f.family
    mid = min(max(float(_argmin_param(fam, a, b)), lo), hi)
    if _feval(fam, a, b, c, mid) > level:
        return None
    r1 = lo
    if mid > lo and _feval(fam, a, b, c, lo) > level:
        r1 = float(_left_root(fam, a, b, c, level, lo, mid))
    r2 = hi
    if mid < hi and _feval(fam, a, b, c, hi) > level:
        r2 = float(_right_root(fam, a, b, c, level, mid, hi))
    return r1, r2
