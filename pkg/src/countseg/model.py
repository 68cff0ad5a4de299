"""Count distributions, segment contrasts, projections and divergences.

Positions and segment bounds in the public API are 1-based and inclusive,
matching the way segmentations are reported (segment start indices).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.special import gammaln

from countseg import _kernels

POISSON = "poisson"
NEGBIN = "negbin"


class InvalidSegmentation(ValueError):
    pass


def as_counts(values) -> np.ndarray:
    """Validate and return counts as a 1-D int64 array."""
    arr = np.asarray(values)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("counts must be a non-empty 1-D sequence")
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise ValueError("counts must be integral")
    elif arr.dtype.kind not in "iub":
        raise ValueError(f"counts must be integers, got dtype {arr.dtype}")
    arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise ValueError("counts must be nonnegative")
    return arr


@dataclass(frozen=True)
class DistributionSpec:
    family: str
    phi: Optional[float] = None

    def __post_init__(self):
        if self.family == POISSON:
            if self.phi is not None:
                raise ValueError("phi is only meaningful for the negbin family")
        elif self.family == NEGBIN:
            if self.phi is None or not self.phi > 0 or not np.isfinite(self.phi):
                raise ValueError("negbin requires a finite dispersion phi > 0")
        else:
            raise ValueError(f"unknown family {self.family!r}")

    @classmethod
    def poisson(cls) -> "DistributionSpec":
        return cls(POISSON)

    @classmethod
    def negbin(cls, phi: float) -> "DistributionSpec":
        return cls(NEGBIN, float(phi))

    @property
    def code(self) -> int:
        return _kernels.POISSON if self.family == POISSON else _kernels.NEGBIN

    @property
    def phi_value(self) -> float:
        """phi as a float, 0.0 for Poisson (for compiled kernels)."""
        return 0.0 if self.phi is None else float(self.phi)


@dataclass(frozen=True)
class SegmentParams:
    mean: float
    prob: Optional[float] = None


@dataclass(frozen=True)
class Segmentation:
    """Partition of ``1..n`` given by its 1-based segment starts."""

    breakpoints: tuple
    n: int
    params: tuple = ()

    def __post_init__(self):
        bps = tuple(int(b) for b in self.breakpoints)
        object.__setattr__(self, "breakpoints", bps)
        if self.n < 1:
            raise InvalidSegmentation("n must be >= 1")
        if not bps or bps[0] != 1:
            raise InvalidSegmentation("first breakpoint must be 1")
        if any(b2 <= b1 for b1, b2 in zip(bps, bps[1:])):
            raise InvalidSegmentation("breakpoints must be strictly increasing")
        if bps[-1] > self.n:
            raise InvalidSegmentation("breakpoint beyond series end")
        if self.params and len(self.params) != len(bps):
            raise InvalidSegmentation("one SegmentParams per segment required")

    @classmethod
    def single(cls, n: int) -> "Segmentation":
        return cls((1,), n)

    @property
    def k(self) -> int:
        return len(self.breakpoints)

    def segments(self) -> Iterator[tuple[int, int]]:
        """Yield ``(lo, hi)`` for every segment, 1-based inclusive."""
        ends = self.breakpoints[1:] + (self.n + 1,)
        for lo, nxt in zip(self.breakpoints, ends):
            yield lo, nxt - 1

    def lengths(self) -> np.ndarray:
        return np.diff(np.append(self.breakpoints, self.n + 1))

    def labels(self) -> np.ndarray:
        """Per-position segment index (0-based), nondecreasing."""
        return np.repeat(np.arange(self.k), self.lengths())


@dataclass(frozen=True)
class TrueSignal:
    """Per-position parameters: lambda_t (Poisson) or p_t (negbin)."""

    theta: np.ndarray
    spec: DistributionSpec

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 1 or theta.size == 0:
            raise ValueError("theta must be a non-empty 1-D array")
        if self.spec.family == POISSON:
            if np.any(theta < 0):
                raise ValueError("Poisson rates must be nonnegative")
        elif np.any((theta <= 0) | (theta > 1)):
            raise ValueError("negbin probabilities must lie in (0, 1]")
        object.__setattr__(self, "theta", theta)

    @property
    def n(self) -> int:
        return self.theta.size

    def means(self) -> np.ndarray:
        """Expected count E_t at every position."""
        if self.spec.family == POISSON:
            return self.theta.copy()
        return self.spec.phi * (1.0 - self.theta) / self.theta

    @classmethod
    def piecewise(cls, seg: Segmentation, values: Sequence[float], spec: DistributionSpec) -> "TrueSignal":
        return cls(np.repeat(np.asarray(values, dtype=float), seg.lengths()), spec)


@dataclass
class PrefixSums:
    """Running sums so that any segment statistic costs O(1)."""

    counts: np.ndarray
    cum_y: np.ndarray = field(init=False)

    def __post_init__(self):
        self.counts = as_counts(self.counts)
        self.cum_y = np.concatenate(([0.0], np.cumsum(self.counts, dtype=np.float64)))

    @property
    def n(self) -> int:
        return self.counts.size

    @property
    def cum_count(self) -> np.ndarray:
        return np.arange(self.n + 1, dtype=np.float64)

    @cached_property
    def cum_log_factorial(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(gammaln(self.counts + 1.0))))

    def cum_lgamma(self, phi: float) -> np.ndarray:
        """Running sums of log Gamma(phi + y_t)."""
        cache = self.__dict__.setdefault("_lgamma_cache", {})
        if phi not in cache:
            cache[phi] = np.concatenate(([0.0], np.cumsum(gammaln(phi + self.counts))))
        return cache[phi]

    def total(self, lo: int, hi: int) -> float:
        return float(self.cum_y[hi] - self.cum_y[lo - 1])


def _check_range(n: int, lo: int, hi: int):
    if not (1 <= lo <= hi <= n):
        raise IndexError(f"segment [{lo}, {hi}] outside [1, {n}]")


def segment_cost(series, lo: int, hi: int, spec: DistributionSpec, prefix: Optional[PrefixSums] = None) -> float:
    """Minimal contrast of positions ``lo..hi`` at the segment MLE.

    The partition-independent terms (log factorials, log-Gamma) are left
    out; see :func:`contrast` with ``full=True`` for the exact negative
    log-likelihood.
    """
    if prefix is None:
        prefix = PrefixSums(series)
    _check_range(prefix.n, lo, hi)
    return float(_kernels.seg_cost(spec.code, spec.phi_value, prefix.cum_y, lo - 1, hi))


def fit_segment(series, lo: int, hi: int, spec: DistributionSpec) -> SegmentParams:
    y = as_counts(series)
    _check_range(y.size, lo, hi)
    mean = float(y[lo - 1 : hi].mean())
    if spec.family == POISSON:
        return SegmentParams(mean)
    return SegmentParams(mean, spec.phi / (spec.phi + mean))


def fit_params(series, seg: Segmentation, spec: DistributionSpec) -> Segmentation:
    """Return ``seg`` with per-segment MLEs filled in."""
    params = tuple(fit_segment(series, lo, hi, spec) for lo, hi in seg.segments())
    return Segmentation(seg.breakpoints, seg.n, params)


def constant_terms(prefix: PrefixSums, spec: DistributionSpec) -> float:
    """Sum of the partition-independent likelihood terms."""
    if spec.family == POISSON:
        return float(prefix.cum_log_factorial[-1])
    n = prefix.n
    lg = prefix.cum_lgamma(spec.phi)[-1]
    return float(-(lg - n * gammaln(spec.phi) - prefix.cum_log_factorial[-1]))


def contrast(series, seg: Segmentation, spec: DistributionSpec, full: bool = False) -> float:
    prefix = series if isinstance(series, PrefixSums) else PrefixSums(series)
    if seg.n != prefix.n:
        raise InvalidSegmentation(f"segmentation covers {seg.n} positions, series has {prefix.n}")
    total = sum(segment_cost(None, lo, hi, spec, prefix) for lo, hi in seg.segments())
    if full:
        total += constant_terms(prefix, spec)
    return total


def estimate_signal(series, seg: Segmentation, spec: DistributionSpec) -> TrueSignal:
    """Piecewise-constant minimal-contrast estimator on ``seg``."""
    y = as_counts(series)
    if seg.n != y.size:
        raise InvalidSegmentation("segmentation does not match series length")
    means = np.array([y[lo - 1 : hi].mean() for lo, hi in seg.segments()])
    if spec.family == POISSON:
        return TrueSignal.piecewise(seg, means, spec)
    return TrueSignal.piecewise(seg, spec.phi / (spec.phi + means), spec)


def _check_pair(s: TrueSignal, u: TrueSignal):
    if s.spec != u.spec:
        raise ValueError("signals must share family and phi")
    if s.n != u.n:
        raise ValueError("signals must have equal length")


def _xlogy_ratio(x, num, den):
    """x * log(num / den) with 0 * log(anything) = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = x * (np.log(num) - np.log(den))
    return np.where(x == 0, 0.0, out)


def kl_divergence(s: TrueSignal, u: TrueSignal) -> float:
    """Kullback-Leibler divergence K(s, u); +inf when u misses mass of s."""
    _check_pair(s, u)
    lam, mu = s.theta, u.theta
    if s.spec.family == POISSON:
        if np.any((mu == 0) & (lam > 0)):
            return float("inf")
        return float(np.sum(mu - lam - _xlogy_ratio(lam, mu, lam)))
    p, q = lam, mu
    if np.any((q == 1) & (p < 1)):
        return float("inf")
    odds = (1.0 - p) / p
    terms = np.log(p / q) + _xlogy_ratio(odds, 1.0 - p, 1.0 - q)
    return float(s.spec.phi * np.sum(terms))


def bhattacharyya(s: TrueSignal, u: TrueSignal) -> np.ndarray:
    """Per-position Bhattacharyya coefficients sum_y sqrt(P_s(y) P_u(y))."""
    _check_pair(s, u)
    if s.spec.family == POISSON:
        return np.exp(-0.5 * (np.sqrt(s.theta) - np.sqrt(u.theta)) ** 2)
    p, q, phi = s.theta, u.theta, s.spec.phi
    r = np.sqrt((1.0 - p) * (1.0 - q))
    return np.exp(0.5 * phi * (np.log(p) + np.log(q)) - phi * np.log1p(-r))


def squared_hellinger(s: TrueSignal, u: TrueSignal) -> float:
    """h^2(s, u) = sum_t (1 - BC_t)."""
    return float(np.sum(-np.expm1(np.log(bhattacharyya(s, u)))))


def project_signal(s: TrueSignal, seg: Segmentation) -> TrueSignal:
    """KL projection of ``s`` onto signals constant on the segments of ``seg``."""
    if seg.n != s.n:
        raise InvalidSegmentation("segmentation does not match signal length")
    bounds = np.append(np.asarray(seg.breakpoints) - 1, s.n)
    lengths = np.diff(bounds)
    if s.spec.family == POISSON:
        vals = np.add.reduceat(s.theta, bounds[:-1]) / lengths
    else:
        vals = lengths / np.add.reduceat(1.0 / s.theta, bounds[:-1])
    return TrueSignal(np.repeat(vals, lengths), s.spec)
