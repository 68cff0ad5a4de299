"""Synthetic count signals, recovery experiments and Monte-Carlo bound checks.

Seeding: replicate ``i`` of master seed ``s`` draws from
``numpy.random.default_rng(SeedSequence(s, spawn_key=(i,)))``, the same
stream ``SeedSequence(s).spawn(...)[i]`` would give.  Serial and threaded
runs therefore produce identical replicates.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from countseg.dispersion import estimate_phi
from countseg.evaluation import rand_index
from countseg.model import NEGBIN, POISSON, DistributionSpec, Segmentation, TrueSignal, as_counts
from countseg.segmenter import segment
from countseg.selection import PenaltySpec, select_k


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


@dataclass(frozen=True)
class SignalDesign:
    """Piecewise-constant truth: per-segment lengths and lambda (Poisson) or p (negbin)."""

    lengths: tuple
    theta: tuple
    spec: DistributionSpec
    seed: int = 0

    def __post_init__(self):
        lengths = tuple(int(x) for x in self.lengths)
        theta = tuple(float(x) for x in self.theta)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "theta", theta)
        if not lengths or len(lengths) != len(theta):
            raise ValueError("need one theta per segment")
        if any(x < 1 for x in lengths):
            raise ValueError("segment lengths must be positive")
        if any(a == b for a, b in zip(theta, theta[1:])):
            raise ValueError("adjacent segments must differ")
        TrueSignal(np.asarray(theta), self.spec)  # range checks

    @classmethod
    def from_means(cls, lengths, means, spec: DistributionSpec, seed: int = 0) -> "SignalDesign":
        means = np.asarray(means, dtype=float)
        theta = means if spec.family == POISSON else spec.phi / (spec.phi + means)
        return cls(tuple(lengths), tuple(theta), spec, seed)

    @property
    def n(self) -> int:
        return sum(self.lengths)

    @property
    def k(self) -> int:
        return len(self.lengths)

    def segmentation(self) -> Segmentation:
        starts = np.concatenate(([1], 1 + np.cumsum(self.lengths)[:-1]))
        return Segmentation(tuple(starts), self.n)

    def truth(self) -> TrueSignal:
        return TrueSignal.piecewise(self.segmentation(), self.theta, self.spec)

    def means(self) -> np.ndarray:
        t = np.asarray(self.theta)
        return t if self.spec.family == POISSON else self.spec.phi * (1 - t) / t


# Stand-in for a differentially transcribed gene with 14 segments: unequal
# lengths, highly expressed blocks separated by low-intensity stretches that
# themselves change level modestly (0.3 -> 1.5 -> 0.4, ...).
INR14_LENGTHS = (420, 180, 350, 120, 300, 260, 380, 150, 330, 210, 280, 400, 170, 450)
INR14_MEANS = (0.3, 1.5, 0.4, 25.0, 0.5, 2.5, 0.3, 40.0, 1.0, 0.2, 12.0, 1.2, 0.3, 30.0)
INR14_PHI = 1.0


def inr14_design(phi: float = INR14_PHI, seed: int = 20130101) -> SignalDesign:
    return SignalDesign.from_means(INR14_LENGTHS, INR14_MEANS, DistributionSpec.negbin(phi), seed)


BUILTIN_PROFILES = {"inr14": inr14_design}


def sample_truth(truth: TrueSignal, rng: np.random.Generator) -> np.ndarray:
    """Independent draws Y_t ~ G(theta_t, phi); negbin via the Gamma-Poisson mixture."""
    if truth.spec.family == POISSON:
        return rng.poisson(truth.theta).astype(np.int64)
    p = truth.theta
    rate = rng.gamma(truth.spec.phi, (1.0 - p) / p)
    return rng.poisson(rate).astype(np.int64)


def sample_signal(design: SignalDesign, replicate: int = 0) -> np.ndarray:
    return sample_truth(design.truth(), replicate_rng(design.seed, replicate))


def _segment_expectations(truth: TrueSignal, seg: Segmentation) -> np.ndarray:
    bounds = np.asarray(seg.breakpoints) - 1
    return np.add.reduceat(truth.means(), bounds)


def chi_square_stat(series, seg: Segmentation, truth: TrueSignal) -> float:
    """sum_J |J| (Ybar_J - Ebar_J)^2 / Ebar_J = sum_J (Y_J - E_J)^2 / E_J."""
    y = as_counts(series)
    if y.size != seg.n or truth.n != seg.n:
        raise ValueError("series, segmentation and truth must have equal length")
    e = _segment_expectations(truth, seg)
    if np.any(e <= 0):
        raise ValueError("every segment needs a positive expected count")
    sums = np.add.reduceat(y.astype(float), np.asarray(seg.breakpoints) - 1)
    return float(np.sum((sums - e) ** 2 / e))


def draw_segment_sums(truth: TrueSignal, seg: Segmentation, reps: int, rng: np.random.Generator) -> np.ndarray:
    """(reps, |m|) draws of Y_J, using closure under summation within each segment.

    A Poisson sum is Poisson with the summed rate; a sum of ``c`` negbin
    variables with common p is negbin(c * phi, p).  Positions of a segment
    are grouped by parameter value so the draw is exact for any truth.
    """
    out = np.zeros((reps, seg.k))
    for j, (lo, hi) in enumerate(seg.segments()):
        theta = truth.theta[lo - 1 : hi]
        if truth.spec.family == POISSON:
            out[:, j] = rng.poisson(theta.sum(), size=reps)
            continue
        values, counts = np.unique(theta, return_counts=True)
        for p, c in zip(values, counts):
            if p < 1.0:
                out[:, j] += rng.negative_binomial(c * truth.spec.phi, p, size=reps)
    return out


@dataclass
class BoundCheckReport:
    rows: list = field(default_factory=list)
    chi2_mean: Optional[float] = None
    chi2_sd: Optional[float] = None
    m: Optional[int] = None
    omega_complement: Optional[float] = None

    COLUMNS = ("check", "side", "x", "deviation", "empirical", "bound", "se", "reps", "passed")

    @property
    def passed(self) -> bool:
        return all(r["passed"] for r in self.rows)

    def extend(self, other: "BoundCheckReport"):
        self.rows.extend(other.rows)
        for name in ("chi2_mean", "chi2_sd", "m", "omega_complement"):
            if getattr(other, name) is not None:
                setattr(self, name, getattr(other, name))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in self.COLUMNS])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(round(v, 12))
    return str(v)


def _tail_row(check, side, x, deviation, hits, reps, bound) -> dict:
    freq = hits / reps
    b = min(bound, 1.0)
    se = math.sqrt(b * (1.0 - b) / reps)
    return {
        "check": check,
        "side": side,
        "x": float(x),
        "deviation": float(deviation),
        "empirical": freq,
        "bound": float(bound),
        "se": se,
        "reps": int(reps),
        "passed": bool(freq <= bound + 3.0 * se),
    }


def verify_tail_yj(
    truth: TrueSignal,
    segment: tuple,
    xs: Sequence[float],
    reps: int = 100_000,
    seed: int = 0,
    as_exponent: bool = False,
    sample_from: Optional[TrueSignal] = None,
    corrected: bool = False,
) -> BoundCheckReport:
    """Empirical P[Y_J - E_J >= d] and P[|Y_J - E_J| >= d] against the exponential bound.

    With ``as_exponent`` each x is a tail level: d = sqrt(2 x E_J) + x and
    the bounds are e^-x (one-sided) and 2 e^-x (two-sided).  Otherwise x is
    the deviation itself, bounded by exp(-x^2 / (2 (E_J + x))).
    ``sample_from`` draws data from a different truth than the one used to
    compute E_J (mis-specification checks).

    ``corrected`` (with ``as_exponent``) uses the sub-gamma constants that
    do hold for negative-binomial sums: variance factor v = sum E_t / p_t and
    scale c = 1 / min p_t, so d = sqrt(2 x v) + c x.  For Poisson data it
    coincides with the plain form.
    """
    lo, hi = segment
    seg = Segmentation((1,), hi - lo + 1)
    sub = TrueSignal(truth.theta[lo - 1 : hi], truth.spec)
    src = sub if sample_from is None else TrueSignal(sample_from.theta[lo - 1 : hi], sample_from.spec)
    e_j = float(sub.means().sum())
    y = draw_segment_sums(src, seg, reps, np.random.default_rng(seed))[:, 0]
    report = BoundCheckReport()
    if corrected and not as_exponent:
        raise ValueError("corrected applies to the exponent form only")
    v, c = e_j, 1.0
    if corrected and sub.spec.family != POISSON:
        v = float(np.sum(sub.means() / sub.theta))
        c = 1.0 / float(sub.theta.min())
    for x in xs:
        if as_exponent:
            dev = math.sqrt(2.0 * x * v) + c * x
            one = math.exp(-x)
        else:
            dev = float(x)
            one = math.exp(-dev * dev / (2.0 * (e_j + dev)))
        up = int(np.sum(y - e_j >= dev))
        both = int(np.sum(np.abs(y - e_j) >= dev))
        name = ("yj_exponent_corrected" if corrected else "yj_exponent") if as_exponent else "yj_deviation"
        report.rows.append(_tail_row(name, "upper", x, dev, up, reps, one))
        report.rows.append(_tail_row(name, "two_sided", x, dev, both, reps, 2.0 * one))
    return report


def chi2_threshold(x: float, m: int, epsilon: float) -> float:
    return m + 8.0 * (1.0 + epsilon) * math.sqrt(x * m) + 4.0 * (1.0 + epsilon) * x


def verify_chi2_bound(
    truth: TrueSignal,
    seg: Segmentation,
    epsilon: float,
    xs: Sequence[float],
    reps: int = 100_000,
    seed: int = 0,
    sample_from: Optional[TrueSignal] = None,
) -> BoundCheckReport:
    """Empirical P[chi2_m 1_Omega >= threshold(x)] against e^-x, plus the chi2 mean check.

    Omega is the event that every segment sum lies within a factor
    (1 +- epsilon) of its expectation, taken over the segments of ``seg``.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    e = _segment_expectations(truth, seg)
    if np.any(e <= 0):
        raise ValueError("every segment needs a positive expected count")
    src = truth if sample_from is None else sample_from
    y = draw_segment_sums(src, seg, reps, np.random.default_rng(seed))
    chi2 = np.sum((y - e) ** 2 / e, axis=1)
    omega = np.all(np.abs(y / e - 1.0) <= epsilon, axis=1)
    restricted = np.where(omega, chi2, 0.0)
    m = seg.k
    report = BoundCheckReport(
        chi2_mean=float(chi2.mean()),
        chi2_sd=float(chi2.std(ddof=1)),
        m=m,
        omega_complement=float(1.0 - omega.mean()),
    )
    for x in xs:
        thr = chi2_threshold(x, m, epsilon)
        hits = int(np.sum(restricted >= thr))
        report.rows.append(_tail_row("chi2", "upper", x, thr, hits, reps, math.exp(-x)))
    report.rows.append(_chi2_mean_row(report, truth, reps))
    return report


def _chi2_mean_row(report: BoundCheckReport, truth: TrueSignal, reps: int) -> dict:
    m = report.m
    se = report.chi2_sd / math.sqrt(reps)
    mean = report.chi2_mean
    if truth.spec.family == POISSON:
        ok = abs(mean - m) <= 4.0 * se
        bound = float(m)
    else:
        bound = m / float(truth.theta.min())
        ok = m - 4.0 * se <= mean <= bound + 4.0 * se
    return {
        "check": "chi2_mean",
        "side": "two_sided" if truth.spec.family == POISSON else "bracket",
        "x": 0.0,
        "deviation": float(m),
        "empirical": mean,
        "bound": bound,
        "se": se,
        "reps": int(reps),
        "passed": bool(ok),
    }


@dataclass(frozen=True)
class BoundScenario:
    name: str
    tail_truth: TrueSignal
    tail_deviation: float
    chi2_truth: TrueSignal
    chi2_seg: Segmentation
    epsilon: float = 0.3


def default_scenario(name: str) -> BoundScenario:
    """Documented default bound-check scenarios ``poisson`` and ``negbin``.

    poisson: tail on |J| = 100 positions with lambda = 1 (deviation 20);
        chi2 on 5 segments of 500 positions with lambda = 5.
    negbin (phi = 2): tail on |J| = 100 with p = 1/2 (deviation 30);
        chi2 on 5 segments of 500 with p = 0.3, 0.5, 0.7, 0.4, 0.6.
    """
    seg = Segmentation((1, 501, 1001, 1501, 2001), 2500)
    if name == "poisson":
        spec = DistributionSpec.poisson()
        return BoundScenario(
            name,
            TrueSignal(np.ones(100), spec),
            20.0,
            TrueSignal(np.full(2500, 5.0), spec),
            seg,
        )
    if name == "negbin":
        spec = DistributionSpec.negbin(2.0)
        return BoundScenario(
            name,
            TrueSignal(np.full(100, 0.5), spec),
            30.0,
            TrueSignal.piecewise(seg, [0.3, 0.5, 0.7, 0.4, 0.6], spec),
            seg,
        )
    raise ValueError(f"unknown scenario {name!r}; expected 'poisson' or 'negbin'")


def _scaled(truth: TrueSignal, scale: float) -> TrueSignal:
    """Truth whose expected counts are multiplied by ``scale``."""
    if truth.spec.family == POISSON:
        return TrueSignal(truth.theta * scale, truth.spec)
    mean = truth.means() * scale
    return TrueSignal(truth.spec.phi / (truth.spec.phi + mean), truth.spec)


def run_bound_checks(
    scenario: BoundScenario,
    xs: Sequence[float] = (1.0, 2.0, 5.0),
    reps: int = 100_000,
    seed: int = 0,
    truth_scale: float = 1.0,
) -> BoundCheckReport:
    """All checks of a scenario.  ``truth_scale != 1`` samples from a rescaled truth.

    Rows: the Y_J tail at the scenario's deviation, the Y_J tail at each
    exponent level x (plus the corrected negative-binomial form), and the
    chi2 tail at each x with the chi2 mean check.
    """
    tail_src = None if truth_scale == 1.0 else _scaled(scenario.tail_truth, truth_scale)
    chi_src = None if truth_scale == 1.0 else _scaled(scenario.chi2_truth, truth_scale)
    seg_all = (1, scenario.tail_truth.n)
    report = BoundCheckReport()
    report.extend(
        verify_tail_yj(scenario.tail_truth, seg_all, [scenario.tail_deviation], reps, seed, False, tail_src)
    )
    report.extend(verify_tail_yj(scenario.tail_truth, seg_all, xs, reps, seed + 1, True, tail_src))
    if scenario.tail_truth.spec.family != POISSON:
        report.extend(verify_tail_yj(scenario.tail_truth, seg_all, xs, reps, seed + 1, True, tail_src, True))
    report.extend(
        verify_chi2_bound(scenario.chi2_truth, scenario.chi2_seg, scenario.epsilon, xs, reps, seed + 2, chi_src)
    )
    return report


@dataclass
class ExperimentResult:
    rows: list
    true_k: int

    COLUMNS = ("seed_index", "k_hat", "rand_index", "phi_used", "beta_used")

    @property
    def k_hats(self) -> np.ndarray:
        return np.array([r["k_hat"] for r in self.rows])

    @property
    def rand(self) -> np.ndarray:
        return np.array([r["rand_index"] for r in self.rows])

    def summary(self) -> dict:
        ks = self.k_hats
        counts = Counter(ks.tolist())
        top = max(counts.values())
        modal = min(k for k, c in counts.items() if c == top)
        q = np.quantile(self.rand, [0.05, 0.25, 0.5, 0.75, 0.95])
        return {
            "reps": len(self.rows),
            "true_k": self.true_k,
            "modal_k": int(modal),
            "median_k": float(np.median(ks)),
            "recovery_rate": float(np.mean(ks == self.true_k)),
            "rand_q05": float(q[0]),
            "rand_q25": float(q[1]),
            "rand_median": float(q[2]),
            "rand_q75": float(q[3]),
            "rand_q95": float(q[4]),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in self.COLUMNS])
        s = self.summary()
        w.writerow(["summary_key", "value"])
        for key, val in s.items():
            w.writerow([key, _fmt(val)])
        return buf.getvalue()


def run_replicate(
    design: SignalDesign,
    index: int,
    penalty: PenaltySpec,
    kmax: int,
    fit_family: str = NEGBIN,
    phi: Union[float, str, None] = None,
    engine: str = "pruned",
    rand_norm: str = "standard",
) -> dict:
    """Simulate, segment and select on one replicate.

    ``phi`` is a number, ``"auto"`` (windowed moment estimate), or None for
    the design's own phi.
    """
    y = sample_signal(design, index)
    if fit_family == POISSON:
        spec, phi_used = DistributionSpec.poisson(), float("nan")
    else:
        if phi is None:
            phi_used = design.spec.phi
        elif phi == "auto":
            phi_used = estimate_phi(y).phi_hat
        else:
            phi_used = float(phi)
        spec = DistributionSpec.negbin(phi_used)
    table = segment(y, kmax, spec, engine=engine)
    report = select_k(table, penalty)
    est = table.segmentation(report.chosen_k)
    return {
        "seed_index": index,
        "k_hat": report.chosen_k,
        "rand_index": rand_index(design.segmentation(), est, rand_norm),
        "phi_used": float(phi_used),
        "beta_used": float(report.beta_used),
    }


def recovery_experiment(
    design: SignalDesign,
    reps: int,
    selection: Optional[PenaltySpec] = None,
    kmax: Optional[int] = None,
    fit_family: str = NEGBIN,
    phi: Union[float, str, None] = "auto",
    engine: str = "pruned",
    threads: int = 1,
    rand_norm: str = "standard",
) -> ExperimentResult:
    """Repeat simulate -> segment -> select ``reps`` times and score against the truth."""
    if reps < 1:
        raise ValueError("reps must be positive")
    if selection is None:
        selection = PenaltySpec(design.n, "slope")
    if kmax is None:
        kmax = 3 * design.k
    if fit_family == NEGBIN and design.spec.family == POISSON and phi is None:
        raise ValueError("a Poisson design has no phi; pass phi explicitly or 'auto'")

    def job(i):
        return run_replicate(design, i, selection, kmax, fit_family, phi, engine, rand_norm)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(job, range(reps)))
    else:
        rows = [job(i) for i in range(reps)]
    return ExperimentResult(rows, design.k)
