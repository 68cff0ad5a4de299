"""Penalised choice of the number of segments.

The penalty is ``beta * K * (1 + 4 sqrt(1 + kappa + log(n / K)))**2``.  The
constant beta is either fixed or calibrated from the data by the minimal
penalty principle: the slope of the contrast against the penalty shape at
large K (``slope``) or the location of the largest dimension jump
(``jump``) estimates the minimal constant, and twice that is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.optimize import linprog
from scipy.special import gammaln, logsumexp

from countseg.model import POISSON
from countseg.segmenter import CostTable

MODES = ("fixed", "slope", "jump")

# smallest admissible constants (beta > 1/2 Poisson, beta > 1/4 negbin) plus 20%
FALLBACK_BETA = {"poisson": 0.6, "negbin": 0.3}


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PenaltySpec:
    n: int
    mode: str = "slope"
    beta: Optional[float] = None
    kappa: float = 0.1
    fit_fraction: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "fixed" and (self.beta is None or not self.beta > 0):
            raise ValueError("fixed mode needs beta > 0")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.n < 1:
            raise ValueError("n must be positive")
        if not 0 < self.fit_fraction <= 1:
            raise ValueError("fit_fraction must lie in (0, 1]")

    @classmethod
    def fixed(cls, n: int, beta: float, kappa: float = 0.1) -> "PenaltySpec":
        return cls(n, "fixed", beta, kappa)


def weight(d, n: int, kappa: float = 0.1):
    """L_D = 1 + kappa + log(n / D)."""
    return 1.0 + kappa + np.log(n / np.asarray(d, dtype=float))


def penalty_shape(k, n: int, kappa: float = 0.1):
    k = np.asarray(k, dtype=float)
    if np.any(k < 1) or np.any(k > n):
        raise ValueError("K must lie in 1..n")
    out = k * (1.0 + 4.0 * np.sqrt(weight(k, n, kappa))) ** 2
    return float(out) if out.ndim == 0 else out


def penalty(k, spec: PenaltySpec, beta: Optional[float] = None):
    b = spec.beta if beta is None else beta
    if b is None:
        raise ValueError("beta is not set; calibrate first or pass beta")
    return b * penalty_shape(k, spec.n, spec.kappa)


def weight_sum_check(n: int, kappa: float = 0.1) -> float:
    """Bound sum_D exp(-kappa D) on sum_m exp(-L_m |m|) for the dimension weights."""
    d = np.arange(1, n + 1, dtype=float)
    return float(np.exp(logsumexp(-kappa * d)))


def weight_sum_binomial(n: int, kappa: float = 0.1) -> float:
    """sum_D C(n, D) exp(-L_D D), the quantity the geometric bound controls."""
    d = np.arange(1, n + 1, dtype=float)
    log_binom = gammaln(n + 1.0) - gammaln(d + 1.0) - gammaln(n - d + 1.0)
    return float(np.exp(logsumexp(log_binom - weight(d, n, kappa) * d)))


@dataclass
class SelectionReport:
    ks: np.ndarray
    contrast: np.ndarray
    penalty: np.ndarray
    criterion: np.ndarray
    chosen_k: int
    beta_used: float
    mode: str
    calibration: dict = field(default_factory=dict)
    calibration_failed: bool = False

    def rows(self) -> list[dict]:
        return [
            {"k": int(k), "contrast": float(c), "penalty": float(p), "criterion": float(v)}
            for k, c, p, v in zip(self.ks, self.contrast, self.penalty, self.criterion)
        ]


def _argmin_smallest(values: np.ndarray) -> int:
    best = np.min(values)
    lim = best + 1e-12 * (1.0 + abs(best))
    return int(np.flatnonzero(values <= lim)[0])


def _contrasts(table: Union[CostTable, np.ndarray]) -> np.ndarray:
    if isinstance(table, CostTable):
        return table.per_k_optimum
    return np.asarray(table, dtype=float)


def chosen_k_for(contrast, beta: float, n: int, kappa: float = 0.1) -> int:
    """argmin_K contrast_K + beta * shape(K), ties to the smaller K."""
    gamma = _contrasts(contrast)
    shape = penalty_shape(np.arange(1, gamma.size + 1), n, kappa)
    return _argmin_smallest(gamma + beta * shape) + 1


def _lad_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-absolute-deviation line y ~ intercept + slope * x."""
    m = x.size
    # variables: intercept, slope, u (m), v (m);  y - a - b x = u - v
    cost = np.concatenate(([0.0, 0.0], np.ones(2 * m)))
    a_eq = np.hstack([np.ones((m, 1)), x[:, None], np.eye(m), -np.eye(m)])
    bounds = [(None, None), (None, None)] + [(0, None)] * (2 * m)
    res = linprog(cost, A_eq=a_eq, b_eq=y, bounds=bounds, method="highs")
    if not res.success:
        raise CalibrationError(f"LAD fit failed: {res.message}")
    return float(res.x[0]), float(res.x[1])


def calibrate_beta_slope(table, spec: PenaltySpec, fit_fraction: Optional[float] = None) -> tuple[float, dict]:
    """Return (2 * |slope|, diagnostics) from a robust fit over the largest K."""
    gamma = _contrasts(table)
    kmax = gamma.size
    if kmax < 10:
        raise ValueError("slope calibration needs kmax >= 10")
    frac = spec.fit_fraction if fit_fraction is None else fit_fraction
    width = max(2, math.ceil(frac * kmax))
    ks = np.arange(kmax - width + 1, kmax + 1)
    x = penalty_shape(ks, spec.n, spec.kappa)
    y = gamma[ks - 1]
    ok = np.isfinite(y)
    if ok.sum() < 2:
        raise CalibrationError("not enough finite contrasts in the fit window")
    x, y, ks = x[ok], y[ok], ks[ok]
    # center to keep the LP well scaled
    x0, y0 = x.mean(), np.median(y)
    intercept, slope = _lad_fit(x - x0, y - y0)
    resid = (y - y0) - (intercept + slope * (x - x0))
    diag = {
        "slope": slope,
        "fit_k_min": int(ks[0]),
        "fit_k_max": int(ks[-1]),
        "max_abs_residual": float(np.max(np.abs(resid))),
    }
    if not slope < 0:
        raise CalibrationError(f"contrast does not decrease along the penalty shape (slope={slope:.4g})")
    return 2.0 * abs(slope), diag


def selection_path(contrast, n: int, kappa: float = 0.1) -> list[tuple[float, int, int]]:
    """Exact piecewise-constant path of K(beta) over beta >= 0.

    Returns the list of ``(beta, K_before, K_after)`` changes, in increasing
    beta.  At a change point the criterion ties and the smaller K is taken.
    """
    gamma = _contrasts(contrast)
    shape = penalty_shape(np.arange(1, gamma.size + 1), n, kappa)
    current = _argmin_smallest(gamma)
    beta = 0.0
    path = []
    while current > 0:
        lower = np.arange(current)
        ok = np.isfinite(gamma[lower])
        if not ok.any():
            break
        lower = lower[ok]
        thresholds = (gamma[lower] - gamma[current]) / (shape[current] - shape[lower])
        thresholds = np.maximum(thresholds, beta)
        nxt = thresholds.min()
        lim = nxt + 1e-9 * (1.0 + abs(nxt))
        new = int(lower[np.flatnonzero(thresholds <= lim)[0]])
        path.append((float(nxt), current + 1, new + 1))
        beta = nxt
        current = new
    return path


def calibrate_beta_jump(table, spec: PenaltySpec) -> tuple[float, dict]:
    """Return (2 * beta_jump, diagnostics) where beta_jump triggers the largest drop in K."""
    gamma = _contrasts(table)
    if gamma.size < 10:
        raise ValueError("jump calibration needs kmax >= 10")
    path = selection_path(gamma, spec.n, spec.kappa)
    if not path:
        raise CalibrationError("K(beta) never changes")
    drops = [before - after for _, before, after in path]
    i = int(np.argmax(drops))
    beta_star, before, after = path[i]
    diag = {"beta_jump": beta_star, "k_before": before, "k_after": after, "jump": drops[i], "path": path}
    if drops[i] <= 1:
        raise CalibrationError("no dimension jump larger than 1")
    return 2.0 * beta_star, diag


def select_k(table, spec: PenaltySpec, family: Optional[str] = None) -> SelectionReport:
    """Penalised choice of K; calibration failures fall back to a default beta."""
    gamma = _contrasts(table)
    if family is None:
        family = table.spec.family if isinstance(table, CostTable) else POISSON
    ks = np.arange(1, gamma.size + 1)
    failed = False
    diag: dict = {}
    if spec.mode == "fixed":
        beta = float(spec.beta)
    else:
        try:
            if spec.mode == "slope":
                beta, diag = calibrate_beta_slope(gamma, spec)
            else:
                beta, diag = calibrate_beta_jump(gamma, spec)
        except CalibrationError as exc:
            failed = True
            beta = FALLBACK_BETA[family]
            diag = {"error": str(exc), "fallback_beta": beta}
    pen = beta * penalty_shape(ks, spec.n, spec.kappa)
    crit = gamma + pen
    chosen = _argmin_smallest(crit) + 1
    return SelectionReport(ks, gamma, pen, crit, chosen, beta, spec.mode, diag, failed)
