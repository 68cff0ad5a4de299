"""Compiled per-segment cost kernels shared by the model and both DP engines.

A segment is summarised by ``a`` (number of positions) and ``b`` (sum of
counts).  The costs drop every term that does not depend on the partition,
so an all-zero segment costs exactly 0 under both families.
"""

import math

from numba import njit

POISSON = 0
NEGBIN = 1


@njit(cache=True, nogil=True)
def poisson_cost(a, b):
    if b <= 0.0:
        return 0.0
    return b - b * math.log(b / a)


@njit(cache=True, nogil=True)
def negbin_cost(a, b, phi):
    if b <= 0.0:
        return 0.0
    mu = b / a
    return a * phi * math.log1p(mu / phi) + b * math.log1p(phi / mu)


@njit(cache=True, nogil=True)
def seg_cost(family, phi, cum_y, s, t):
    """Cost of the points ``s+1..t`` (0-based prefix indices, ``s < t``)."""
    a = float(t - s)
    b = cum_y[t] - cum_y[s]
    if family == POISSON:
        return poisson_cost(a, b)
    return negbin_cost(a, b, phi)


def tie_tol(value):
    """Absolute slack under which two DP costs count as tied."""
    return 1e-10 * (1.0 + abs(value))


tie_tol_jit = njit(cache=True, nogil=True)(tie_tol)
