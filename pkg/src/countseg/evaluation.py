"""Agreement between an estimated segmentation and the truth."""

from __future__ import annotations

import numpy as np

from countseg.model import Segmentation

NORMALIZATIONS = ("standard", "paper")


def _comb2(x) -> int:
    x = np.asarray(x, dtype=np.int64)
    return int(np.sum(x * (x - 1) // 2))


def _agreeing_pairs(n: int, overlaps, sizes_a, sizes_b) -> int:
    # pairs together in both + pairs apart in both
    return n * (n - 1) // 2 + 2 * _comb2(overlaps) - _comb2(sizes_a) - _comb2(sizes_b)


def _normalize(agree: int, n: int, normalization: str) -> float:
    if normalization == "standard":
        return 2 * agree / (n * (n - 1))
    if normalization == "paper":
        return 2 * agree / ((n - 1) * (n - 2))
    raise ValueError(f"normalization must be one of {NORMALIZATIONS}")


def overlap_sizes(a: Segmentation, b: Segmentation) -> np.ndarray:
    """Sizes of the nonempty intersections between segments of ``a`` and ``b``."""
    cuts = np.union1d(a.breakpoints, b.breakpoints)
    return np.diff(np.append(cuts, a.n + 1))


def rand_index(truth: Segmentation, est: Segmentation, normalization: str = "standard") -> float:
    """Rand index from the segment-overlap contingency table.

    ``standard`` divides by n(n-1) so identical segmentations score 1;
    ``paper`` divides by (n-1)(n-2).
    """
    n = truth.n
    if est.n != n:
        raise ValueError("segmentations have different lengths")
    if n < 3:
        raise ValueError("rand index needs n >= 3")
    agree = _agreeing_pairs(n, overlap_sizes(truth, est), truth.lengths(), est.lengths())
    return _normalize(agree, n, normalization)


def rand_index_labels(labels_a, labels_b, normalization: str = "standard") -> float:
    """Rand index for arbitrary (not necessarily contiguous) labelings."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("label vectors must be 1-D and of equal length")
    n = a.size
    if n < 3:
        raise ValueError("rand index needs n >= 3")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    agree = _agreeing_pairs(n, table, table.sum(axis=1), table.sum(axis=0))
    return _normalize(agree, n, normalization)


def breakpoint_distance(truth: Segmentation, est: Segmentation, tol: int = 0) -> tuple[int, float]:
    """Hausdorff distance between breakpoint sets and fraction of true ones matched within ``tol``."""
    t = np.asarray(truth.breakpoints)
    e = np.asarray(est.breakpoints)
    if t.size == 0 or e.size == 0:
        raise ValueError("breakpoint sets must be nonempty")
    d = np.abs(t[:, None] - e[None, :])
    t_to_e = d.min(axis=1)
    hausdorff = int(max(t_to_e.max(), d.min(axis=0).max()))
    return hausdorff, float(np.mean(t_to_e <= tol))
