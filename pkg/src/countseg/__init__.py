"""Change-point segmentation of Poisson and negative-binomial count series."""

__version__ = "0.1.0"

from countseg.dispersion import DispersionEstimate, UnderdispersedData, estimate_phi
from countseg.evaluation import breakpoint_distance, rand_index, rand_index_labels
from countseg.model import (
    NEGBIN,
    POISSON,
    DistributionSpec,
    InvalidSegmentation,
    PrefixSums,
    Segmentation,
    SegmentParams,
    TrueSignal,
    bhattacharyya,
    contrast,
    estimate_signal,
    fit_params,
    fit_segment,
    kl_divergence,
    project_signal,
    segment_cost,
    squared_hellinger,
)
from countseg.segmenter import (
    CostTable,
    InfeasibleSegmentation,
    backtrack,
    segment,
    segment_exact,
    segment_pruned,
)
from countseg.selection import PenaltySpec, SelectionReport, penalty, penalty_shape, select_k
