"""Sparse checkpoint placement, overlap estimation and last-K cache simulation."""

__version__ = "0.1.0"

from .distribution import (
    OverlapHistogram,
    histogram_from_counts,
    load_histogram,
    no_cache_baseline,
    plugin_bound,
    save_histogram,
    synth_distribution,
    tv_distance,
)
from .errors import BudgetTooLarge, ConstraintError, InputError, SparseCacheError
from .estimator import EstimatorState, bias_bound, tracking_bias, variance_term
from .placement import (
    CheckpointSet,
    PlacementCost,
    balanced_placement,
    clip_to_blocks,
    dp_optimal,
    dp_optimal_naive,
    expected_cost,
    logarithmic_placement,
    place,
    reusable_depth,
    uniform_optimal_cost,
    worst_case_optimal,
)
from .simulator import (
    CacheState,
    DepthRequest,
    Request,
    SimConfig,
    load_trace,
    run_simulation,
    save_trace,
    sweep,
)
from .workload import drift_trace, gen_grouped_trace

__all__ = [
    "BudgetTooLarge", "CacheState", "CheckpointSet", "ConstraintError", "DepthRequest",
    "EstimatorState", "InputError", "OverlapHistogram", "PlacementCost", "Request",
    "SimConfig", "SparseCacheError", "balanced_placement", "bias_bound", "clip_to_blocks",
    "dp_optimal", "dp_optimal_naive", "drift_trace", "expected_cost", "gen_grouped_trace",
    "histogram_from_counts", "load_histogram", "load_trace", "logarithmic_placement",
    "no_cache_baseline", "place", "plugin_bound", "reusable_depth", "run_simulation",
    "save_histogram", "save_trace", "sweep", "synth_distribution", "tracking_bias",
    "tv_distance", "uniform_optimal_cost", "variance_term", "worst_case_optimal",
]
