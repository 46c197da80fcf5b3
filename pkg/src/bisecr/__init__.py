"""Spatial capture-recapture with paired detectors.

Estimates population size from dual-detector (two-flank) capture histories
while separating the probability that an animal enters a trap station from
the probability that a detector records it, and reconciling single-flank
histories through a latent identity permutation.
"""

from .linkage import AugmentedData, LinkageState, apply_permutation, augment, merge_feasible
from .model import (
    LOG_ZERO,
    cell_probs,
    distance,
    individual_log_lik,
    log_posterior,
    reduced_individual_log_lik,
    reduced_log_posterior,
    sufficient_stats,
    trap_entry_prob,
)
from .sampler import GibbsSampler, McmcConfig, PosteriorSamples, SummaryRow, run_chain, summarize
from .simulate import (
    CoverageReport,
    ScenarioSpec,
    SimTruth,
    back_simulate,
    grid_array,
    simulate_dataset,
    standard_grid,
)
from .types import (
    FEMALE,
    MALE,
    UNKNOWN,
    AugmentedState,
    CaptureData,
    CellProbs,
    ModelParams,
    ReducedParams,
    RowKind,
    StateSpace,
    SufficientStats,
    TrapArray,
)

__version__ = "0.1.0"
