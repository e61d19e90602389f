from homkit.robust.estimator import (
    EstimateResult,
    EstimatorConfig,
    Prefilter,
    estimate,
    lo_refine,
    prefilter,
)
from homkit.robust.sampling import ProsacSampler, sample_prosac, sample_uniform
from homkit.robust.scoring import (
    ransac_iterations_needed,
    residuals,
    sample_cheirality_check,
    score,
)
from homkit.robust.solvers import solver_four_point, solver_two_ac

__all__ = [
    "EstimateResult",
    "EstimatorConfig",
    "Prefilter",
    "ProsacSampler",
    "estimate",
    "lo_refine",
    "prefilter",
    "ransac_iterations_needed",
    "residuals",
    "sample_cheirality_check",
    "sample_prosac",
    "sample_uniform",
    "score",
    "solver_four_point",
    "solver_two_ac",
]
