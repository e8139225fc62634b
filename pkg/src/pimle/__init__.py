"""Constrained maximum likelihood for partially identified models."""

from pimle.asymptotics import (
    AsymptoticResult,
    CovBlocks,
    cov_blocks,
    delta_method,
    estimator_covariance,
    sandwich_check,
)
from pimle.errors import (
    DimensionRuleViolated,
    LeftDomain,
    NegativeVariance,
    NonFiniteEvaluation,
    NotPositiveDefinite,
    NotPositiveDefiniteWarning,
    PimleError,
    RankDeficient,
    SingularSystem,
)
from pimle.kkt import (
    Identification,
    MinorReport,
    SolverConfig,
    SolverResult,
    Status,
    assemble_bordered,
    classify_identification,
    iterate_step,
    kkt_residual,
    limit_minor_report,
    solve,
    verify_local_max,
)
from pimle.missing_data import (
    REFERENCE_SETTING,
    CellCounts,
    CellProbs,
    FitResult,
    LogisticParams,
    Variant,
    build_model,
    fit,
    true_cell_probs,
)
from pimle.model import (
    ModelDims,
    ModelSpec,
    NumDiffConfig,
    ParamPoint,
    RankReport,
    check_rank_conditions,
    fisher_from_observed,
    numeric_jacobians,
    numeric_score,
    validate_dims,
)
from pimle.simulation import SimConfig, SimSummary, run_study

__version__ = "0.1.0"
