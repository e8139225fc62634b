"""Monte Carlo study of the constrained estimator on the missing-outcome table.

Every replicate draws its own generator from ``(seed, replicate index)`` so a
study gives identical numbers whatever the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm

from pimle.asymptotics import cov_blocks, estimator_covariance
from pimle.kkt import SolverConfig
from pimle.missing_data import (
    REFERENCE_SETTING,
    CellCounts,
    LogisticParams,
    Variant,
    build_model,
    fit,
    true_cell_probs,
)

__all__ = [
    "SimConfig",
    "SimSummary",
    "Replicate",
    "replicate_rng",
    "generate_dataset",
    "run_replicate",
    "run_study",
    "summarize",
    "asymptotic_matrices",
    "wald_ci",
]


@dataclass(frozen=True)
class SimConfig:
    params: LogisticParams = REFERENCE_SETTING
    n: int = 1000
    reps: int = 10000
    seed: int = 20240101
    ci_level: float = 0.95
    variant: Variant = Variant.FULL
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not 0 < self.ci_level < 1:
            raise ValueError("ci_level must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class Replicate:
    index: int
    status: str
    iterations: int
    beta1: float
    beta2: float
    se1: float
    se2: float
    covered1: bool
    covered2: bool
    kkt_residual: float
    constraint_violation: float
    minors_positive: bool


@dataclass(frozen=True)
class SimSummary:
    reps: int
    converged: int
    failures: int
    bias1: float
    bias2: float
    mc_se1: float
    mc_se2: float
    coverage1: float
    coverage2: float
    minors_positive: int
    max_kkt_residual: float
    max_constraint_violation: float

    def to_dict(self) -> dict:
        return asdict(self)


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for one replicate, keyed by the study seed and replicate index."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def generate_dataset(params: LogisticParams, n: int, rng: np.random.Generator) -> CellCounts:
    """One multinomial sample of size ``n`` over the 12 observable cells."""
    probs = true_cell_probs(params).observed
    return CellCounts.from_vector(rng.multinomial(n, probs / probs.sum()))


def wald_ci(estimate: float, se: float, level: float = 0.95) -> tuple[float, float]:
    if se < 0:
        raise ValueError("standard error must be non-negative")
    half = norm.ppf(0.5 + level / 2.0) * se
    return estimate - half, estimate + half


def run_replicate(config: SimConfig, index: int) -> Replicate:
    counts = generate_dataset(config.params, config.n, replicate_rng(config.seed, index))
    res = fit(counts, config.variant, config.solver)
    sol = res.solver
    if not res.converged:
        nan = float("nan")
        return Replicate(
            index, sol.status.value, sol.iterations, nan, nan, nan, nan,
            False, False, sol.kkt_residual, sol.constraint_violation, False,
        )
    truth = config.params.betas
    covered = []
    for est, se, true in zip(res.betas, res.beta_se, truth):
        lo, hi = wald_ci(est, se, config.ci_level)
        covered.append(bool(lo <= true <= hi))
    lm = sol.local_max
    return Replicate(
        index, sol.status.value, sol.iterations, res.betas[0], res.betas[1],
        res.beta_se[0], res.beta_se[1], covered[0], covered[1],
        sol.kkt_residual, sol.constraint_violation,
        bool(lm is not None and lm.all_positive),
    )


def _run_chunk(args) -> list[Replicate]:
    config, indices = args
    return [run_replicate(config, i) for i in indices]


def summarize(config: SimConfig, reps: list[Replicate]) -> SimSummary:
    reps = sorted(reps, key=lambda r: r.index)
    ok = [r for r in reps if r.status == "converged"]
    k = len(ok)
    t1, t2 = config.params.betas

    def moments(values, truth):
        if not values:
            return float("nan"), float("nan")
        mean = math.fsum(values) / len(values)
        if len(values) < 2:
            return mean - truth, float("nan")
        var = math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1)
        return mean - truth, math.sqrt(var / len(values))

    bias1, mc1 = moments([r.beta1 for r in ok], t1)
    bias2, mc2 = moments([r.beta2 for r in ok], t2)
    return SimSummary(
        reps=len(reps),
        converged=k,
        failures=len(reps) - k,
        bias1=bias1,
        bias2=bias2,
        mc_se1=mc1,
        mc_se2=mc2,
        coverage1=sum(r.covered1 for r in ok) / k if k else float("nan"),
        coverage2=sum(r.covered2 for r in ok) / k if k else float("nan"),
        minors_positive=sum(r.minors_positive for r in ok),
        max_kkt_residual=max((r.kkt_residual for r in ok), default=float("nan")),
        max_constraint_violation=max((r.constraint_violation for r in ok), default=float("nan")),
    )


def run_study(
    config: SimConfig, workers: int = 1, *, return_replicates: bool = False
):
    """Fit every replicate and aggregate bias and Wald-interval coverage.

    Non-converged replicates are counted in ``failures`` and left out of the
    aggregates.  Returns the summary, or ``(summary, replicates)`` when
    ``return_replicates`` is set.
    """
    indices = list(range(config.reps))
    if workers <= 1:
        reps = [run_replicate(config, i) for i in indices]
    else:
        chunks = [(config, indices[w::workers]) for w in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reps = [r for chunk in pool.map(_run_chunk, chunks) for r in chunk]
        reps.sort(key=lambda r: r.index)
    summary = summarize(config, reps)
    return (summary, reps) if return_replicates else summary


def asymptotic_matrices(
    params: LogisticParams = REFERENCE_SETTING, variant: Variant | str = Variant.FULL
) -> tuple[np.ndarray, np.ndarray]:
    """Asymptotic covariances of the eight complete-case cell estimators.

    Returns ``(unconstrained, constrained)``.  The unconstrained matrix is the
    inverse multinomial information; the constrained one is the leading 8 x 8
    block of the constrained estimator's covariance at the true parameters.
    """
    variant = Variant(variant)
    if variant is Variant.FULL and params.beta3 != 0:
        raise ValueError("the additive constraint requires beta3 = 0 in the true model")
    spec = build_model(variant)
    w = true_cell_probs(params).omega
    r = spec.dims.r
    B = spec.fisher_info(w[:r])
    J, K = spec.jacobians(w)
    unconstrained = cov_blocks(B, np.zeros((r, 0)), np.zeros((0, 0))).p11[:8, :8]
    constrained = estimator_covariance(cov_blocks(B, J, K)).param_cov[:8, :8]
    return unconstrained, constrained
