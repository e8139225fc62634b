"""Lagrangian KKT solver for partially identified likelihoods.

The constrained estimate solves

    s(x, phi) / n + J lambda = 0
                  K lambda = 0
                  h(omega) = 0

by repeatedly solving the bordered system built from the per-observation
information ``B`` (a scoring-type step that needs no second derivatives of
``h``).  Second-order sufficiency is checked afterwards from the signs of the
leading principal minors of the bordered Hessian of the Lagrangian.
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from pimle.errors import LeftDomain, NonFiniteEvaluation, SingularSystem
from pimle.model import (
    ModelDims,
    ModelSpec,
    NumDiffConfig,
    ParamPoint,
    RankReport,
    as_omega,
    check_rank_conditions,
    fisher_from_observed,
    numeric_gradient,
    validate_dims,
)

__all__ = [
    "Status",
    "Identification",
    "SolverConfig",
    "SolverResult",
    "MinorReport",
    "assemble_bordered",
    "kkt_residual",
    "iterate_step",
    "solve",
    "verify_local_max",
    "limit_minor_report",
    "classify_identification",
]

logger = logging.getLogger(__name__)


class Status(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max-iterations"
    SINGULAR_SYSTEM = "singular-system"
    LEFT_DOMAIN = "left-domain"


class Identification(str, enum.Enum):
    JUST = "just-identified"
    OVER = "over-identified"


@dataclass(frozen=True)
class SolverConfig:
    kkt_tol: float = 1e-10
    max_iter: int = 200
    damping: float = 0.5
    max_backtracks: int = 40
    rank_tol: float = 1e-10
    check_local_max: bool = True
    numdiff: NumDiffConfig = field(default_factory=NumDiffConfig)

    def __post_init__(self):
        if not self.kkt_tol > 0:
            raise ValueError("kkt_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_backtracks < 0:
            raise ValueError("max_backtracks must be >= 0")


@dataclass(frozen=True)
class MinorReport:
    """Signed minors ``(-1)^(t+p) Lambda_{2t+p}``, ``p = 1 .. s-t``."""

    signed_minors: np.ndarray
    all_positive: bool
    permutation_used: np.ndarray


@dataclass
class SolverResult:
    omega_hat: ParamPoint
    lambda_hat: np.ndarray
    iterations: int
    kkt_residual: float
    constraint_violation: float
    status: Status
    identification: Identification
    local_max: MinorReport | None = None
    rank_report: RankReport | None = None
    trace: list[tuple[float, float]] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED


def classify_identification(dims: ModelDims) -> Identification:
    """Just-identified iff the constraint count equals the number of unidentified parameters."""
    return Identification.JUST if dims.t == dims.s - dims.r else Identification.OVER


def assemble_bordered(B, J, K) -> np.ndarray:
    """Return ``[[B, 0, -J], [0, 0, -K], [-J^T, -K^T, 0]]``."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    r = B.shape[0]
    J = np.asarray(J, dtype=float).reshape(r, -1)
    t = J.shape[1]
    K = np.asarray(K, dtype=float).reshape(-1, t) if np.size(K) else np.zeros((0, t))
    q = K.shape[0]
    out = np.zeros((r + q + t, r + q + t))
    out[:r, :r] = B
    out[:r, r + q:] = -J
    out[r:r + q, r + q:] = -K
    out[r + q:, :r] = -J.T
    out[r + q:, r:r + q] = -K.T
    return out


def _checked(value, what: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if not np.all(np.isfinite(arr)):
        raise NonFiniteEvaluation(f"non-finite {what}")
    return arr


def kkt_residual(spec: ModelSpec, data, n: int, omega, lam) -> tuple[float, float]:
    """Infinity-norm residuals of the stationarity equations and of ``h``."""
    w = as_omega(omega)
    r = spec.dims.r
    lam = np.asarray(lam, dtype=float).reshape(spec.dims.t)
    score = _checked(spec.score(data, w[:r]), "score")
    J, K = spec.jacobians(w)
    g1 = score / n + J @ lam
    g2 = K @ lam
    res = float(np.max(np.abs(g1), initial=0.0) + np.max(np.abs(g2), initial=0.0))
    h = _checked(spec.constraints(w), "constraint value") if spec.dims.t else np.zeros(0)
    return res, float(np.max(np.abs(h), initial=0.0))


def _information(spec: ModelSpec, data, phi, n) -> np.ndarray:
    if spec.fisher_info is not None:
        return np.asarray(spec.fisher_info(phi), dtype=float)
    return fisher_from_observed(spec.hessian, data, phi, n)


def _bordered_solve(M: np.ndarray, rhs: np.ndarray, rank_tol: float) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        try:
            lu, piv = linalg.lu_factor(M, check_finite=True)
        except (ValueError, linalg.LinAlgError) as exc:
            raise SingularSystem(str(exc)) from exc
        d = np.abs(np.diag(lu))
        if d.size and d.min() <= rank_tol * d.max():
            raise SingularSystem("bordered matrix is numerically singular")
        return linalg.lu_solve((lu, piv), rhs)


def iterate_step(
    spec: ModelSpec, data, n: int, omega, config: SolverConfig | None = None
) -> tuple[ParamPoint, np.ndarray]:
    """One update of ``(omega, lambda)``.

    The increment for ``(phi, psi)`` and the new multiplier come from solving
    the bordered system with right-hand side ``(s/n, 0, h)``; the previous
    multiplier is not needed.  The increment is shrunk by ``config.damping``
    while the candidate leaves the domain or inflates the KKT residual more
    than tenfold.
    """
    config = config or SolverConfig()
    d = spec.dims
    w = as_omega(omega)
    phi = w[:d.r]
    B = _information(spec, data, phi, n)
    J, K = spec.jacobians(w)
    score = _checked(spec.score(data, phi), "score")
    h = _checked(spec.constraints(w), "constraint value") if d.t else np.zeros(0)
    rhs = np.concatenate([score / n, np.zeros(d.s - d.r), h])
    sol = _bordered_solve(assemble_bordered(B, J, K), rhs, config.rank_tol)
    step, lam = sol[:d.s], sol[d.s:]

    def merit(z):
        res, cv = kkt_residual(spec, data, n, z, lam)
        return res + cv

    m0 = merit(w)
    alpha = 1.0
    for _ in range(config.max_backtracks + 1):
        cand = w + alpha * step
        if spec.domain_check(cand):
            try:
                m1 = merit(cand)
            except NonFiniteEvaluation:
                m1 = np.inf
            if m1 <= 10.0 * m0 + 1e-300:
                return ParamPoint.from_omega(cand, d.r), lam
        alpha *= config.damping
    raise LeftDomain(f"no admissible step after {config.max_backtracks} dampings")


def solve(
    spec: ModelSpec, data, n: int, omega0, config: SolverConfig | None = None
) -> SolverResult:
    """Iterate :func:`iterate_step` from ``omega0`` until the KKT system is met.

    Failures are reported through ``SolverResult.status`` rather than raised.
    """
    config = config or SolverConfig()
    d = spec.dims
    validate_dims(d)
    w = as_omega(omega0)
    lam = np.zeros(d.t)
    ident = classify_identification(d)
    trace: list[tuple[float, float]] = []

    def result(status, it, res, cv):
        return SolverResult(
            ParamPoint.from_omega(w, d.r), lam, it, res, cv, status, ident, trace=trace
        )

    if not spec.domain_check(w):
        return result(Status.LEFT_DOMAIN, 0, np.inf, np.inf)

    status = Status.MAX_ITERATIONS
    res = cv = np.inf
    it = 0
    for it in range(1, config.max_iter + 1):
        try:
            point, lam = iterate_step(spec, data, n, w, config)
        except SingularSystem:
            status = Status.SINGULAR_SYSTEM
            break
        except (LeftDomain, NonFiniteEvaluation):
            status = Status.LEFT_DOMAIN
            break
        w = point.omega
        res, cv = kkt_residual(spec, data, n, w, lam)
        trace.append((res, cv))
        if res + cv <= config.kkt_tol:
            status = Status.CONVERGED
            break
    logger.debug("solve: %s after %d iterations (res=%.3g, cv=%.3g)", status.value, it, res, cv)

    out = result(status, it, res, cv)
    if status is Status.CONVERGED:
        J, K = spec.jacobians(w)
        out.rank_report = check_rank_conditions(J, K, config.rank_tol)
        if config.check_local_max:
            try:
                out.local_max = verify_local_max(
                    spec, data, n, w, lam, spec.minor_order, config.numdiff
                )
            except NonFiniteEvaluation:
                out.local_max = None
    return out


def _signed_minors(HT: np.ndarray, t: int, s: int, permutation) -> MinorReport:
    perm = np.arange(s) if permutation is None else np.asarray(permutation, dtype=int)
    if sorted(perm.tolist()) != list(range(s)):
        raise ValueError("permutation must reorder range(s)")
    idx = np.concatenate([np.arange(t), t + perm])
    H = HT[np.ix_(idx, idx)]
    vals = np.array(
        [(-1.0) ** (t + p) * np.linalg.det(H[: 2 * t + p, : 2 * t + p]) for p in range(1, s - t + 1)]
    )
    return MinorReport(vals, bool(np.all(vals > 0)), perm)


def verify_local_max(
    spec: ModelSpec,
    data,
    n: int,
    omega_hat,
    lambda_hat,
    permutation=None,
    cfg: NumDiffConfig | None = None,
) -> MinorReport:
    """Second-order check at a KKT point.

    Builds the Hessian of ``loglik / n + lambda^T h`` bordered by the
    constraint gradients, in ``(lambda, omega)`` order, and returns the signed
    leading principal minors after reordering ``omega`` by ``permutation``.
    Curvature of ``h`` comes from central differences of the analytic
    Jacobians.
    """
    cfg = cfg or spec.numdiff
    d = spec.dims
    w = as_omega(omega_hat)
    lam = np.asarray(lambda_hat, dtype=float).reshape(d.t)
    G = spec.constraint_gradient(w)
    curv = numeric_gradient(lambda z: spec.constraint_gradient(z) @ lam, w, cfg).reshape(d.s, d.s)
    curv = 0.5 * (curv + curv.T)
    curv[: d.r, : d.r] += _checked(spec.hessian(data, w[: d.r]), "hessian") / n
    HT = np.zeros((d.t + d.s, d.t + d.s))
    HT[: d.t, d.t:] = G.T
    HT[d.t:, : d.t] = G
    HT[d.t:, d.t:] = curv
    return _signed_minors(HT, d.t, d.s, permutation)


def limit_minor_report(B, J, K, permutation=None) -> MinorReport:
    """Signed minors of the large-sample limit ``[[0, J^T, K^T], [J, -B, 0], [K, 0, 0]]``."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    r = B.shape[0]
    J = np.asarray(J, dtype=float).reshape(r, -1)
    t = J.shape[1]
    K = np.asarray(K, dtype=float).reshape(-1, t) if np.size(K) else np.zeros((0, t))
    s = r + K.shape[0]
    G = np.vstack([J, K])
    HT = np.zeros((t + s, t + s))
    HT[:t, t:] = G.T
    HT[t:, :t] = G
    HT[t:t + r, t:t + r] = -B
    return _signed_minors(HT, t, s, permutation)
