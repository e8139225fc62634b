"""Model abstraction for partially identified likelihoods.

A model is described by a parameter vector ``omega = (phi, psi)`` where the
log-likelihood depends on the identified block ``phi`` only, and a set of
equality constraints ``h(omega) = 0`` which is the only source of
information about ``psi``.

Conventions
-----------
* ``J`` is the ``r x t`` matrix with ``J[i, j] = dh_j / dphi_i``.
* ``K`` is the ``(s - r) x t`` matrix with ``K[i, j] = dh_j / dpsi_i``.
* The score is supplied un-normalized (a sum over observations); solver code
  divides by ``n`` itself.  ``fisher_info`` is the per-observation expected
  information.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from pimle.errors import (
    DimensionRuleViolated,
    NonFiniteEvaluation,
    NotPositiveDefiniteWarning,
)

__all__ = [
    "ModelDims",
    "ParamPoint",
    "ModelSpec",
    "NumDiffConfig",
    "RankReport",
    "validate_dims",
    "numeric_gradient",
    "numeric_score",
    "numeric_hessian",
    "numeric_jacobians",
    "check_rank_conditions",
    "fisher_from_observed",
    "as_omega",
]


@dataclass(frozen=True)
class ModelDims:
    """Parameter and constraint counts.

    ``s`` is the length of ``omega``, ``r`` the length of the identified block
    and ``t`` the number of equality constraints.
    """

    s: int
    r: int
    t: int

    @property
    def n_unidentified(self) -> int:
        return self.s - self.r


@dataclass(frozen=True)
class ParamPoint:
    """A point ``omega`` split into its identified and unidentified parts."""

    phi: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        phi = np.atleast_1d(np.asarray(self.phi, dtype=float)).copy()
        psi = np.atleast_1d(np.asarray(self.psi, dtype=float)).copy()
        if phi.ndim != 1 or psi.ndim != 1:
            raise ValueError("phi and psi must be one-dimensional")
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(psi))):
            raise NonFiniteEvaluation("parameter point has non-finite entries")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "psi", psi)

    @classmethod
    def from_omega(cls, omega, r: int) -> "ParamPoint":
        omega = np.asarray(omega, dtype=float).ravel()
        return cls(omega[:r], omega[r:])

    @property
    def omega(self) -> np.ndarray:
        return np.concatenate([self.phi, self.psi])

    def __len__(self) -> int:
        return self.phi.size + self.psi.size


def as_omega(omega) -> np.ndarray:
    """Return ``omega`` as a flat float array whether given a ParamPoint or not."""
    if isinstance(omega, ParamPoint):
        return omega.omega
    return np.asarray(omega, dtype=float).ravel()


@dataclass(frozen=True)
class NumDiffConfig:
    """Central-difference step rule ``h = max(rel_step * |x|, abs_step)``."""

    rel_step: float = 1e-6
    abs_step: float = 1e-8

    def __post_init__(self):
        if not (self.rel_step > 0 and self.abs_step > 0):
            raise ValueError("rel_step and abs_step must be positive")

    def steps(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(self.rel_step * np.abs(x), self.abs_step)


def _always_inside(omega) -> bool:
    return True


@dataclass(frozen=True)
class ModelSpec:
    """A pluggable partially identified model.

    Parameters
    ----------
    dims : ModelDims
    loglik : callable ``(data, phi) -> float``
    score : callable ``(data, phi) -> (r,)``
        Gradient of ``loglik`` in ``phi`` (not divided by ``n``).
    constraints : callable ``omega -> (t,)``
    jac_identified, jac_unidentified : callable ``omega -> (r, t)`` / ``(s-r, t)``
    fisher_info : callable ``phi -> (r, r)``, optional
        Per-observation expected information ``B``.  When absent, solvers use
        ``-M / n`` from ``observed_info``.
    domain_check : callable ``omega -> bool``
        True iff ``omega`` is in the interior of the parameter space.
    observed_info : callable ``(data, phi) -> (r, r)``, optional
        Matrix of second derivatives of ``loglik`` (negative definite near
        the maximum).  Numerically differentiated from ``score`` if absent.
    minor_order : sequence of int, optional
        Ordering of ``omega`` used by default in the second-order minor test.
    """

    dims: ModelDims
    loglik: Callable[[Any, np.ndarray], float]
    score: Callable[[Any, np.ndarray], np.ndarray]
    constraints: Callable[[np.ndarray], np.ndarray]
    jac_identified: Callable[[np.ndarray], np.ndarray]
    jac_unidentified: Callable[[np.ndarray], np.ndarray]
    fisher_info: Callable[[np.ndarray], np.ndarray] | None = None
    domain_check: Callable[[np.ndarray], bool] = _always_inside
    observed_info: Callable[[Any, np.ndarray], np.ndarray] | None = None
    minor_order: Sequence[int] | None = None
    name: str = ""
    numdiff: NumDiffConfig = field(default_factory=NumDiffConfig)

    def jacobians(self, omega) -> tuple[np.ndarray, np.ndarray]:
        w = as_omega(omega)
        d = self.dims
        J = np.asarray(self.jac_identified(w), dtype=float).reshape(d.r, d.t)
        K = np.asarray(self.jac_unidentified(w), dtype=float).reshape(d.s - d.r, d.t)
        return J, K

    def constraint_gradient(self, omega) -> np.ndarray:
        """Stacked ``(s, t)`` gradient ``[J; K]``."""
        J, K = self.jacobians(omega)
        return np.vstack([J, K])

    def hessian(self, data, phi) -> np.ndarray:
        """Second derivatives ``M`` of the log-likelihood in ``phi``."""
        if self.observed_info is not None:
            return np.asarray(self.observed_info(data, phi), dtype=float)
        return numeric_hessian(lambda p: self.score(data, p), phi, self.numdiff)


@dataclass(frozen=True)
class RankReport:
    rank_J: int
    rank_K: int
    full_rank: bool


def validate_dims(dims: ModelDims) -> None:
    """Raise ``DimensionRuleViolated`` unless ``1 <= r <= s`` and ``s-r <= t <= r``."""
    s, r, t = dims.s, dims.r, dims.t
    if r < 1:
        raise DimensionRuleViolated(f"need r >= 1, got r={r}")
    if s < r:
        raise DimensionRuleViolated(f"need s >= r, got s={s}, r={r}")
    if t < s - r:
        raise DimensionRuleViolated(
            f"need t >= s - r (enough constraints to pin down psi), got t={t} < s-r={s - r}"
        )
    if t > r:
        raise DimensionRuleViolated(f"need t <= r, got t={t} > r={r}")


def _finite_or_raise(value, what):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteEvaluation(f"non-finite value from {what}")
    return arr


def numeric_gradient(fn, x, cfg: NumDiffConfig | None = None) -> np.ndarray:
    """Central-difference derivative of ``fn`` at ``x``.

    Returns shape ``(len(x),)`` for scalar ``fn`` and ``(len(x), m)`` for
    vector ``fn`` with ``m`` outputs (row ``i`` is the derivative in ``x_i``).
    """
    cfg = cfg or NumDiffConfig()
    x = np.asarray(x, dtype=float).ravel()
    h = cfg.steps(x)
    rows = []
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        fp = _finite_or_raise(fn(xp), "perturbed evaluation")
        fm = _finite_or_raise(fn(xm), "perturbed evaluation")
        rows.append((fp - fm) / (2.0 * h[i]))
    return np.array(rows, dtype=float)


def numeric_score(loglik, data, phi, cfg: NumDiffConfig | None = None) -> np.ndarray:
    """Central-difference gradient of ``loglik(data, .)`` at ``phi``."""
    return numeric_gradient(lambda p: loglik(data, p), phi, cfg)


def numeric_hessian(grad_fn, x, cfg: NumDiffConfig | None = None) -> np.ndarray:
    """Symmetrized central-difference Jacobian of a gradient function."""
    H = numeric_gradient(grad_fn, x, cfg)
    return 0.5 * (H + H.T)


def numeric_jacobians(
    constraints, omega, r: int, cfg: NumDiffConfig | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Split the numeric constraint gradient into ``(J, K)``.

    Rows ``0..r-1`` of the ``(s, t)`` gradient go to ``J`` and the rest to ``K``.
    """
    w = as_omega(omega)
    G = numeric_gradient(lambda z: np.atleast_1d(constraints(z)), w, cfg)
    G = G.reshape(w.size, -1)
    return G[:r], G[r:]


def _numeric_rank(A: np.ndarray, tol: float) -> int:
    if A.size == 0:
        return 0
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def check_rank_conditions(J, K, tol: float = 1e-10) -> RankReport:
    """Rank check of ``J`` (needs rank ``t``) and ``K`` (needs rank ``s - r``).

    Singular values below ``tol`` times the largest one count as zero.
    """
    J = np.atleast_2d(np.asarray(J, dtype=float))
    K = np.asarray(K, dtype=float)
    t = J.shape[1]
    if K.size == 0:
        K = K.reshape(0, t)
    rank_J = _numeric_rank(J, tol)
    rank_K = _numeric_rank(K, tol)
    return RankReport(rank_J, rank_K, rank_J == t and rank_K == K.shape[0])


def fisher_from_observed(observed_info, data, phi, n: int) -> np.ndarray:
    """Return ``-M / n`` as a surrogate for the per-observation information.

    The result is symmetrized.  A ``NotPositiveDefiniteWarning`` is issued when
    any eigenvalue is non-positive.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    M = np.asarray(observed_info(data, phi), dtype=float)
    F = -M / n
    F = 0.5 * (F + F.T)
    if np.any(np.linalg.eigvalsh(F) <= 0):
        warnings.warn(
            "information surrogate -M/n is not positive definite",
            NotPositiveDefiniteWarning,
            stacklevel=2,
        )
    return F
