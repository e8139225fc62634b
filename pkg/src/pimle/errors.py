"""Exception types shared across the package."""

from __future__ import annotations

import numpy as np


class PimleError(Exception):
    """Base class for all package errors."""


class DimensionRuleViolated(PimleError, ValueError):
    """The (s, r, t) triple breaks ``1 <= r <= s`` or ``s - r <= t <= r``."""


class NonFiniteEvaluation(PimleError, ArithmeticError):
    """A model callback returned NaN or inf."""


class NotPositiveDefinite(PimleError, np.linalg.LinAlgError):
    """A matrix required to be SPD failed its Cholesky factorization."""


class RankDeficient(PimleError, np.linalg.LinAlgError):
    """A Jacobian block does not have the rank the formulas require."""


class SingularSystem(PimleError, np.linalg.LinAlgError):
    """The bordered KKT matrix is numerically singular."""


class LeftDomain(PimleError):
    """A solver step could not be damped back into the parameter domain."""


class NegativeVariance(PimleError, ValueError):
    """A delta-method quadratic form came out materially negative."""


class NotPositiveDefiniteWarning(UserWarning):
    """Issued when an information surrogate has a non-positive eigenvalue."""
