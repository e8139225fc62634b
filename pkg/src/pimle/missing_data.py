"""Binary outcome with two binary covariates and a missing outcome.

Observed data are the 2 x 2 x 2 complete-case counts ``n_ijk`` for
``(Y=i, X1=j, X2=k, R=1)`` and the incomplete counts ``m_jk`` for
``(X1=j, X2=k, R=0)``.  Their cell probabilities ``r_ijk`` and ``s_jk`` are
identified; the outcome probabilities among the incomplete cases,
``t_jk = Pr(Y=1 | X1=j, X2=k, R=0)``, are not.  Missing-at-random supplies
four constraints linking ``t`` to ``r``; an additive logit model for
``Y | X1, X2`` supplies a fifth.

Covariate cells are always ordered ``(j, k) = (0,0), (1,0), (0,1), (1,1)``.
The parameter vector is

    omega = (r000, r010, r001, r011, r100, r110, r101, r111,
             s00, s10, s01 | t00, t10, t01, t11)

with ``s11 = 1 - sum(phi)`` completed from the other eleven cells.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from pimle.asymptotics import AsymptoticResult, cov_blocks, delta_method, estimator_covariance
from pimle.errors import NonFiniteEvaluation
from pimle.kkt import SolverConfig, SolverResult, solve
from pimle.model import ModelDims, ModelSpec, NumDiffConfig, as_omega, numeric_gradient

__all__ = [
    "Variant",
    "CellCounts",
    "CellProbs",
    "LogisticParams",
    "REFERENCE_SETTING",
    "CELLS",
    "build_model",
    "loglik_cells",
    "mar_constraints",
    "additivity_constraint",
    "recover_betas",
    "beta_standard_errors",
    "true_cell_probs",
    "empirical_start",
    "FitResult",
    "fit",
]

CELLS = ((0, 0), (1, 0), (0, 1), (1, 1))
# +1 for (0,0) and (1,1), -1 for the off-diagonal covariate cells
_INTERACTION_SIGN = np.array([1.0, -1.0, -1.0, 1.0])
_DOMAIN_MARGIN = 1e-12
N_PHI = 11
N_PSI = 4


class Variant(str, enum.Enum):
    FULL = "full"
    MAR_ONLY = "mar-only"


@dataclass(frozen=True)
class CellCounts:
    """Observed table: ``n`` in r-cell order, ``m`` in covariate-cell order."""

    n: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.n).ravel()
        m = np.asarray(self.m).ravel()
        if n.size != 8 or m.size != 4:
            raise ValueError("need 8 complete-case counts and 4 incomplete counts")
        if not (np.all(n == np.round(n)) and np.all(m == np.round(m))):
            raise ValueError("counts must be integers")
        n = n.astype(np.int64)
        m = m.astype(np.int64)
        if np.any(n < 0) or np.any(m < 0):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "m", m)

    @classmethod
    def from_vector(cls, counts) -> "CellCounts":
        c = np.asarray(counts).ravel()
        return cls(c[:8], c[8:12])

    @property
    def observed(self) -> np.ndarray:
        """All 12 counts, ordered like ``phi`` followed by ``m11``."""
        return np.concatenate([self.n, self.m])

    @property
    def total(self) -> int:
        return int(self.n.sum() + self.m.sum())

    def n_cell(self, i: int, j: int, k: int) -> int:
        return int(self.n[4 * i + CELLS.index((j, k))])

    def m_cell(self, j: int, k: int) -> int:
        return int(self.m[CELLS.index((j, k))])


@dataclass(frozen=True)
class CellProbs:
    """Probabilities ``r`` (8), ``s`` (4) and ``t`` (4) in the canonical orders."""

    r: np.ndarray
    s: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        for name in ("r", "s", "t"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).ravel())
        if self.r.size != 8 or self.s.size != 4 or self.t.size != 4:
            raise ValueError("need 8 r, 4 s and 4 t probabilities")

    @classmethod
    def from_omega(cls, omega) -> "CellProbs":
        w = as_omega(omega)
        s11 = 1.0 - w[:N_PHI].sum()
        return cls(w[:8], np.append(w[8:11], s11), w[11:15])

    @property
    def omega(self) -> np.ndarray:
        return np.concatenate([self.r, self.s[:3], self.t])

    @property
    def observed(self) -> np.ndarray:
        return np.concatenate([self.r, self.s])

    def is_valid(self, tol: float = 1e-12) -> bool:
        obs = self.observed
        return bool(
            abs(obs.sum() - 1.0) <= tol
            and np.all((obs > 0) & (obs < 1))
            and np.all((self.t > 0) & (self.t < 1))
        )


@dataclass(frozen=True)
class LogisticParams:
    """Data-generating setting: logit coefficients, covariate law, missingness."""

    beta0: float
    beta1: float
    beta2: float
    beta3: float
    px: tuple = (0.4, 0.3, 0.2, 0.1)
    pr0_given_x: tuple = (0.2, 0.1, 0.05, 0.05)

    def __post_init__(self):
        px = np.asarray(self.px, dtype=float)
        pr0 = np.asarray(self.pr0_given_x, dtype=float)
        if px.size != 4 or pr0.size != 4:
            raise ValueError("px and pr0_given_x need one entry per covariate cell")
        if abs(px.sum() - 1.0) > 1e-12 or np.any(px <= 0) or np.any(px >= 1):
            raise ValueError("px must be a probability vector with entries in (0, 1)")
        if np.any(pr0 <= 0) or np.any(pr0 >= 1):
            raise ValueError("missingness probabilities must lie in (0, 1)")

    @property
    def betas(self) -> tuple[float, float]:
        return self.beta1, self.beta2


REFERENCE_SETTING = LogisticParams(
    beta0=float(logit(0.1)),
    beta1=float(np.log(2.0)),
    beta2=float(np.log(3.0)),
    beta3=0.0,
    px=(0.4, 0.3, 0.2, 0.1),
    pr0_given_x=(0.2, 0.1, 0.05, 0.05),
)


def true_cell_probs(params: LogisticParams) -> CellProbs:
    """Cell probabilities implied by a logistic outcome model and MAR missingness."""
    j = np.array([c[0] for c in CELLS], dtype=float)
    k = np.array([c[1] for c in CELLS], dtype=float)
    p1 = expit(params.beta0 + params.beta1 * j + params.beta2 * k + params.beta3 * j * k)
    px = np.asarray(params.px, dtype=float)
    pr0 = np.asarray(params.pr0_given_x, dtype=float)
    complete = px * (1.0 - pr0)
    r = np.concatenate([complete * (1.0 - p1), complete * p1])
    return CellProbs(r, px * pr0, p1)


# -- functions of omega ------------------------------------------------------


def _split(w: np.ndarray):
    r0 = w[0:4]
    r1 = w[4:8]
    s = np.append(w[8:11], 1.0 - w[:N_PHI].sum())
    t = w[11:15]
    return r0, r1, s, t


def _log(x, what):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0) or not np.all(np.isfinite(x)):
        raise NonFiniteEvaluation(f"log of non-positive {what}")
    return np.log(x)


def _completed_logits(w):
    r0, r1, s, t = _split(w)
    a = r1 + s * t  # Pr(Y=1, X=c)
    b = r0 + s * (1.0 - t)  # Pr(Y=0, X=c)
    return _log(a, "Pr(Y=1, X)") - _log(b, "Pr(Y=0, X)")


def _mar(w):
    r0, r1, _, t = _split(w)
    return _log(t, "t") - _log(1.0 - t, "1 - t") - _log(r1, "r1") + _log(r0, "r0")


def _additivity(w):
    return float(_INTERACTION_SIGN @ _completed_logits(w))


def _mar_grad(w):
    r0, r1, _, t = _split(w)
    G = np.zeros((15, 4))
    idx = np.arange(4)
    G[idx, idx] = 1.0 / r0
    G[4 + idx, idx] = -1.0 / r1
    G[11 + idx, idx] = 1.0 / (t * (1.0 - t))
    return G


def _additivity_grad(w):
    r0, r1, s, t = _split(w)
    a = r1 + s * t
    b = r0 + s * (1.0 - t)
    sign = _INTERACTION_SIGN
    g = np.zeros(15)
    g[0:4] = -sign / b
    g[4:8] = sign / a
    ds = sign * (t / a - (1.0 - t) / b)
    g[8:11] = ds[:3]
    g[:N_PHI] -= ds[3]  # s11 = 1 - sum(phi)
    g[11:15] = sign * s * (1.0 / a + 1.0 / b)
    return g


def _beta_fns():
    def beta1(w):
        lg = _completed_logits(as_omega(w))
        return float(lg[1] - lg[0])

    def beta2(w):
        lg = _completed_logits(as_omega(w))
        return float(lg[2] - lg[0])

    return beta1, beta2


# -- public wrappers on CellProbs -------------------------------------------


def loglik_cells(counts: CellCounts, probs: CellProbs) -> float:
    """Multinomial log-likelihood; cells with zero count contribute nothing."""
    c = counts.observed
    p = probs.observed
    pos = c > 0
    return float(c[pos] @ _log(p[pos], "cell probability"))


def mar_constraints(probs: CellProbs) -> np.ndarray:
    """``logit(t_jk) - log(r_1jk / r_0jk)`` for the four covariate cells."""
    r0, r1, t = probs.r[:4], probs.r[4:], probs.t
    return _log(t, "t") - _log(1.0 - t, "1 - t") - _log(r1, "r1") + _log(r0, "r0")


def _probs_logits(probs: CellProbs) -> np.ndarray:
    r0, r1, s, t = probs.r[:4], probs.r[4:], probs.s, probs.t
    return _log(r1 + s * t, "Pr(Y=1, X)") - _log(r0 + s * (1.0 - t), "Pr(Y=0, X)")


def additivity_constraint(probs: CellProbs) -> float:
    """Log cross-ratio of the completed table; equals the logit interaction."""
    return float(_INTERACTION_SIGN @ _probs_logits(probs))


def recover_betas(probs: CellProbs) -> tuple[float, float]:
    """Main effects of ``X1`` and ``X2`` on the logit scale."""
    lg = _probs_logits(probs)
    return float(lg[1] - lg[0]), float(lg[2] - lg[0])


def beta_standard_errors(
    probs: CellProbs, param_cov, n: int, cfg: NumDiffConfig | None = None
) -> tuple[float, float]:
    """Delta-method standard errors of the two main effects.

    ``param_cov`` is the 15 x 15 asymptotic covariance of ``sqrt(n)(omega_hat -
    omega)`` in the canonical ``omega`` order.
    """
    w = probs.omega
    b1, b2 = _beta_fns()
    return (
        delta_method(None, param_cov, n, value_fn=b1, at=w, cfg=cfg),
        delta_method(None, param_cov, n, value_fn=b2, at=w, cfg=cfg),
    )


# -- model -----------------------------------------------------------------


def _cells(phi):
    phi = np.asarray(phi, dtype=float)
    return phi, 1.0 - phi.sum()


def _loglik(data: CellCounts, phi) -> float:
    phi, last = _cells(phi)
    c = data.observed
    p = np.append(phi, last)
    pos = c > 0
    return float(c[pos] @ _log(p[pos], "cell probability"))


def _score(data: CellCounts, phi) -> np.ndarray:
    phi, last = _cells(phi)
    c = data.observed
    return c[:N_PHI] / phi - c[N_PHI] / last


def _hessian(data: CellCounts, phi) -> np.ndarray:
    phi, last = _cells(phi)
    c = data.observed
    return -np.diag(c[:N_PHI] / phi**2) - c[N_PHI] / last**2


def _fisher(phi) -> np.ndarray:
    phi, last = _cells(phi)
    return np.diag(1.0 / phi) + 1.0 / last


def _in_domain(omega) -> bool:
    w = as_omega(omega)
    cells = np.append(w[:N_PHI], 1.0 - w[:N_PHI].sum())
    lo, hi = _DOMAIN_MARGIN, 1.0 - _DOMAIN_MARGIN
    return bool(np.all((cells > lo) & (cells < hi)) and np.all((w[11:] > lo) & (w[11:] < hi)))


# psi first: with phi first the leading constraint block is singular on the
# whole MAR manifold and the low-order minors vanish in the limit
MINOR_ORDER = tuple(range(N_PHI, N_PHI + N_PSI)) + tuple(range(N_PHI))


def build_model(variant: Variant | str = Variant.FULL) -> ModelSpec:
    """ModelSpec for the missing-outcome table.

    ``Variant.FULL`` imposes MAR and additivity (t = 5, over-identified);
    ``Variant.MAR_ONLY`` imposes MAR alone (t = 4, just-identified).
    """
    variant = Variant(variant)
    if variant is Variant.FULL:

        def constraints(w):
            w = as_omega(w)
            return np.append(_mar(w), _additivity(w))

        def grad(w):
            w = as_omega(w)
            return np.column_stack([_mar_grad(w), _additivity_grad(w)])

        t = 5
    else:

        def constraints(w):
            return _mar(as_omega(w))

        def grad(w):
            return _mar_grad(as_omega(w))

        t = 4

    return ModelSpec(
        dims=ModelDims(s=N_PHI + N_PSI, r=N_PHI, t=t),
        loglik=_loglik,
        score=_score,
        constraints=constraints,
        jac_identified=lambda w: grad(w)[:N_PHI],
        jac_unidentified=lambda w: grad(w)[N_PHI:],
        fisher_info=_fisher,
        domain_check=_in_domain,
        observed_info=_hessian,
        minor_order=MINOR_ORDER,
        name=f"missing-outcome/{variant.value}",
    )


def empirical_start(counts: CellCounts, t0: float = 0.5) -> np.ndarray:
    """Empirical cell frequencies (zero cells nudged to ``0.5/N``) plus constant ``t``."""
    total = counts.total
    if total < 1:
        raise ValueError("empty table")
    c = counts.observed.astype(float)
    c[c == 0] = 0.5
    freq = c / c.sum()
    return np.concatenate([freq[:N_PHI], np.full(N_PSI, t0)])


@dataclass
class FitResult:
    solver: SolverResult
    probs: CellProbs
    betas: tuple[float, float]
    beta_se: tuple[float, float] | None
    asymptotic: AsymptoticResult | None
    n: int

    @property
    def converged(self) -> bool:
        return self.solver.converged


def fit(
    counts: CellCounts,
    variant: Variant | str = Variant.FULL,
    config: SolverConfig | None = None,
    *,
    start=None,
    spec: ModelSpec | None = None,
) -> FitResult:
    """Constrained fit plus plug-in covariance and main-effect standard errors."""
    spec = spec or build_model(variant)
    n = counts.total
    omega0 = empirical_start(counts) if start is None else as_omega(start)
    res = solve(spec, counts, n, omega0, config)
    probs = CellProbs.from_omega(res.omega_hat)
    try:
        betas = recover_betas(probs)
    except NonFiniteEvaluation:
        betas = (np.nan, np.nan)
    se = asym = None
    if res.converged:
        w = res.omega_hat.omega
        J, K = spec.jacobians(w)
        blocks = cov_blocks(_fisher(w[:N_PHI]), J, K)
        asym = estimator_covariance(blocks, n)
        se = beta_standard_errors(probs, asym.param_cov, n)
    return FitResult(res, probs, betas, se, asym, n)
