"""Asymptotic covariance of the constrained estimator.

The inverse of the bordered matrix

    [[ B,    0,   -J],
     [ 0,    0,   -K],
     [-J^T, -K^T,  0]]

is written in 3 x 3 blocks ``P11 .. P33``.  ``sqrt(n) (phi_hat - phi*,
psi_hat - psi*)`` is asymptotically normal with covariance
``[[P11, P12], [P21, P22]]`` and ``sqrt(n) lambda_hat`` has covariance
``-P33``; the two are asymptotically independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from pimle.errors import NegativeVariance, NotPositiveDefinite, RankDeficient
from pimle.model import NumDiffConfig, check_rank_conditions, numeric_gradient

__all__ = [
    "CovBlocks",
    "AsymptoticResult",
    "cov_blocks",
    "estimator_covariance",
    "sandwich_check",
    "delta_method",
]


@dataclass(frozen=True)
class CovBlocks:
    """The six distinct blocks of the bordered-matrix inverse."""

    p11: np.ndarray
    p12: np.ndarray
    p13: np.ndarray
    p22: np.ndarray
    p23: np.ndarray
    p33: np.ndarray
    method: str = "closed-form"

    @property
    def dims(self) -> tuple[int, int, int]:
        r = self.p11.shape[0]
        q = self.p22.shape[0]
        return r + q, r, self.p33.shape[0]

    def assembled(self) -> np.ndarray:
        """Full symmetric ``(s + t) x (s + t)`` inverse."""
        return np.block(
            [
                [self.p11, self.p12, self.p13],
                [self.p12.T, self.p22, self.p23],
                [self.p13.T, self.p23.T, self.p33],
            ]
        )


@dataclass(frozen=True)
class AsymptoticResult:
    param_cov: np.ndarray
    lambda_cov: np.ndarray
    n: int | None = None

    def standard_errors(self) -> np.ndarray:
        if self.n is None:
            raise ValueError("sample size was not supplied")
        return np.sqrt(np.clip(np.diag(self.param_cov), 0.0, None) / self.n)


def _spd_inverse(M: np.ndarray, what: str) -> np.ndarray:
    k = M.shape[0]
    if k == 0:
        return np.zeros((0, 0))
    M = 0.5 * (M + M.T)
    try:
        cf = linalg.cho_factor(M, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"{what} is not positive definite") from exc
    inv = linalg.cho_solve(cf, np.eye(k))
    return 0.5 * (inv + inv.T)


def _full_qr(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m, k = M.shape
    if k == 0 or m == 0:
        return np.eye(m), np.zeros((m, k))
    return linalg.qr(M)


def _closed_form_blocks(B, J, K, rank_tol) -> CovBlocks:
    # Same closed forms, evaluated through factors so that nothing is
    # subtracted.  With B = L L^T, L^-1 J = Q1 R1 and (K R1^-1)^T = Q2 R2:
    #   A = R1^-1 R1^-T,  W = R2^-1 R2^-T,
    #   I - Q2 Q2^T = N2 N2^T replaces the differences in P13, P33, and
    #   I - Q1 Q1^T = N1 N1^T the one in P11.
    r, t = J.shape
    q = K.shape[0]
    try:
        L = np.linalg.cholesky(0.5 * (B + B.T))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("B is not positive definite") from exc
    Jw = linalg.solve_triangular(L, J, lower=True)
    Q1, R1 = _full_qr(Jw)
    R1, N1, Q1 = R1[:t], Q1[:, t:], Q1[:, :t]
    _check_triangle(R1, rank_tol, "J")
    R1_inv_T = linalg.solve_triangular(R1, np.eye(t), trans="T") if t else np.zeros((0, 0))
    Kw = K @ R1_inv_T.T  # K R1^-1
    Q2, R2 = _full_qr(Kw.T)
    R2, N2, Q2 = R2[:q], Q2[:, q:], Q2[:, :q]
    _check_triangle(R2, rank_tol, "K")
    R2_inv_T = linalg.solve_triangular(R2, np.eye(q), trans="T") if q else np.zeros((0, 0))

    def left(M):  # L^-T M
        return linalg.solve_triangular(L, M, lower=True, trans="T")

    F1 = left(Q1 @ Q2)  # B^-1 J A K^T W R2^T
    F2 = left(Q1 @ N2)
    F3 = left(N1)
    G = R1_inv_T.T @ N2  # R1^-1 N2
    p11 = F3 @ F3.T + F1 @ F1.T
    p12 = -F1 @ R2_inv_T
    p13 = -F2 @ G.T
    p22 = R2_inv_T.T @ R2_inv_T
    p23 = -R2_inv_T.T @ Q2.T @ R1_inv_T
    p33 = -G @ G.T
    return CovBlocks(p11, p12, p13, p22, p23, p33, method="closed-form")


def _check_triangle(R: np.ndarray, rank_tol: float, name: str) -> None:
    d = np.abs(np.diag(R))
    if d.size and d.min() <= rank_tol * d.max():
        raise RankDeficient(f"{name} is numerically rank deficient")


def _nullspace_blocks(B, J, K, rank_tol) -> CovBlocks:
    # Valid whenever [J; K] has full column rank and B is positive definite on
    # the phi-part of its left null space; J itself may be rank deficient.
    r, t = J.shape
    s = r + K.shape[0]
    G = np.vstack([J, K])
    if t and np.linalg.matrix_rank(G, tol=rank_tol * np.linalg.norm(G, 2)) < t:
        raise RankDeficient("stacked constraint gradient [J; K] is rank deficient")
    H = np.zeros((s, s))
    H[:r, :r] = B
    Z = linalg.null_space(G.T) if t else np.eye(s)
    if Z.shape[1]:
        Q = Z @ _spd_inverse(Z.T @ H @ Z, "reduced information Z^T H Z") @ Z.T
    else:
        Q = np.zeros((s, s))
    Q = 0.5 * (Q + Q.T)
    R = np.linalg.pinv(G).T  # G (G^T G)^-1
    E = np.eye(s) - Q @ H
    X = -E @ R
    Y = -R.T @ H @ E @ R
    Y = 0.5 * (Y + Y.T)
    return CovBlocks(
        Q[:r, :r], Q[:r, r:], X[:r], Q[r:, r:], X[r:], Y, method="nullspace"
    )


def cov_blocks(B, J, K, *, method: str = "auto", rank_tol: float = 1e-10) -> CovBlocks:
    """Blocks of the inverse of the bordered information matrix.

    Parameters
    ----------
    B : (r, r) array
        Per-observation information of the identified block, SPD.
    J : (r, t) array
    K : (s - r, t) array
    method : {"auto", "closed-form", "nullspace"}
        ``"closed-form"`` uses the closed-form block expressions built from
        ``A = (J^T B^-1 J)^-1`` and ``W = (K A K^T)^-1``; these need ``rank(J) = t``
        and ``rank(K) = s - r``.  ``"nullspace"`` works from a basis of the null
        space of ``[J; K]^T`` and only needs the bordered matrix to be
        nonsingular.  ``"auto"`` picks the closed form when its rank
        conditions hold.

    Raises
    ------
    NotPositiveDefinite
        ``B`` (or a derived Gram matrix) fails Cholesky.
    RankDeficient
        The rank conditions of the chosen method fail.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    J = np.asarray(J, dtype=float).reshape(B.shape[0], -1)
    t = J.shape[1]
    K = np.asarray(K, dtype=float).reshape(-1, t) if np.size(K) else np.zeros((0, t))
    if method not in ("auto", "closed-form", "nullspace"):
        raise ValueError(f"unknown method {method!r}")

    if method != "nullspace":
        report = check_rank_conditions(J, K, rank_tol)
        if report.full_rank:
            return _closed_form_blocks(B, J, K, rank_tol)
        if method == "closed-form":
            raise RankDeficient(
                f"closed-form blocks need rank(J)={t} and rank(K)={K.shape[0]}, "
                f"got {report.rank_J} and {report.rank_K}"
            )
    return _nullspace_blocks(B, J, K, rank_tol)


def estimator_covariance(blocks: CovBlocks, n: int | None = None) -> AsymptoticResult:
    """Covariance of ``sqrt(n) (omega_hat - omega*)`` and of ``sqrt(n) lambda_hat``."""
    param_cov = np.block([[blocks.p11, blocks.p12], [blocks.p12.T, blocks.p22]])
    return AsymptoticResult(param_cov, -blocks.p33, n)


def sandwich_check(blocks: CovBlocks, B) -> float:
    """Max-norm gap between ``P diag(B, 0, 0) P^T`` and ``diag(param_cov, -P33)``."""
    s, r, t = blocks.dims
    P = blocks.assembled()
    D = np.zeros((s + t, s + t))
    D[:r, :r] = np.asarray(B, dtype=float)
    res = estimator_covariance(blocks)
    target = linalg.block_diag(res.param_cov, res.lambda_cov)
    return float(np.max(np.abs(P @ D @ P.T - target), initial=0.0))


def delta_method(
    grad,
    param_cov,
    n: int,
    *,
    value_fn=None,
    at=None,
    cfg: NumDiffConfig | None = None,
) -> float:
    """Standard error ``sqrt(g^T V g / n)`` of a smooth scalar functional.

    When ``grad`` is None it is obtained by central differences of
    ``value_fn`` at ``at``.
    """
    if grad is None:
        if value_fn is None or at is None:
            raise ValueError("either grad or (value_fn, at) is required")
        grad = numeric_gradient(value_fn, at, cfg)
    g = np.asarray(grad, dtype=float).ravel()
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient has non-finite entries")
    V = np.asarray(param_cov, dtype=float)
    q = float(g @ V @ g)
    if q < -1e-12:
        raise NegativeVariance(f"quadratic form g^T V g = {q:.3e} < 0")
    return float(np.sqrt(max(q, 0.0) / n))
