import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pimle.asymptotics import cov_blocks, delta_method, estimator_covariance, sandwich_check
from pimle.errors import NegativeVariance, NotPositiveDefinite, RankDeficient
from pimle.kkt import assemble_bordered
from pimle.missing_data import N_PHI, Variant, build_model


def random_triple(rng, s, r, t):
    """SPD B with full-rank J (r x t) and K ((s-r) x t), reasonably conditioned."""
    A = rng.normal(size=(r, r))
    B = A @ A.T / r + 0.5 * np.eye(r)
    J = rng.normal(size=(r, t))
    K = rng.normal(size=(s - r, t))
    return B, J, K


def random_dims(rng, rmax=12):
    r = int(rng.integers(1, rmax + 1))
    t = int(rng.integers(1, r + 1))
    q = int(rng.integers(1, t + 1))
    return r + q, r, t


def oracle_blocks(B, J, K):
    """Blocks read off the dense inverse of the bordered matrix."""
    r, t = J.shape
    q = K.shape[0]
    P = np.linalg.inv(assemble_bordered(B, J, K))
    a, b = slice(0, r), slice(r, r + q)
    c = slice(r + q, r + q + t)
    return {"p11": P[a, a], "p12": P[a, b], "p13": P[a, c], "p22": P[b, b], "p23": P[b, c], "p33": P[c, c]}


TOY = (np.eye(2), np.array([[1.0], [0.0]]), np.array([[2.0]]))


class TestToy:
    def test_blocks(self):
        bl = cov_blocks(*TOY)
        np.testing.assert_allclose(bl.p11, np.eye(2), atol=1e-15)
        np.testing.assert_allclose(bl.p12, [[-0.5], [0.0]], atol=1e-15)
        np.testing.assert_allclose(bl.p13, [[0.0], [0.0]], atol=1e-15)
        np.testing.assert_allclose(bl.p22, [[0.25]], atol=1e-15)
        np.testing.assert_allclose(bl.p23, [[-0.5]], atol=1e-15)
        np.testing.assert_allclose(bl.p33, [[0.0]], atol=1e-15)
        for name, val in oracle_blocks(*TOY).items():
            np.testing.assert_allclose(getattr(bl, name), val, atol=1e-14)

    def test_covariance(self):
        res = estimator_covariance(cov_blocks(*TOY))
        np.testing.assert_allclose(res.param_cov, [[1, 0, -0.5], [0, 1, 0], [-0.5, 0, 0.25]], atol=1e-15)
        np.testing.assert_allclose(res.lambda_cov, [[0.0]], atol=1e-15)

    def test_sandwich(self):
        assert sandwich_check(cov_blocks(*TOY), TOY[0]) <= 1e-14


class TestDegenerateShapes:
    def test_k_empty(self, rng):
        B, J, _ = random_triple(rng, 5, 5, 2)
        bl = cov_blocks(B, J, np.zeros((0, 2)))
        Bi = np.linalg.inv(B)
        A = np.linalg.inv(J.T @ Bi @ J)
        np.testing.assert_allclose(bl.p11, Bi - Bi @ J @ A @ J.T @ Bi, atol=1e-10)
        np.testing.assert_allclose(bl.p33, -A, atol=1e-10)
        oracle = np.linalg.inv(assemble_bordered(B, J, np.zeros((0, 2))))
        np.testing.assert_allclose(bl.assembled(), oracle, atol=1e-10)

    def test_unconstrained(self, rng):
        B, _, _ = random_triple(rng, 4, 4, 1)
        res = estimator_covariance(cov_blocks(B, np.zeros((4, 0)), np.zeros((0, 0))))
        np.testing.assert_allclose(res.param_cov, np.linalg.inv(B), atol=1e-12)
        assert res.lambda_cov.shape == (0, 0)


class TestRandomTriples:
    def test_inverse_identity_and_sandwich(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            s, r, t = random_dims(rng)
            B, J, K = random_triple(rng, s, r, t)
            bl = cov_blocks(B, J, K, method="closed-form")
            P = bl.assembled()
            err = np.max(np.abs(P @ assemble_bordered(B, J, K) - np.eye(s + t)))
            assert err <= 1e-10, (s, r, t, err)
            assert np.max(np.abs(P - P.T)) <= 1e-12
            assert sandwich_check(bl, B) <= 1e-9

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_nullspace_route_agrees(self, seed):
        rng = np.random.default_rng(seed)
        s, r, t = random_dims(rng, rmax=8)
        B, J, K = random_triple(rng, s, r, t)
        closed = cov_blocks(B, J, K, method="closed-form").assembled()
        null = cov_blocks(B, J, K, method="nullspace").assembled()
        np.testing.assert_allclose(null, closed, atol=1e-8 * max(1.0, np.abs(closed).max()))

    def test_just_identified_degeneracy(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            r = int(rng.integers(1, 10))
            q = int(rng.integers(1, r + 1))
            B, J, K = random_triple(rng, r + q, r, q)
            bl = cov_blocks(B, J, K)
            res = estimator_covariance(bl)
            assert np.max(np.abs(res.lambda_cov)) <= 1e-10
            np.testing.assert_allclose(bl.p11, np.linalg.inv(B), atol=1e-10)


class TestReferenceSetting:
    def test_nullspace_blocks_match_oracle(self, ref_probs):
        spec = build_model(Variant.FULL)
        w = ref_probs.omega
        B = spec.fisher_info(w[:N_PHI])
        J, K = spec.jacobians(w)
        bl = cov_blocks(B, J, K)
        assert bl.method == "nullspace"
        oracle = np.linalg.inv(assemble_bordered(B, J, K))
        np.testing.assert_allclose(bl.assembled(), oracle, atol=1e-9 * np.abs(oracle).max())
        assert sandwich_check(bl, B) <= 1e-9

    def test_closed_form_refuses_rank_deficient_j(self, ref_probs):
        spec = build_model(Variant.FULL)
        w = ref_probs.omega
        with pytest.raises(RankDeficient):
            cov_blocks(spec.fisher_info(w[:N_PHI]), *spec.jacobians(w), method="closed-form")

    def test_monotone_efficiency(self, ref_probs):
        spec = build_model(Variant.FULL)
        w = ref_probs.omega
        res = estimator_covariance(cov_blocks(spec.fisher_info(w[:N_PHI]), *spec.jacobians(w)))
        p = ref_probs.r
        assert np.all(np.diag(res.param_cov)[:8] <= p * (1 - p) + 1e-12)

    def test_lambda_cov_psd(self, ref_probs):
        spec = build_model(Variant.FULL)
        w = ref_probs.omega
        res = estimator_covariance(cov_blocks(spec.fisher_info(w[:N_PHI]), *spec.jacobians(w)))
        assert np.min(np.linalg.eigvalsh(res.lambda_cov)) >= -1e-10
        assert np.max(np.abs(res.param_cov - res.param_cov.T)) <= 1e-12


class TestErrors:
    def test_not_pd(self):
        with pytest.raises(NotPositiveDefinite):
            cov_blocks(-np.eye(2), np.array([[1.0], [0.0]]), np.array([[2.0]]), method="closed-form")

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            cov_blocks(*TOY, method="svd")

    def test_nullspace_rank_deficient(self):
        with pytest.raises(RankDeficient):
            cov_blocks(np.eye(2), np.zeros((2, 1)), np.zeros((1, 1)), method="nullspace")


class TestDeltaMethod:
    def test_projection(self):
        assert delta_method(np.eye(3)[0], np.eye(3), 100) == pytest.approx(0.1, rel=1e-15)

    def test_zero_gradient(self):
        assert delta_method(np.zeros(3), np.eye(3), 100) == 0.0

    def test_numeric_gradient(self):
        V = np.diag([4.0, 1.0])
        se = delta_method(None, V, 4, value_fn=lambda w: 3 * w[0] - w[1], at=np.array([0.2, 0.1]))
        assert se == pytest.approx(np.sqrt((36 + 1) / 4), rel=1e-8)

    def test_negative_variance(self):
        with pytest.raises(NegativeVariance):
            delta_method(np.array([1.0, 0.0]), -np.eye(2), 10)

    def test_tiny_negative_is_clipped(self):
        assert delta_method(np.array([1.0]), np.array([[-1e-14]]), 1) == 0.0

    def test_standard_errors(self):
        res = estimator_covariance(cov_blocks(*TOY), n=4)
        np.testing.assert_allclose(res.standard_errors(), [0.5, 0.5, 0.25])
