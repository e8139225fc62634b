import numpy as np
import pytest
from scipy.stats import norm

from pimle.missing_data import REFERENCE_SETTING, LogisticParams, Variant, true_cell_probs
from pimle.simulation import (
    SimConfig,
    asymptotic_matrices,
    generate_dataset,
    replicate_rng,
    run_replicate,
    run_study,
    wald_ci,
)


def multinomial_oracle(p):
    p = np.asarray(p, dtype=float)
    out = -np.outer(p, p)
    out[np.diag_indices_from(out)] = p * (1 - p)
    return out


class TestGenerate:
    def test_empty_sample(self, rng):
        c = generate_dataset(REFERENCE_SETTING, 0, rng)
        assert c.total == 0

    def test_closure(self, rng):
        for n in (1, 17, 1000):
            assert generate_dataset(REFERENCE_SETTING, n, rng).total == n

    def test_mean_of_first_cell(self):
        n, draws = 1000, 2000
        rng = np.random.default_rng(5)
        x = np.array([generate_dataset(REFERENCE_SETTING, n, rng).n[0] for _ in range(draws)])
        sd = np.sqrt(n * 0.288 * 0.712 / draws)
        assert abs(x.mean() - n * 0.288) <= 3 * sd

    def test_replicate_streams(self):
        a = replicate_rng(7, 3).integers(0, 2**32, size=4)
        b = replicate_rng(7, 3).integers(0, 2**32, size=4)
        c = replicate_rng(7, 4).integers(0, 2**32, size=4)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)


class TestWald:
    def test_standard(self):
        lo, hi = wald_ci(0.0, 1.0, 0.95)
        assert hi == pytest.approx(1.959964, abs=1e-6) and lo == -hi

    def test_degenerate(self):
        assert wald_ci(1.5, 0.0) == (1.5, 1.5)

    def test_monotone_in_level(self):
        widths = [np.diff(wald_ci(0, 1, lv))[0] for lv in (0.5, 0.9, 0.99, 0.9999)]
        assert np.all(np.diff(widths) > 0)

    def test_negative_se(self):
        with pytest.raises(ValueError):
            wald_ci(0, -1)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"n": 0}, {"reps": 0}, {"ci_level": 1.0}, {"seed": -1}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SimConfig(**kw)


class TestStudy:
    def test_determinism_across_workers(self):
        cfg = SimConfig(reps=24, n=500, seed=3)
        a = run_study(cfg, workers=1)
        b = run_study(cfg, workers=3)
        c = run_study(cfg, workers=1)
        assert a == c
        assert repr(a) == repr(b)

    def test_summary_accounting(self):
        cfg = SimConfig(reps=30, n=1000, seed=11)
        summary, reps = run_study(cfg, return_replicates=True)
        assert summary.reps == 30 == len(reps)
        assert summary.converged + summary.failures == summary.reps
        assert 0 <= summary.coverage1 <= 1 and 0 <= summary.coverage2 <= 1
        assert [r.index for r in reps] == list(range(30))
        assert summary.max_kkt_residual <= cfg.solver.kkt_tol

    def test_consistency_large_n(self):
        rep = run_replicate(SimConfig(reps=1, n=10**7, seed=1), 0)
        assert rep.status == "converged"
        assert rep.beta1 == pytest.approx(np.log(2), abs=1e-2)
        assert rep.beta2 == pytest.approx(np.log(3), abs=1e-2)

    def test_truth_from_config(self):
        params = LogisticParams(-1.0, 0.5, -0.25, 0.0)
        rep = run_replicate(SimConfig(params=params, n=10**6, reps=1, seed=2), 0)
        assert rep.beta1 == pytest.approx(0.5, abs=0.05)
        assert rep.beta2 == pytest.approx(-0.25, abs=0.05)


class TestAsymptoticMatrices:
    def test_unconstrained_equals_multinomial_oracle(self, ref_probs):
        unc, _ = asymptotic_matrices()
        np.testing.assert_allclose(unc, multinomial_oracle(ref_probs.r), rtol=0, atol=1e-12)
        assert unc[0, 0] == pytest.approx(0.288 * 0.712, abs=1e-12)

    def test_reference_diagonals(self):
        unc, con = asymptotic_matrices()
        np.testing.assert_allclose(
            np.diag(unc), [0.205, 0.172, 0.122, 0.054, 0.031, 0.047, 0.045, 0.037], atol=5e-4
        )
        np.testing.assert_allclose(
            np.diag(con), [0.197, 0.165, 0.115, 0.046, 0.023, 0.039, 0.038, 0.029], atol=5e-4
        )

    def test_efficiency_ordering(self):
        unc, con = asymptotic_matrices()
        assert np.all(np.diag(con) <= np.diag(unc) + 1e-12)
        assert np.min(np.linalg.eigvalsh(unc - con)) >= -1e-12

    def test_mar_only_coincide(self):
        unc, con = asymptotic_matrices(variant=Variant.MAR_ONLY)
        np.testing.assert_allclose(con, unc, atol=1e-10)

    def test_requires_additive_truth(self):
        params = LogisticParams(0.0, 0.1, 0.2, 0.3)
        with pytest.raises(ValueError):
            asymptotic_matrices(params)
        unc, con = asymptotic_matrices(params, Variant.MAR_ONLY)
        np.testing.assert_allclose(unc, multinomial_oracle(true_cell_probs(params).r), atol=1e-12)

    def test_quantile_reference(self):
        assert norm.ppf(0.975) == pytest.approx(1.959964, abs=1e-6)
