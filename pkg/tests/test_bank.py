import math

import numpy as np
import pytest

from maplab.bank import (
    DelayHypothesisBank,
    EstimatorConfig,
    InvalidRange,
    NonPositiveCovariance,
    likelihood,
    run_estimation,
    update_probabilities,
)


class TestInit:
    def test_default_grid(self):
        bank = DelayHypothesisBank(EstimatorConfig(), first_measurement=70.0)
        np.testing.assert_allclose(bank.delays, np.arange(0.0, 101.0, 10.0))
        np.testing.assert_allclose(np.diff(bank.delays), 10.0)
        assert bank.probs.sum() == pytest.approx(1.0, abs=1e-15)

    def test_two_filters(self):
        cfg = EstimatorConfig(n_filters=2, delay_range=(0.0, 10.0))
        bank = DelayHypothesisBank(cfg, 70.0)
        np.testing.assert_allclose(bank.delays, [0.0, 10.0])
        np.testing.assert_allclose(bank.probs, [0.5, 0.5])

    def test_rejects_bad_range(self):
        with pytest.raises(InvalidRange):
            DelayHypothesisBank(EstimatorConfig(delay_range=(5.0, 5.0)), 70.0)
        with pytest.raises(InvalidRange):
            DelayHypothesisBank(EstimatorConfig(n_filters=1), 70.0)


class TestLikelihood:
    def test_standard_normal_at_zero(self):
        assert likelihood(0.0, 1.0) == pytest.approx(1.0 / math.sqrt(2.0 * math.pi), rel=1e-12)

    def test_unit_residual(self):
        assert likelihood(1.0, 1.0) == pytest.approx(math.exp(-0.5) / math.sqrt(2.0 * math.pi), rel=1e-12)

    def test_wider_covariance_lowers_peak(self):
        assert likelihood(0.0, 2.0) < likelihood(0.0, 1.0)

    def test_rejects_nonpositive(self):
        with pytest.raises(NonPositiveCovariance):
            likelihood(0.0, 0.0)


class TestUpdateProbabilities:
    def test_equal_likelihoods_no_change(self):
        p = np.array([0.3, 0.2, 0.5])
        out = update_probabilities(p, np.array([0.7, 0.7, 0.7]))
        np.testing.assert_allclose(out, p, atol=1e-12)

    def test_direct_normalization(self):
        out = update_probabilities(np.array([0.5, 0.5]), np.array([0.2, 0.1]))
        np.testing.assert_allclose(out, [2.0 / 3.0, 1.0 / 3.0], atol=1e-9)

    def test_repeated_dominance_saturates_at_floor(self):
        p_min = 1e-6
        n = 5
        p = np.full(n, 1.0 / n)
        likes = np.array([1.0, 0.1, 0.1, 0.1, 0.1])
        prev = p[0]
        for _ in range(200):
            p = update_probabilities(p, likes, p_min)
            assert p[0] >= prev - 1e-15  # monotone growth of the dominant one
            prev = p[0]
        assert p[0] == pytest.approx(1.0 - (n - 1) * p_min, abs=1e-9)
        np.testing.assert_allclose(p[1:], p_min, atol=1e-12)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)


class TestBlend:
    def test_uniform_is_midpoint(self):
        bank = DelayHypothesisBank(EstimatorConfig(), 70.0)
        assert bank.blend_delay() == pytest.approx(50.0)

    def test_point_mass(self):
        bank = DelayHypothesisBank(EstimatorConfig(), 70.0)
        bank.probs = update_probabilities(bank.probs, np.eye(11)[3])
        assert bank.blend_delay() == pytest.approx(30.0, abs=1e-3)

    def test_hull(self):
        rng = np.random.default_rng(0)
        bank = DelayHypothesisBank(EstimatorConfig(), 70.0)
        for _ in range(20):
            p = rng.random(11)
            bank.probs = p / p.sum()
            assert 0.0 <= bank.blend_delay() <= 100.0


def _synthetic_series(delay_lag, steps, ts=5.0, seed=0):
    """Discrete first-order response with a known integer-lag input delay."""
    rng = np.random.default_rng(seed)
    k_sens, t_lag, map_b = 0.55, 150.0, 70.0
    u = np.zeros(steps)
    # piecewise-constant excitation
    for start, rate in [(10, 80.0), (60, 20.0), (110, 100.0), (160, 50.0)]:
        u[start:] = rate
    x = 0.0
    ys = [map_b]
    for k in range(steps - 1):
        u_del = u[k - delay_lag] if k - delay_lag >= 0 else 0.0
        x = (1.0 - ts / t_lag) * x + ts * k_sens / t_lag * u_del
        ys.append(x + map_b + 0.03 * rng.standard_normal())
    return u, np.array(ys)


class TestStep:
    def test_identical_hypotheses_stay_uniform(self):
        # delays all rounding to the same integer lag: indistinguishable
        cfg = EstimatorConfig(n_filters=3, delay_range=(0.1, 1.9))
        bank = DelayHypothesisBank(cfg, 70.0)
        assert len(set(bank.lags.tolist())) == 1
        for k in range(30):
            rec = bank.step(50.0 if k > 3 else 0.0, 70.0 + 0.1 * k)
            np.testing.assert_allclose(rec.probs, 1.0 / 3.0, atol=1e-12)

    def test_determinism(self):
        u, ys = _synthetic_series(delay_lag=8, steps=100)
        recs1 = run_estimation(EstimatorConfig(), u, ys)
        recs2 = run_estimation(EstimatorConfig(), u, ys)
        for r1, r2 in zip(recs1, recs2):
            assert r1.tau == r2.tau
            assert r1.k == r2.k
            np.testing.assert_array_equal(r1.probs, r2.probs)

    def test_simplex_invariant(self):
        u, ys = _synthetic_series(delay_lag=8, steps=200)
        for rec in run_estimation(EstimatorConfig(), u, ys):
            assert rec.probs.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(rec.probs >= 1e-6 - 1e-15)

    def test_delay_recovery_on_grid(self):
        # true delay = 40 s (lag 8 at Ts = 5); the 40 s hypothesis should win
        u, ys = _synthetic_series(delay_lag=8, steps=400, seed=3)
        recs = run_estimation(EstimatorConfig(), u, ys)
        tail = recs[len(recs) * 2 // 3:]
        tau_err = np.array([abs(r.tau - 40.0) for r in tail])
        assert tau_err.max() < 10.0

    def test_all_zero_likelihood_flag(self):
        bank = DelayHypothesisBank(EstimatorConfig(), 70.0)
        prior = bank.probs.copy()
        rec = bank.step(0.0, 1e9)  # absurd sample: every density underflows to 0
        assert rec.all_zero_likelihoods
        np.testing.assert_allclose(rec.probs, prior, atol=1e-12)
