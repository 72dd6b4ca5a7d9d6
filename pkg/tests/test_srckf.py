import numpy as np
import pytest

from maplab.srckf import (
    AugmentedMapModel,
    DegenerateLag,
    GaussianSqrtBelief,
    cubature_points,
    default_initial_belief,
    map_measurement,
    map_process,
    measurement_update,
    time_update,
)


class TestCubaturePoints:
    def test_n1(self):
        rule = cubature_points(1)
        np.testing.assert_allclose(sorted(rule.points[:, 0]), [-1.0, 1.0])
        np.testing.assert_allclose(rule.weights, [0.5, 0.5])

    def test_n2(self):
        rule = cubature_points(2)
        assert rule.points.shape == (4, 2)
        np.testing.assert_allclose(np.linalg.norm(rule.points, axis=1), np.sqrt(2.0))
        np.testing.assert_allclose(rule.weights, 0.25)

    @pytest.mark.parametrize("n", [1, 2, 4, 7])
    def test_gaussian_moments(self, n):
        rule = cubature_points(n)
        assert rule.weights.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(rule.weights @ rule.points, np.zeros(n), atol=1e-14)
        second = np.einsum("k,ki,kj->ij", rule.weights, rule.points, rule.points)
        np.testing.assert_allclose(second, np.eye(n), atol=1e-14)


class TestMapModel:
    def test_process_hand_value(self):
        # (1 - 5/150)*10 + (5*0.55/150)*100 = 29/3 + 11/6 = 11.5
        x = np.array([10.0, 0.55, 150.0, 70.0])
        out = map_process(x, 100.0, 5.0)
        assert out[0] == pytest.approx(11.5, abs=1e-12)
        np.testing.assert_allclose(out[1:], x[1:])

    def test_process_zero(self):
        out = map_process(np.array([0.0, 0.5, 100.0, 70.0]), 0.0, 5.0)
        assert out[0] == 0.0

    def test_process_large_lag_limit(self):
        x = np.array([3.0, 0.5, 1e12, 70.0])
        out = map_process(x, 10.0, 5.0)
        assert out[0] == pytest.approx(3.0, abs=1e-9)

    def test_process_degenerate_lag(self):
        with pytest.raises(DegenerateLag):
            map_process(np.array([1.0, 0.5, 4.0, 70.0]), 0.0, 5.0)

    def test_process_clamped_lag(self):
        out = map_process(np.array([1.0, 0.5, -3.0, 70.0]), 0.0, 5.0, clamp_lag=True)
        # lag floored at 2*Ts = 10
        assert out[0] == pytest.approx((1.0 - 0.5) * 1.0)

    def test_measurement(self):
        assert map_measurement(np.array([10.0, 1.0, 2.0, 70.0]))[0] == pytest.approx(80.0)
        assert map_measurement(np.array([0.0, 1.0, 2.0, 0.0]))[0] == pytest.approx(0.0)

    def test_measurement_gradient(self):
        # linear map, gradient [1, 0, 0, 1]
        base = map_measurement(np.zeros(4))[0]
        grads = [map_measurement(np.eye(4)[i])[0] - base for i in range(4)]
        np.testing.assert_allclose(grads, [1.0, 0.0, 0.0, 1.0])


def _random_belief(rng, n=4, scale=1.0):
    l = np.tril(rng.normal(size=(n, n)))
    l[np.diag_indices(n)] = np.abs(l[np.diag_indices(n)]) + 0.5
    return GaussianSqrtBelief(mean=rng.normal(size=n), sqrt_cov=scale * l)


class TestTimeUpdate:
    def test_affine_process_exact_mean(self):
        rng = np.random.default_rng(0)
        belief = _random_belief(rng)
        a = rng.normal(size=(4, 4))
        b = rng.normal(size=4)
        out = time_update(belief, lambda x, u: x @ a.T + b, 0.0, np.zeros((4, 4)))
        np.testing.assert_allclose(out.mean, a @ belief.mean + b, atol=1e-10)

    def test_identity_process_zero_noise(self):
        rng = np.random.default_rng(1)
        belief = _random_belief(rng)
        out = time_update(belief, lambda x, u: x, 0.0, np.zeros((4, 4)))
        np.testing.assert_allclose(out.mean, belief.mean, atol=1e-12)
        np.testing.assert_allclose(out.covariance(), belief.covariance(), atol=1e-12)

    def test_identity_process_unit_noise(self):
        rng = np.random.default_rng(2)
        belief = _random_belief(rng)
        out = time_update(belief, lambda x, u: x, 0.0, np.eye(4))
        np.testing.assert_allclose(out.covariance(), belief.covariance() + np.eye(4), atol=1e-9)


class TestMeasurementUpdate:
    def test_zero_residual_keeps_mean(self):
        rng = np.random.default_rng(3)
        belief = _random_belief(rng)
        h = np.array([[1.0, 0.0, 0.0, 1.0]])
        yhat = h @ belief.mean
        out, res, _ = measurement_update(belief, lambda x: x @ h.T, yhat, np.array([[1.0]]))
        np.testing.assert_allclose(res, 0.0, atol=1e-12)
        np.testing.assert_allclose(out.mean, belief.mean, atol=1e-10)

    def test_huge_noise_keeps_prediction(self):
        rng = np.random.default_rng(4)
        belief = _random_belief(rng)
        h = np.array([[1.0, 0.0, 0.0, 1.0]])
        out, _, _ = measurement_update(belief, lambda x: x @ h.T, 123.0, np.array([[1e6]]))
        np.testing.assert_allclose(out.mean, belief.mean, atol=1e-4)
        np.testing.assert_allclose(out.covariance(), belief.covariance(), atol=1e-4)

    def test_matches_classical_kalman_scalar(self):
        # scalar linear-Gaussian: closed-form Kalman update as the oracle
        belief = GaussianSqrtBelief(mean=np.array([2.0]), sqrt_cov=np.array([[3.0]]))
        h = np.array([[1.5]])
        r = 0.49
        y = 7.0
        p = 9.0
        s = h[0, 0] * p * h[0, 0] + r
        k = p * h[0, 0] / s
        mean_oracle = 2.0 + k * (y - 1.5 * 2.0)
        p_oracle = (1.0 - k * h[0, 0]) * p
        out, _, syy = measurement_update(belief, lambda x: x @ h.T, y, np.array([[0.7]]))
        assert out.mean[0] == pytest.approx(mean_oracle, abs=1e-9)
        assert out.covariance()[0, 0] == pytest.approx(p_oracle, abs=1e-9)
        assert (syy @ syy.T)[0, 0] == pytest.approx(s, abs=1e-9)


def _kalman_filter_oracle(a, c, q, r, x0, p0, us, ys, b):
    """Textbook covariance-form Kalman filter for x+ = a x + b u, y = c x."""
    x, p = x0.copy(), p0.copy()
    means, covs = [], []
    for u, y in zip(us, ys):
        x = a @ x + b * u
        p = a @ p @ a.T + q
        s = c @ p @ c.T + r
        k = p @ c.T @ np.linalg.inv(s)
        x = x + (k @ (y - c @ x).reshape(-1, 1)).ravel()
        p = p - k @ s @ k.T
        means.append(x.copy())
        covs.append(p.copy())
    return np.array(means), np.array(covs)


class TestLinearGaussianEquivalence:
    def test_full_pass_matches_kalman(self):
        """Cubature rule is exact for affine dynamics: SRCKF == KF."""
        rng = np.random.default_rng(5)
        a = np.array([[0.9, 0.2], [-0.1, 0.95]])
        b = np.array([0.1, 0.05])
        c = np.array([[1.0, 0.5]])
        q = np.diag([0.02, 0.01])
        r = np.array([[0.25]])
        sq = np.linalg.cholesky(q)
        sr = np.linalg.cholesky(r)
        x0 = np.array([1.0, -1.0])
        p0 = np.diag([2.0, 1.0])

        steps = 100
        us = rng.normal(size=steps)
        ys = rng.normal(size=steps) * 2.0

        belief = GaussianSqrtBelief(mean=x0, sqrt_cov=np.linalg.cholesky(p0))
        kf_means, kf_covs = _kalman_filter_oracle(a, c, q, r, x0, p0, us, ys, b)
        for i in range(steps):
            belief = time_update(belief, lambda x, u: x @ a.T + b * u, us[i], sq)
            belief, _, _ = measurement_update(belief, lambda x: x @ c.T, ys[i], sr)
            np.testing.assert_allclose(belief.mean, kf_means[i], atol=1e-8)
            np.testing.assert_allclose(belief.covariance(), kf_covs[i], atol=1e-8)


class TestBatched:
    def test_batch_matches_loop(self):
        """Stacked beliefs produce the same results as per-filter updates."""
        rng = np.random.default_rng(6)
        model = AugmentedMapModel(ts=5.0, delay_lag=0, sqrt_q=np.diag([0.5, 0.01, 1.0, 0.05]),
                                  sqrt_r=np.array([[1.0]]))
        singles = [default_initial_belief(70.0 + i) for i in range(3)]
        batch = GaussianSqrtBelief(mean=np.stack([b.mean for b in singles]),
                                   sqrt_cov=np.stack([b.sqrt_cov for b in singles]))
        us = np.array([10.0, 20.0, 30.0])
        y = 75.0
        batch_pred = time_update(batch, model.process, us, model.sqrt_q)
        batch_corr, batch_res, batch_syy = measurement_update(batch_pred, model.measurement, y, model.sqrt_r)
        for i, single in enumerate(singles):
            pred = time_update(single, model.process, us[i], model.sqrt_q)
            corr, res, syy = measurement_update(pred, model.measurement, y, model.sqrt_r)
            np.testing.assert_allclose(batch_pred.mean[i], pred.mean, atol=1e-12)
            np.testing.assert_allclose(batch_corr.mean[i], corr.mean, atol=1e-12)
            np.testing.assert_allclose(batch_corr.sqrt_cov[i], corr.sqrt_cov, atol=1e-12)
            np.testing.assert_allclose(batch_res[i], res, atol=1e-12)
            np.testing.assert_allclose(batch_syy[i], syy, atol=1e-12)
