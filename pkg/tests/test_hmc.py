import numpy as np
import pytest

from prefbatch.gp import KernelParams, prior_cov
from prefbatch.hmc import HMCConfig, hmc_sample, log_target, split_rhat
from prefbatch.numerics import chol_psd
from prefbatch.preference import Feedback, PreferenceRecord

KP = KernelParams(variance=1.0, lengthscales=np.array([0.3]))


def _toy():
    x = np.array([[0.1], [0.5], [0.9]])
    k = prior_cov(x, KP)
    rec = PreferenceRecord(x, Feedback.from_winner(3))
    return x, k, [rec]


class TestLogTarget:
    def test_no_data_at_origin(self):
        k = prior_cov(np.array([[0.2], [0.8]]), KP)
        l = chol_psd(k)
        value, grad = log_target(np.zeros(2), l, [], 0.1)
        assert value == 0.0
        np.testing.assert_allclose(grad, 0.0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(size=(6, 1))
        k = prior_cov(x, KP)
        l = chol_psd(k)
        records = [
            PreferenceRecord(x[:3], Feedback.from_winner(1)),
            PreferenceRecord(x[3:], Feedback.from_winner(2)),
        ]
        eta = rng.standard_normal(6)
        _, grad = log_target(eta, l, records, 0.2)
        step = 1e-5
        for i in range(6):
            ep, em = eta.copy(), eta.copy()
            ep[i] += step
            em[i] -= step
            fd = (
                log_target(ep, l, records, 0.2)[0]
                - log_target(em, l, records, 0.2)[0]
            ) / (2 * step)
            assert grad[i] == pytest.approx(fd, rel=1e-4, abs=1e-8)

    def test_constant_shift_leaves_likelihood_unchanged(self):
        x, k, records = _toy()
        l = chol_psd(k)
        rng = np.random.default_rng(0)
        eta = rng.standard_normal(3)
        shift = np.linalg.solve(l, np.ones(3))
        c = 0.7
        eta2 = eta + c * shift
        v1, _ = log_target(eta, l, records, 0.1)
        v2, _ = log_target(eta2, l, records, 0.1)
        prior_delta = -0.5 * float(eta2 @ eta2) + 0.5 * float(eta @ eta)
        assert v2 - v1 == pytest.approx(prior_delta, abs=1e-8)

    def test_rejects_pairs_feedback(self):
        x, k, _ = _toy()
        l = chol_psd(k)
        rec = PreferenceRecord(x, Feedback.from_pairs([[1, 2]]))
        with pytest.raises(ValueError):
            log_target(np.zeros(3), l, [rec], 0.1)


class TestHmcSample:
    @pytest.mark.slow
    def test_prior_reproduction_without_data(self):
        x = np.array([[0.1], [0.4], [0.7], [1.0]])
        k = prior_cov(x, KP)
        cfg = HMCConfig(chains=6, samples_per_chain=1500, warmup=300, rng_seed=5)
        post = hmc_sample(k, [], 0.1, cfg, kernel=KP)
        assert post.samples.shape == (9000, 4)
        sd = post.samples.std(axis=0)
        np.testing.assert_allclose(sd, np.sqrt(np.diag(k)), rtol=0.05)

    def test_winner_ordering_and_diagnostics(self):
        x, k, records = _toy()
        cfg = HMCConfig(chains=4, samples_per_chain=600, warmup=400, rng_seed=1)
        post = hmc_sample(k, records, 0.1, cfg, kernel=KP)
        mean = post.samples.mean(axis=0)
        assert mean[2] < mean[0] and mean[2] < mean[1]
        assert 0.6 <= post.info["accept_rate"] <= 0.95
        assert np.all(post.info["rhat"] <= 1.05)

    def test_seed_determinism(self):
        x, k, records = _toy()
        cfg = HMCConfig(chains=2, samples_per_chain=100, warmup=100, rng_seed=3)
        a = hmc_sample(k, records, 0.1, cfg, kernel=KP)
        b = hmc_sample(k, records, 0.1, cfg, kernel=KP)
        np.testing.assert_array_equal(a.samples, b.samples)


class TestSplitRhat:
    def test_identical_chains_near_one(self):
        rng = np.random.default_rng(0)
        draws = rng.standard_normal((4, 1000, 2))
        rhat = split_rhat(draws)
        assert np.all(rhat < 1.02)

    def test_shifted_chain_detected(self):
        rng = np.random.default_rng(1)
        draws = rng.standard_normal((4, 500, 1))
        draws[0] += 5.0
        assert split_rhat(draws)[0] > 1.5
