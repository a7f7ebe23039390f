import numpy as np
import pytest

from prefbatch.acquisition import AcquisitionSpec
from prefbatch.ep import EPConfig
from prefbatch.errors import LengthMismatch
from prefbatch.hmc import HMCConfig
from prefbatch.loop import (
    PBBORunConfig,
    propose_from_records,
    random_search,
    rank_aggregate,
    run_pbbo,
)
from prefbatch.vi import VIConfig


def _fast_cfg(**overrides):
    base = dict(
        objective="cubic1d",
        q=3,
        inference="ep",
        acquisition=AcquisitionSpec(
            kind="qei", mc_samples=400, restarts=2, opt_maxiter=10
        ),
        max_batches=3,
        init_batches=1,
        seed=7,
        ep_cfg=EPConfig(max_iters=5, moment_samples=600),
    )
    base.update(overrides)
    return PBBORunConfig(**base)


class TestRunPbbo:
    def test_init_only_run_has_no_fit(self):
        cfg = _fast_cfg(max_batches=2, init_batches=2)
        trace = run_pbbo(cfg)
        assert len(trace.rows) == 2
        assert trace.errors == []

    def test_best_so_far_non_increasing(self):
        for seed in range(3):
            trace = run_pbbo(_fast_cfg(seed=seed))
            assert np.all(np.diff(trace.best_curve()) <= 1e-15)

    def test_budget_accounting(self):
        cfg = _fast_cfg(max_batches=3, q=3)
        trace = run_pbbo(cfg)
        assert trace.visited().shape == (9, 1)

    def test_determinism(self):
        a = run_pbbo(_fast_cfg(seed=11))
        b = run_pbbo(_fast_cfg(seed=11))
        np.testing.assert_array_equal(a.visited(), b.visited())
        np.testing.assert_array_equal(a.best_curve(), b.best_curve())

    def test_acquired_batches_respect_min_distance(self):
        cfg = _fast_cfg(max_batches=3, q=3)
        trace = run_pbbo(cfg)
        for row in trace.rows:
            d = np.abs(row.x[:, None, 0] - row.x[None, :, 0])
            d[np.diag_indices(3)] = np.inf
            assert d.min() >= 0.05 - 1e-9

    def test_replay_matches_run(self):
        cfg = _fast_cfg(max_batches=3)
        trace = run_pbbo(cfg)
        records = []
        from prefbatch.preference import PreferenceRecord

        for i, row in enumerate(trace.rows):
            x = propose_from_records(cfg, records, i)
            np.testing.assert_array_equal(x, row.x)
            records.append(PreferenceRecord(row.x, row.feedback))

    def test_vi_backend_smoke(self):
        cfg = _fast_cfg(
            inference="vi", q=2, max_batches=2, vi_cfg=VIConfig(iters=15)
        )
        trace = run_pbbo(cfg)
        assert len(trace.rows) == 2

    def test_hmc_backend_with_ts_smoke(self):
        cfg = _fast_cfg(
            inference="hmc",
            q=2,
            max_batches=2,
            acquisition=AcquisitionSpec(
                kind="ts", ts_candidate_grid=25, ts_refine_steps=3
            ),
            hmc_cfg=HMCConfig(chains=2, samples_per_chain=150, warmup=150),
        )
        trace = run_pbbo(cfg)
        assert len(trace.rows) == 2

    def test_vi_rejects_ranking_mode(self):
        with pytest.raises(ValueError):
            _fast_cfg(inference="vi", feedback_mode="ranking")

    def test_q_bounds_enforced(self):
        with pytest.raises(ValueError):
            _fast_cfg(q=1)
        with pytest.raises(ValueError):
            _fast_cfg(q=7)


class TestRandomSearch:
    def test_deterministic(self):
        cfg = _fast_cfg(max_batches=4)
        a = random_search(cfg)
        b = random_search(cfg)
        np.testing.assert_array_equal(a.visited(), b.visited())

    def test_equal_point_budgets(self):
        t1 = random_search(_fast_cfg(q=2, max_batches=6))
        t2 = random_search(_fast_cfg(q=3, max_batches=4))
        assert t1.visited().shape[0] == t2.visited().shape[0] == 12

    @pytest.mark.slow
    def test_order_statistics_oracle(self):
        # on the identity objective, visited values are iid U[0,1]; the
        # expected running minimum after k points is 1/(k+1)
        q, batches, n_seeds = 2, 3, 10_000
        sums = np.zeros(batches)
        for seed in range(n_seeds):
            cfg = _fast_cfg(
                objective="linear1d", q=q, max_batches=batches, seed=seed
            )
            sums += random_search(cfg).best_curve()
        means = sums / n_seeds
        for b in range(batches):
            k = (b + 1) * q
            expect = 1.0 / (k + 1)
            sd = np.sqrt(k / ((k + 1) ** 2 * (k + 2)))
            assert abs(means[b] - expect) <= 3 * sd / np.sqrt(n_seeds)


class TestRankAggregate:
    def test_dominant_method(self):
        results = {
            "f1": {"a": np.array([0.5, 0.3]), "b": np.array([0.8, 0.6])},
            "f2": {"a": np.array([0.4, 0.2]), "b": np.array([0.9, 0.7])},
        }
        ranks = rank_aggregate(results)
        np.testing.assert_array_equal(ranks["a"], [1.0, 1.0])
        np.testing.assert_array_equal(ranks["b"], [2.0, 2.0])

    def test_ties_average(self):
        results = {"f": {"a": np.array([0.5]), "b": np.array([0.5])}}
        ranks = rank_aggregate(results)
        assert ranks["a"][0] == ranks["b"][0] == 1.5

    def test_crossing_fixture(self):
        results = {
            "f": {
                "a": np.array([0.9, 0.5, 0.1]),
                "b": np.array([0.5, 0.5, 0.5]),
                "c": np.array([0.1, 0.5, 0.9]),
            }
        }
        ranks = rank_aggregate(results)
        np.testing.assert_array_equal(ranks["a"], [3.0, 2.0, 1.0])
        np.testing.assert_array_equal(ranks["b"], [2.0, 2.0, 2.0])
        np.testing.assert_array_equal(ranks["c"], [1.0, 2.0, 3.0])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            rank_aggregate({"f": {"a": np.array([1.0]), "b": np.array([1.0, 2.0])}})
