import numpy as np
import pytest
from scipy.stats import binomtest, chisquare

from prefbatch.objectives import Objective, get_objective
from prefbatch.oracles import (
    TabularOracle,
    batch_feedback,
    load_tabular_csv,
    objective_from_tabular,
    tabular_eval,
)


def _shifted(obj, c):
    return Objective(
        name=obj.name,
        dim=obj.dim,
        native_lower=obj.native_lower,
        native_upper=obj.native_upper,
        scale_lo=obj.scale_lo - c * (obj.scale_hi - obj.scale_lo),
        scale_hi=obj.scale_hi - c * (obj.scale_hi - obj.scale_lo),
        known_min_unit=obj.known_min_unit,
        known_min_raw=obj.known_min_raw,
        raw_fn=obj.raw_fn,
    )


class TestBatchFeedback:
    def test_noise_free_winner(self):
        obj = get_objective("linear1d")
        x = np.array([[0.9], [0.2], [0.5]])
        fb = batch_feedback(obj, x, 0.0, "winner", np.random.default_rng(0))
        assert fb.winner == 2

    def test_noise_free_ranking(self):
        obj = get_objective("linear1d")
        x = np.array([[0.9], [0.2], [0.5]])
        fb = batch_feedback(obj, x, 0.0, "ranking", np.random.default_rng(0))
        assert fb.ranking == (2, 3, 1)

    def test_huge_noise_makes_winner_uniform(self):
        obj = get_objective("linear1d")
        x = np.array([[0.1], [0.4], [0.7], [1.0]])
        rng = np.random.default_rng(3)
        counts = np.zeros(4, dtype=int)
        trials = 5000
        for _ in range(trials):
            fb = batch_feedback(obj, x, 100.0, "winner", rng)
            counts[fb.winner - 1] += 1
        assert chisquare(counts).pvalue > 0.01

    def test_translation_invariance_bitwise(self):
        obj = get_objective("cubic1d")
        x = np.array([[0.15], [0.5], [0.85]])
        # shifting the scaled objective by a constant must not move feedback
        fb_a = batch_feedback(obj, x, 0.05, "ranking", np.random.default_rng(11))
        fb_b = batch_feedback(_shifted(obj, 0.37), x, 0.05, "ranking", np.random.default_rng(11))
        assert fb_a.ranking == fb_b.ranking

    def test_winner_concentrates_on_true_argmin(self):
        obj = get_objective("linear1d")
        x = np.array([[0.05], [0.5], [0.95]])
        rng = np.random.default_rng(7)
        wins = sum(
            batch_feedback(obj, x, 0.05, "winner", rng).winner == 1 for _ in range(10_000)
        )
        # the true argmin must win significantly more often than 1/q
        assert binomtest(wins, 10_000, 1 / 3, alternative="greater").pvalue < 1e-6


class TestTabularOracle:
    def test_exact_row_match(self):
        t = TabularOracle(np.array([[0.0], [1.0]]), np.array([3.0, 7.0]))
        assert tabular_eval(t, np.array([1.0])) == 7.0

    def test_midpoint_linearity(self):
        t = TabularOracle(np.array([[0.0], [1.0]]), np.array([0.0, 1.0]))
        assert tabular_eval(t, np.array([0.5])) == pytest.approx(0.5, abs=1e-9)

    def test_recovers_planted_linear_field(self):
        rng = np.random.default_rng(5)
        rows = rng.uniform(size=(40, 2))
        coef = np.array([0.7, -1.3])
        vals = rows @ coef + 0.25
        t = TabularOracle(rows, vals)
        for _ in range(20):
            x = rng.uniform(size=2)
            assert tabular_eval(t, x) == pytest.approx(float(x @ coef + 0.25), abs=1e-6)

    def test_csv_roundtrip(self, tmp_path):
        p = tmp_path / "table.csv"
        p.write_text(
            "f1,f2,rank_value\n0.1,0.2,3.0\n0.4,0.9,1.0\n0.8,0.3,2.0\n",
            encoding="utf-8",
        )
        t = load_tabular_csv(p)
        assert t.dim == 2
        assert tabular_eval(t, np.array([0.4, 0.9])) == 1.0

    def test_csv_schema_enforced(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,b\n1,2\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_tabular_csv(p)

    def test_objective_wrapper_scales(self):
        rng = np.random.default_rng(9)
        rows = rng.uniform(-3, 5, size=(30, 2))
        vals = rows[:, 0] * 2.0 + 1.0
        t = TabularOracle(rows, vals)
        obj = objective_from_tabular(t)
        scaled = obj.eval_scaled(np.array([(t.rows[np.argmin(vals)] - obj.native_lower)
                                           / (obj.native_upper - obj.native_lower)]))
        assert scaled[0] == pytest.approx(0.0, abs=1e-9)
