"""Simulated feedback generation and the tabular ranking oracle.

``batch_feedback`` corrupts true objective values with Gaussian noise and
returns the winner (noisy argmin) or the full noisy ranking, which is how
the benchmark experiments turn function evaluations into preferences.

``TabularOracle`` serves real-data-style experiments: a table of feature
rows with ranking scores (lower is better), answering queries off the
table by a local linear model, so any point in the feature box can be
ranked.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .objectives import Objective
from .preference import Feedback

__all__ = [
    "batch_feedback",
    "TabularOracle",
    "tabular_eval",
    "load_tabular_csv",
    "objective_from_tabular",
]


def batch_feedback(
    obj: Objective,
    x: np.ndarray,
    sigma_fb: float,
    mode: str,
    rng: np.random.Generator,
) -> Feedback:
    """Feedback for one batch: noisy evaluations, then winner or ranking."""
    x = np.atleast_2d(x)
    if x.shape[0] < 2:
        raise ValueError("feedback needs a batch of at least two points")
    y = obj.eval_scaled(x) + sigma_fb * rng.standard_normal(x.shape[0])
    if mode == "winner":
        return Feedback.from_winner(int(np.argmin(y)) + 1)
    if mode == "ranking":
        return Feedback.from_ranking(tuple(int(i) + 1 for i in np.argsort(y, kind="stable")))
    raise ValueError(f"unknown feedback mode {mode!r}")


@dataclass(frozen=True)
class TabularOracle:
    """Feature rows with full-ranking scores (best = lowest)."""

    rows: np.ndarray        # (n, d)
    rank_value: np.ndarray  # (n,)

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        vals = np.asarray(self.rank_value, dtype=float)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "rank_value", vals)
        if rows.shape[0] < 2:
            raise ValueError("a tabular oracle needs at least two rows")
        if rows.shape[0] != vals.shape[0]:
            raise ValueError("rows and rank values disagree in length")
        if not (np.all(np.isfinite(rows)) and np.all(np.isfinite(vals))):
            raise ValueError("tabular data must be finite")

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def tabular_eval(t: TabularOracle, x: np.ndarray) -> float:
    """Rank value at ``x``: exact row match, else a local linear model
    fitted to the d+2 nearest rows (linear extrapolation off the table)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d2 = np.sum((t.rows - x) ** 2, axis=1)
    nearest = int(np.argmin(d2))
    if d2[nearest] == 0.0:
        return float(t.rank_value[nearest])
    k = min(t.dim + 2, t.rows.shape[0])
    idx = np.argpartition(d2, k - 1)[:k]
    design = np.hstack([np.ones((k, 1)), t.rows[idx]])
    coef, *_ = np.linalg.lstsq(design, t.rank_value[idx], rcond=None)
    return float(coef[0] + coef[1:] @ x)


def load_tabular_csv(path: str | Path) -> TabularOracle:
    """Load a ranking table: header ``f1..fd`` feature columns plus
    ``rank_value`` (real, lower is better), comma-separated UTF-8."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "rank_value" not in reader.fieldnames:
            raise ValueError(f"{path}: expected a header with a rank_value column")
        feat_cols = [c for c in reader.fieldnames if c != "rank_value"]
        expected = [f"f{i + 1}" for i in range(len(feat_cols))]
        if feat_cols != expected:
            raise ValueError(f"{path}: feature columns must be named {expected}")
        rows, vals = [], []
        for rec in reader:
            rows.append([float(rec[c]) for c in feat_cols])
            vals.append(float(rec["rank_value"]))
    return TabularOracle(np.asarray(rows), np.asarray(vals))


def objective_from_tabular(t: TabularOracle, name: str = "tabular") -> Objective:
    """Wrap a ranking table as a unit-box objective.

    Features are scaled to the unit box by their data bounds; rank values
    are scaled to [0, 1] by the table's min/max, matching the treatment of
    the synthetic benchmarks.
    """
    lo = t.rows.min(axis=0)
    hi = t.rows.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)

    def raw(x_native):
        return np.array([tabular_eval(t, row) for row in np.atleast_2d(x_native)])

    best = int(np.argmin(t.rank_value))
    return Objective(
        name=name,
        dim=t.dim,
        native_lower=lo,
        native_upper=lo + span,
        scale_lo=float(t.rank_value.min()),
        scale_hi=float(t.rank_value.max()),
        known_min_unit=(t.rows[best] - lo) / span,
        known_min_raw=float(t.rank_value.min()),
        raw_fn=raw,
    )
