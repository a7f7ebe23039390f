"""Experiment execution and report aggregation.

``execute_manifest`` runs every manifest entry (optionally across a
process pool), writes one JSON-Lines trace per run, and assembles the
versioned summary CSV. Rows are sorted by (run_id, iter) and floats are
written in shortest round-trip form, so reruns with identical seeds are
byte-identical regardless of worker count.

``summarize``/``compute_ranks`` turn a summary CSV into mean +- standard
error curves per method and mean-rank tables across objectives.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .loop import rank_aggregate, random_search, run_pbbo
from .manifest import ExperimentManifest, RunSpec

__all__ = [
    "SUMMARY_SCHEMA",
    "SUMMARY_COLUMNS",
    "execute_manifest",
    "read_summary",
    "summarize",
    "compute_ranks",
]

SUMMARY_SCHEMA = "prefbatch-summary-v1"
SUMMARY_COLUMNS = [
    "run_id",
    "objective",
    "inference",
    "acquisition",
    "q",
    "seed",
    "iter",
    "best_so_far",
]


def _atomic_write(path: Path, text: str):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _execute_one(spec: RunSpec, trace_dir: str) -> list[dict]:
    if spec.inference == "random":
        trace = random_search(spec.build_config())
    else:
        trace = run_pbbo(spec.build_config())
    trace.write_jsonl(Path(trace_dir) / f"{spec.run_id}.jsonl")
    return [
        {
            "run_id": spec.run_id,
            "objective": spec.objective_label,
            "inference": spec.inference,
            "acquisition": spec.acquisition_label,
            "q": spec.q,
            "seed": spec.seed,
            "iter": row.iteration,
            "best_so_far": row.best_so_far,
        }
        for row in trace.rows
    ]


def execute_manifest(
    manifest: ExperimentManifest, out_dir: str | Path, workers: int = 1
) -> Path:
    """Run everything; returns the summary CSV path."""
    out_dir = Path(out_dir)
    trace_dir = out_dir / "traces"
    trace_dir.mkdir(parents=True, exist_ok=True)

    rows: list[dict] = []
    if workers > 1 and len(manifest.runs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_execute_one, spec, str(trace_dir))
                for spec in manifest.runs
            ]
            for fut in futures:
                rows.extend(fut.result())
    else:
        for spec in manifest.runs:
            rows.extend(_execute_one(spec, str(trace_dir)))

    rows.sort(key=lambda r: (r["run_id"], r["iter"]))
    buf = io.StringIO()
    buf.write(f"# schema={SUMMARY_SCHEMA}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for r in rows:
        writer.writerow(
            [
                r["run_id"],
                r["objective"],
                r["inference"],
                r["acquisition"],
                r["q"],
                r["seed"],
                r["iter"],
                repr(float(r["best_so_far"])),
            ]
        )
    summary_path = out_dir / "summary.csv"
    _atomic_write(summary_path, buf.getvalue())
    return summary_path


def read_summary(path: str | Path) -> list[dict]:
    """Parse and validate a summary CSV (schema tag + column set)."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        first = fh.readline().strip()
        if first != f"# schema={SUMMARY_SCHEMA}":
            raise ValueError(f"{path}: missing or wrong schema tag {first!r}")
        reader = csv.DictReader(fh)
        if reader.fieldnames != SUMMARY_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = []
        for rec in reader:
            rows.append(
                {
                    "run_id": rec["run_id"],
                    "objective": rec["objective"],
                    "inference": rec["inference"],
                    "acquisition": rec["acquisition"],
                    "q": int(rec["q"]),
                    "seed": int(rec["seed"]),
                    "iter": int(rec["iter"]),
                    "best_so_far": float(rec["best_so_far"]),
                }
            )
    if not rows:
        return rows
    return rows


@dataclass(frozen=True)
class CurvePoint:
    objective: str
    inference: str
    acquisition: str
    q: int
    iteration: int
    mean: float
    se: float
    n_seeds: int

    @property
    def evaluations(self) -> int:
        return (self.iteration + 1) * self.q

    @property
    def method(self) -> str:
        return f"{self.inference}+{self.acquisition}"


def summarize(rows: list[dict]) -> list[CurvePoint]:
    """Mean and standard error of best-so-far per method and iteration."""
    groups: dict[tuple, dict[int, list[float]]] = {}
    for r in rows:
        key = (r["objective"], r["inference"], r["acquisition"], r["q"])
        groups.setdefault(key, {}).setdefault(r["iter"], []).append(r["best_so_far"])
    points = []
    for (obj, inf, acq, q), iters in sorted(groups.items()):
        for it, vals in sorted(iters.items()):
            arr = np.asarray(vals)
            se = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
            points.append(
                CurvePoint(obj, inf, acq, q, it, float(arr.mean()), se, len(arr))
            )
    return points


def compute_ranks(points: list[CurvePoint]) -> dict[int, dict[str, np.ndarray]]:
    """Mean rank curves per batch size, aggregated across objectives."""
    by_q: dict[int, dict[str, dict[str, list[CurvePoint]]]] = {}
    for p in points:
        by_q.setdefault(p.q, {}).setdefault(p.objective, {}).setdefault(
            p.method, []
        ).append(p)
    out: dict[int, dict[str, np.ndarray]] = {}
    for q, per_obj in by_q.items():
        results = {}
        for obj, methods in per_obj.items():
            results[obj] = {
                m: np.array([p.mean for p in sorted(ps, key=lambda p: p.iteration)])
                for m, ps in methods.items()
            }
        out[q] = rank_aggregate(results)
    return out


def write_curves_csv(points: list[CurvePoint], path: Path):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["objective", "inference", "acquisition", "q", "iter", "evaluations",
         "mean_best", "se_best", "n_seeds"]
    )
    for p in points:
        writer.writerow(
            [p.objective, p.inference, p.acquisition, p.q, p.iteration,
             p.evaluations, repr(p.mean), repr(p.se), p.n_seeds]
        )
    _atomic_write(path, buf.getvalue())


def write_ranks_csv(ranks: dict[int, dict[str, np.ndarray]], path: Path):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["q", "method", "iter", "evaluations", "mean_rank"])
    for q in sorted(ranks):
        for method in sorted(ranks[q]):
            for it, val in enumerate(ranks[q][method]):
                writer.writerow([q, method, it, (it + 1) * q, repr(float(val))])
    _atomic_write(path, buf.getvalue())
