"""The sequential preferential-batch optimization driver.

One run alternates: fit the chosen inference backend on all preference
records, maximize the batch acquisition, query the oracle for feedback on
the proposed batch, and append the record; it stops after the configured
number of batches. All randomness descends from a single seed through a
fixed spawn tree (init / per-iteration fit / acquisition / feedback), so a
run is reproducible end to end and the interactive service can replay its
proposals exactly.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .acquisition import (
    AcquisitionSpec,
    SearchDomain,
    enforce_min_dist,
    make_value_fn,
    optimize_acquisition,
    ts_batch,
)
from .ep import EPConfig, ep_fit
from .errors import LengthMismatch
from .gp import KernelParams, prior_cov
from .hmc import HMCConfig, hmc_sample
from .objectives import Objective, default_kernel, get_objective
from .oracles import batch_feedback
from .preference import Feedback, PreferenceRecord
from .vi import VIConfig, vi_fit

__all__ = [
    "PBBORunConfig",
    "Trace",
    "TraceRow",
    "run_pbbo",
    "random_search",
    "rank_aggregate",
]

INFERENCE_BACKENDS = ("ep", "vi", "hmc")


@dataclass(frozen=True)
class PBBORunConfig:
    objective: str | Objective | None
    q: int
    inference: str
    acquisition: AcquisitionSpec
    max_batches: int
    init_batches: int = 1
    seed: int = 0
    feedback_mode: str = "winner"
    sigma_fb: float = 0.05
    noise_sd: float = 0.05
    kernel: KernelParams | None = None
    ep_cfg: EPConfig = EPConfig()
    vi_cfg: VIConfig = VIConfig()
    hmc_cfg: HMCConfig = HMCConfig(chains=4, samples_per_chain=500, warmup=300)

    def __post_init__(self):
        if not 2 <= self.q <= 6:
            raise ValueError("batch size must lie in 2..6")
        if self.max_batches < 1:
            raise ValueError("max_batches must be at least 1")
        if self.init_batches < 1 or self.init_batches > self.max_batches:
            raise ValueError("init_batches must lie in 1..max_batches")
        if self.inference not in INFERENCE_BACKENDS:
            raise ValueError(f"inference must be one of {INFERENCE_BACKENDS}")
        if self.feedback_mode not in ("winner", "ranking"):
            raise ValueError("feedback_mode must be 'winner' or 'ranking'")
        if self.inference in ("vi", "hmc") and self.feedback_mode != "winner":
            raise ValueError(f"{self.inference} inference requires winner feedback")

    def resolve_objective(self) -> Objective:
        if self.objective is None:
            raise ValueError("this config has no objective (interactive session?)")
        if isinstance(self.objective, Objective):
            return self.objective
        return get_objective(self.objective)

    def resolve_kernel(self) -> KernelParams:
        if self.kernel is not None:
            return self.kernel
        if self.objective is None:
            raise ValueError("a config without an objective needs an explicit kernel")
        name = self.objective if isinstance(self.objective, str) else self.objective.name
        return default_kernel(name)[0]


@dataclass
class TraceRow:
    iteration: int
    x: np.ndarray
    feedback: Feedback
    best_so_far: float
    wall_ms: float

    def to_dict(self) -> dict:
        return {
            "iter": self.iteration,
            "X": self.x.tolist(),
            "feedback": self.feedback.to_dict(),
            "best_so_far": self.best_so_far,
            "wall_ms": self.wall_ms,
        }


@dataclass
class Trace:
    rows: list[TraceRow] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    def best_curve(self) -> np.ndarray:
        return np.array([r.best_so_far for r in self.rows])

    def visited(self) -> np.ndarray:
        return np.vstack([r.x for r in self.rows])

    def write_jsonl(self, path: str | Path):
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with tmp.open("w", encoding="utf-8") as fh:
            for row in self.rows:
                fh.write(json.dumps(row.to_dict()) + "\n")
        tmp.replace(path)


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1)[0])


def _iteration_keys(cfg: PBBORunConfig):
    """Fixed spawn tree: child 0 drives initialization, child 1+i drives
    iteration i (fit / acquisition / feedback / one retry)."""
    root = np.random.SeedSequence(cfg.seed)
    return root.spawn(1 + cfg.max_batches)


def sample_initial_batch(
    domain: SearchDomain, q: int, min_dist: float, rng: np.random.Generator
) -> np.ndarray:
    x = domain.sample(rng, q)
    if min_dist > 0:
        x = enforce_min_dist(x, domain, min_dist, rng)
    return x


def fit_posterior(cfg: PBBORunConfig, records: list[PreferenceRecord], fit_seed: int):
    kernel = cfg.resolve_kernel()
    x_all = np.vstack([r.x for r in records])
    k = prior_cov(x_all, kernel)
    if cfg.inference == "ep":
        return ep_fit(k, records, cfg.noise_sd, replace(cfg.ep_cfg, rng_seed=fit_seed), kernel=kernel)
    if cfg.inference == "vi":
        return vi_fit(k, records, cfg.noise_sd, replace(cfg.vi_cfg, rng_seed=fit_seed), kernel=kernel)
    return hmc_sample(k, records, cfg.noise_sd, replace(cfg.hmc_cfg, rng_seed=fit_seed), kernel=kernel)


def propose_batch(
    cfg: PBBORunConfig, posterior, domain: SearchDomain, acq_rng: np.random.Generator
) -> np.ndarray:
    spec = cfg.acquisition
    if spec.kind == "ts":
        return ts_batch(posterior, domain, cfg.q, spec, acq_rng)
    value_fn = make_value_fn(posterior, spec, acq_rng)
    return optimize_acquisition(value_fn, domain, cfg.q, spec, acq_rng)


def propose_from_records(
    cfg: PBBORunConfig,
    records: list[PreferenceRecord],
    iteration: int,
    domain: SearchDomain | None = None,
) -> np.ndarray:
    """Batch the run would propose at ``iteration`` given these records.

    Iterations below ``init_batches`` are random; later ones fit and
    maximize the acquisition. Pure given the config seed, which is what
    makes session replay exact.
    """
    if domain is None:
        domain = cfg.resolve_objective().domain
    keys = _iteration_keys(cfg)
    if iteration < cfg.init_batches:
        init_streams = keys[0].spawn(2 * cfg.init_batches)
        rng = np.random.default_rng(init_streams[2 * iteration])
        return sample_initial_batch(domain, cfg.q, cfg.acquisition.min_within_batch_dist, rng)
    sub = keys[1 + iteration].spawn(4)
    posterior = fit_posterior(cfg, records, _seed_int(sub[0]))
    return propose_batch(cfg, posterior, domain, np.random.default_rng(sub[1]))


def _true_values(obj: Objective, x: np.ndarray) -> np.ndarray:
    return obj.eval_scaled(x)


def run_pbbo(cfg: PBBORunConfig) -> Trace:
    """Run the full sequential loop against the configured oracle."""
    obj = cfg.resolve_objective()
    domain = obj.domain
    keys = _iteration_keys(cfg)
    init_streams = keys[0].spawn(2 * cfg.init_batches)

    trace = Trace()
    records: list[PreferenceRecord] = []
    best = np.inf

    def record_batch(i, x, fb_rng, t0):
        nonlocal best
        fb = batch_feedback(obj, x, cfg.sigma_fb, cfg.feedback_mode, fb_rng)
        records.append(PreferenceRecord(x, fb))
        best = min(best, float(_true_values(obj, x).min()))
        trace.rows.append(
            TraceRow(i, x, fb, best, (time.perf_counter() - t0) * 1e3)
        )

    for i in range(cfg.init_batches):
        t0 = time.perf_counter()
        rng = np.random.default_rng(init_streams[2 * i])
        x = sample_initial_batch(domain, cfg.q, cfg.acquisition.min_within_batch_dist, rng)
        record_batch(i, x, np.random.default_rng(init_streams[2 * i + 1]), t0)

    for i in range(cfg.init_batches, cfg.max_batches):
        t0 = time.perf_counter()
        sub = keys[1 + i].spawn(4)
        try:
            posterior = fit_posterior(cfg, records, _seed_int(sub[0]))
            x = propose_batch(cfg, posterior, domain, np.random.default_rng(sub[1]))
        except Exception as exc:  # one retry with a fresh seed, then abort
            trace.errors.append(f"iteration {i}: {exc!r}")
            retry = sub[3].spawn(2)
            posterior = fit_posterior(cfg, records, _seed_int(retry[0]))
            x = propose_batch(cfg, posterior, domain, np.random.default_rng(retry[1]))
        record_batch(i, x, np.random.default_rng(sub[2]), t0)
    return trace


def random_search(cfg: PBBORunConfig) -> Trace:
    """Baseline: every batch uniform on the domain, same metric pipeline.

    Batches are plain uniform draws (no separation repair) so the visited
    values keep their textbook order statistics.
    """
    obj = cfg.resolve_objective()
    domain = obj.domain
    keys = _iteration_keys(cfg)
    init_streams = keys[0].spawn(2 * cfg.init_batches)

    trace = Trace()
    best = np.inf
    for i in range(cfg.max_batches):
        t0 = time.perf_counter()
        if i < cfg.init_batches:
            draw_rng = np.random.default_rng(init_streams[2 * i])
            fb_rng = np.random.default_rng(init_streams[2 * i + 1])
        else:
            sub = keys[1 + i].spawn(4)
            draw_rng = np.random.default_rng(sub[1])
            fb_rng = np.random.default_rng(sub[2])
        x = domain.sample(draw_rng, cfg.q)
        fb = batch_feedback(obj, x, cfg.sigma_fb, cfg.feedback_mode, fb_rng)
        best = min(best, float(_true_values(obj, x).min()))
        trace.rows.append(TraceRow(i, x, fb, best, (time.perf_counter() - t0) * 1e3))
    return trace


def rank_aggregate(results: dict[str, dict[str, np.ndarray]]) -> dict[str, np.ndarray]:
    """Mean rank per method across objectives at each evaluation count.

    ``results[objective][method]`` holds equal-length mean best-so-far
    curves; methods are ranked ascending per objective and iteration
    (ties get average ranks) and ranks are averaged over objectives.
    """
    if not results:
        return {}
    methods = None
    length = None
    for obj_name, curves in results.items():
        names = sorted(curves)
        if methods is None:
            methods = names
        elif names != methods:
            raise LengthMismatch(f"method sets differ across objectives ({obj_name})")
        for m, curve in curves.items():
            if length is None:
                length = len(curve)
            elif len(curve) != length:
                raise LengthMismatch(f"curve length mismatch for {m} on {obj_name}")
    acc = {m: np.zeros(length) for m in methods}
    for curves in results.values():
        mat = np.vstack([np.asarray(curves[m], dtype=float) for m in methods])
        for t in range(length):
            ranks = rankdata(mat[:, t], method="average")
            for mi, m in enumerate(methods):
                acc[m][t] += ranks[mi]
    n_obj = len(results)
    return {m: acc[m] / n_obj for m in methods}
