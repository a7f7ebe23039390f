"""Experiment manifest: a strict JSON description of a set of runs.

Unknown keys are rejected everywhere so a manifest that parses today
reproduces byte-identically tomorrow. Each run is either a PBBO run
(inference "ep" / "vi" / "hmc") or the random-search baseline
(inference "random").
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .acquisition import AcquisitionSpec
from .ep import EPConfig
from .gp import KernelParams
from .hmc import HMCConfig
from .loop import PBBORunConfig
from .objectives import objective_names
from .oracles import load_tabular_csv, objective_from_tabular
from .vi import VIConfig

__all__ = ["ExperimentManifest", "RunSpec", "load_manifest", "parse_manifest"]

MANIFEST_VERSION = 1

_RUN_KEYS = {
    "id",
    "objective",
    "objective_csv",
    "inference",
    "acquisition",
    "q",
    "batches",
    "init_batches",
    "seed",
    "feedback",
    "sigma_fb",
    "noise_sd",
    "kernel",
    "ep",
    "vi",
    "hmc",
}
_ACQ_KEYS = {
    "kind",
    "mc_samples",
    "restarts",
    "min_within_batch_dist",
    "ts_candidate_grid",
    "numeric_grad_step",
    "ts_refine_steps",
    "ts_nearest",
    "opt_maxiter",
}
_EP_KEYS = {"max_iters", "damping", "moment_samples", "convergence_tol"}
_VI_KEYS = {"iters", "step_size", "optimizer", "quad_order"}
_HMC_KEYS = {"chains", "samples_per_chain", "warmup", "leapfrog_steps", "target_accept"}
_KERNEL_KEYS = {"variance", "lengthscales"}
_TOP_KEYS = {"version", "runs", "allow_repeated_seeds"}


class ManifestError(ValueError):
    """Malformed experiment manifest."""


def _check_keys(d: dict, allowed: set, where: str):
    unknown = set(d) - allowed
    if unknown:
        raise ManifestError(f"unknown keys {sorted(unknown)} in {where}")


@dataclass(frozen=True)
class RunSpec:
    """One validated run: raw dict plus the constructed config factory."""

    run_id: str
    objective_label: str
    inference: str
    acquisition_label: str
    q: int
    seed: int
    raw: dict

    def build_config(self) -> PBBORunConfig:
        return _build_config(self.raw)


@dataclass(frozen=True)
class ExperimentManifest:
    runs: list[RunSpec]

    def override_seeds(self, seed: int) -> "ExperimentManifest":
        runs = []
        for r in self.runs:
            raw = dict(r.raw)
            raw["seed"] = seed
            runs.append(
                RunSpec(r.run_id, r.objective_label, r.inference, r.acquisition_label,
                        r.q, seed, raw)
            )
        return ExperimentManifest(runs)


def _build_config(raw: dict) -> PBBORunConfig:
    acq_raw = dict(raw.get("acquisition", {}))
    acq = AcquisitionSpec(**acq_raw) if acq_raw else AcquisitionSpec()
    objective = raw["objective"]
    kernel = None
    if "kernel" in raw:
        kernel = KernelParams(
            variance=float(raw["kernel"]["variance"]),
            lengthscales=np.asarray(raw["kernel"]["lengthscales"], dtype=float),
        )
    if "objective_csv" in raw:
        objective = objective_from_tabular(
            load_tabular_csv(raw["objective_csv"]), name=raw["objective"]
        )
    inference = raw["inference"]
    kwargs = dict(
        objective=objective,
        q=int(raw["q"]),
        inference=inference if inference != "random" else "ep",
        acquisition=acq,
        max_batches=int(raw["batches"]),
        init_batches=int(raw.get("init_batches", 1)),
        seed=int(raw["seed"]),
        feedback_mode=raw.get("feedback", "winner"),
        sigma_fb=float(raw.get("sigma_fb", 0.05)),
        noise_sd=float(raw.get("noise_sd", 0.05)),
        kernel=kernel,
    )
    if "ep" in raw:
        kwargs["ep_cfg"] = EPConfig(**raw["ep"])
    if "vi" in raw:
        kwargs["vi_cfg"] = VIConfig(**raw["vi"])
    if "hmc" in raw:
        kwargs["hmc_cfg"] = HMCConfig(**raw["hmc"])
    return PBBORunConfig(**kwargs)


def parse_manifest(doc: dict, base_dir: Path | None = None) -> ExperimentManifest:
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a JSON object")
    _check_keys(doc, _TOP_KEYS, "manifest")
    if doc.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"manifest version must be {MANIFEST_VERSION}")
    runs_raw = doc.get("runs")
    if not isinstance(runs_raw, list):
        raise ManifestError("manifest needs a 'runs' list")
    allow_repeats = bool(doc.get("allow_repeated_seeds", False))

    runs: list[RunSpec] = []
    ids = set()
    group_seeds: dict[tuple, set] = {}
    for i, raw in enumerate(runs_raw):
        where = f"runs[{i}]"
        if not isinstance(raw, dict):
            raise ManifestError(f"{where} must be an object")
        _check_keys(raw, _RUN_KEYS, where)
        missing = {"id", "objective", "inference", "q", "batches", "seed"} - set(raw)
        if missing:
            raise ManifestError(f"{where} is missing keys {sorted(missing)}")
        for sub, allowed in [
            ("acquisition", _ACQ_KEYS),
            ("ep", _EP_KEYS),
            ("vi", _VI_KEYS),
            ("hmc", _HMC_KEYS),
            ("kernel", _KERNEL_KEYS),
        ]:
            if sub in raw:
                if not isinstance(raw[sub], dict):
                    raise ManifestError(f"{where}.{sub} must be an object")
                _check_keys(raw[sub], allowed, f"{where}.{sub}")
        run_id = str(raw["id"])
        if run_id in ids:
            raise ManifestError(f"duplicate run id {run_id!r}")
        ids.add(run_id)
        inference = raw["inference"]
        if inference not in ("ep", "vi", "hmc", "random"):
            raise ManifestError(f"{where}: unknown inference {inference!r}")
        if "objective_csv" not in raw and raw["objective"] not in objective_names():
            raise ManifestError(f"{where}: unknown objective {raw['objective']!r}")
        if "objective_csv" in raw and "kernel" not in raw:
            raise ManifestError(f"{where}: tabular objectives need an explicit kernel")
        raw = dict(raw)
        if base_dir is not None and "objective_csv" in raw:
            raw["objective_csv"] = str((base_dir / raw["objective_csv"]).resolve())
        acq_label = (
            "random"
            if inference == "random"
            else raw.get("acquisition", {}).get("kind", "qei")
        )
        spec = RunSpec(
            run_id=run_id,
            objective_label=str(raw["objective"]),
            inference=inference,
            acquisition_label=acq_label,
            q=int(raw["q"]),
            seed=int(raw["seed"]),
            raw=raw,
        )
        if inference != "random":
            _build_config(raw)  # validate eagerly so cmd_run fails fast
        group = (spec.objective_label, inference, acq_label, spec.q,
                 raw.get("feedback", "winner"))
        seeds = group_seeds.setdefault(group, set())
        if spec.seed in seeds and not allow_repeats:
            raise ManifestError(
                f"{where}: seed {spec.seed} repeats within group {group}; "
                "set allow_repeated_seeds to permit this"
            )
        seeds.add(spec.seed)
        runs.append(spec)
    return ExperimentManifest(runs)


def load_manifest(path: str | Path) -> ExperimentManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    return parse_manifest(doc, base_dir=path.parent)
