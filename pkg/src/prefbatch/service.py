"""HTTP service exposing interactive preference-optimization sessions.

A session owns one sequential loop in which the feedback step is
externalized to a human: the service proposes a batch, waits for a winner
pick (or a full ranking), refits, and proposes the next batch until the
batch budget is exhausted.

State machine per session: awaiting_feedback -> fitting -> awaiting_feedback
(or done). Exactly one batch is outstanding at a time; every write carries
the revision it was rendered against and stale writes are rejected with
409, so feedback is never lost or double-applied.

Persistence is an append-only JSONL event log per session; state is
rebuilt by replaying the log. Proposals come from the same seed tree as
the batch loop, so replaying a session's history through the loop's
fit/propose steps reproduces every batch bit for bit.
"""

from __future__ import annotations

import json
import threading
import uuid
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .acquisition import AcquisitionSpec, SearchDomain
from .ep import EPConfig
from .gp import GaussianPosterior, KernelParams, predict
from .hmc import HMCConfig
from .loop import PBBORunConfig, fit_posterior, propose_from_records
from .preference import Feedback, PreferenceRecord
from .vi import VIConfig

__all__ = ["SessionConfig", "SessionStore", "create_app"]


class SessionConfig(BaseModel):
    """Configuration accepted by POST /sessions."""

    model_config = ConfigDict(extra="forbid")

    dim: int = Field(1, ge=1, le=10)
    q: int = Field(..., ge=2, le=6)
    budget_batches: int = Field(20, ge=1, le=200)
    seed: int = 0
    lower: Optional[list[float]] = None
    upper: Optional[list[float]] = None
    kernel_variance: float = Field(0.25, gt=0)
    lengthscales: Optional[list[float]] = None   # relative to the box span
    noise_sd: float = Field(0.05, gt=0)
    inference: Literal["ep", "vi", "hmc"] = "ep"
    acquisition: Optional[Literal["qei", "ts"]] = None
    labels: Optional[list[str]] = None
    ep_iters: int = Field(15, ge=1, le=100)
    ep_moment_samples: int = Field(1200, ge=100)
    acq_mc_samples: int = Field(1500, ge=100)
    acq_restarts: int = Field(6, ge=1)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.asarray(self.lower if self.lower is not None else [0.0] * self.dim)
        hi = np.asarray(self.upper if self.upper is not None else [1.0] * self.dim)
        if len(lo) != self.dim or len(hi) != self.dim or np.any(lo >= hi):
            raise ValueError("lower/upper must give a non-empty box of length dim")
        return lo, hi

    def acquisition_kind(self) -> str:
        if self.acquisition is not None:
            return self.acquisition
        return "qei" if self.dim <= 2 else "ts"

    def run_config(self) -> PBBORunConfig:
        ls = (
            np.asarray(self.lengthscales, dtype=float)
            if self.lengthscales is not None
            else np.full(self.dim, 0.2)
        )
        if len(ls) != self.dim:
            raise ValueError("lengthscales must have one entry per dimension")
        return PBBORunConfig(
            objective=None,
            q=self.q,
            inference=self.inference,
            acquisition=AcquisitionSpec(
                kind=self.acquisition_kind(),
                mc_samples=self.acq_mc_samples,
                restarts=self.acq_restarts,
            ),
            max_batches=self.budget_batches,
            init_batches=1,
            seed=self.seed,
            noise_sd=self.noise_sd,
            kernel=KernelParams(variance=self.kernel_variance, lengthscales=ls),
            ep_cfg=EPConfig(max_iters=self.ep_iters, moment_samples=self.ep_moment_samples),
            vi_cfg=VIConfig(),
            hmc_cfg=HMCConfig(chains=4, samples_per_chain=500, warmup=300),
        )


class _ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        self.status = status
        self.code = code
        self.message = message


class Session:
    def __init__(self, session_id: str, config: SessionConfig, store: "SessionStore"):
        self.id = session_id
        self.config = config
        self.store = store
        self.cfg = config.run_config()
        self.lower, self.upper = config.bounds()
        self.domain = SearchDomain.unit(config.dim)
        self.lock = threading.Lock()
        self.revision = 0
        self.status = "proposing"
        self.records: list[PreferenceRecord] = []
        self.batches: list[np.ndarray] = []      # unit coordinates
        self.posterior: GaussianPosterior | None = None

    # -- coordinate mapping ------------------------------------------------
    def to_native(self, u: np.ndarray) -> np.ndarray:
        return self.lower + np.atleast_2d(u) * (self.upper - self.lower)

    def to_unit(self, x: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(x) - self.lower) / (self.upper - self.lower)

    # -- state -------------------------------------------------------------
    @property
    def iteration(self) -> int:
        return len(self.batches)

    def current_batch_native(self):
        if self.status != "awaiting_feedback" or not self.batches:
            return None
        return self.to_native(self.batches[-1]).tolist()

    def snapshot(self) -> dict:
        with self.lock:
            history = []
            for i, rec in enumerate(self.records):
                history.append(
                    {
                        "iteration": i,
                        "x": self.to_native(rec.x).tolist(),
                        "feedback": rec.feedback.to_dict(),
                    }
                )
            return {
                "id": self.id,
                "revision": self.revision,
                "status": self.status,
                "q": self.config.q,
                "dim": self.config.dim,
                "budget_batches": self.config.budget_batches,
                "batches_done": len(self.records),
                "batch": self.current_batch_native(),
                "labels": self.config.labels,
                "lower": self.lower.tolist(),
                "upper": self.upper.tolist(),
                "inference": self.config.inference,
                "acquisition": self.config.acquisition_kind(),
                "history": history,
            }

    def _bump(self, status: str):
        self.revision += 1
        self.status = status

    # -- lifecycle ---------------------------------------------------------
    def propose_first(self):
        x = propose_from_records(self.cfg, [], 0, domain=self.domain)
        with self.lock:
            self.batches.append(x)
            self._bump("awaiting_feedback")
        self.store.append_event(self.id, {"type": "proposed", "iteration": 0, "x": x.tolist()})

    def submit_feedback(self, revision: int, body: dict) -> dict:
        with self.lock:
            if self.status != "awaiting_feedback":
                raise _ApiError(409, "not_awaiting_feedback",
                                f"session is {self.status}, no batch awaits feedback")
            if revision != self.revision:
                raise _ApiError(409, "revision_conflict",
                                f"stale revision {revision} (current {self.revision})")
            fb = self._parse_feedback(body)
            record = PreferenceRecord(self.batches[-1], fb)
            self.records.append(record)
            iteration = len(self.records)
            self._bump("fitting")
            self.store.append_event(
                self.id,
                {"type": "feedback", "iteration": iteration - 1, "feedback": fb.to_dict()},
            )

        # refit + propose outside the lock; pollers see status "fitting"
        if iteration >= self.config.budget_batches:
            with self.lock:
                self._bump("done")
            self.store.append_event(self.id, {"type": "done"})
            return {"revision": self.revision, "status": "done", "batch": None}
        x = propose_from_records(self.cfg, list(self.records), iteration, domain=self.domain)
        with self.lock:
            self.batches.append(x)
            self._bump("awaiting_feedback")
        self.store.append_event(
            self.id, {"type": "proposed", "iteration": iteration, "x": x.tolist()}
        )
        return {
            "revision": self.revision,
            "status": "awaiting_feedback",
            "batch": self.to_native(x).tolist(),
        }

    def _parse_feedback(self, body: dict) -> Feedback:
        q = self.config.q
        extra = set(body) - {"winner", "ranking"}
        if extra or ("winner" in body) == ("ranking" in body):
            raise _ApiError(422, "invalid_feedback",
                            "provide exactly one of 'winner' or 'ranking'")
        try:
            if "winner" in body:
                winner = int(body["winner"])
                if not 1 <= winner <= q:
                    raise ValueError(f"winner must lie in 1..{q}")
                return Feedback.from_winner(winner)
            ranking = [int(v) for v in body["ranking"]]
            if sorted(ranking) != list(range(1, q + 1)):
                raise ValueError(f"ranking must be a permutation of 1..{q}")
            if self.config.inference in ("vi", "hmc"):
                raise ValueError(f"{self.config.inference} sessions accept winner feedback only")
            return Feedback.from_ranking(ranking)
        except (TypeError, ValueError) as exc:
            raise _ApiError(422, "invalid_feedback", str(exc))

    def posterior_view(self, grid_native: np.ndarray) -> dict:
        if self.config.dim > 2:
            raise _ApiError(422, "grid_unsupported", "grid views support dim <= 2 only")
        with self.lock:
            records = list(self.records)
            cached = self.posterior
        if not records:
            posterior = GaussianPosterior(
                train_inputs=np.empty((0, self.config.dim)),
                mean=np.empty(0),
                cov=np.empty((0, 0)),
                kernel=self.cfg.resolve_kernel(),
                noise_sd=self.cfg.noise_sd,
            )
        elif cached is not None and cached.num_points == sum(r.batch_size for r in records):
            posterior = cached
        else:
            keys = np.random.SeedSequence(self.cfg.seed).spawn(1 + self.cfg.max_batches)
            sub = keys[1 + len(records)].spawn(4)
            posterior = fit_posterior(
                self.cfg, records, int(sub[0].generate_state(1)[0])
            )
            with self.lock:
                self.posterior = posterior
        grid_unit = self.to_unit(grid_native)
        mean, cov = predict(posterior, grid_unit)
        sd = np.sqrt(np.maximum(np.diag(cov), 0.0))
        return {"mean": mean.tolist(), "sd": sd.tolist()}


class SessionStore:
    """In-memory session map backed by per-session JSONL event logs."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def _log_path(self, session_id: str) -> Path:
        return self.directory / f"{session_id}.jsonl"

    def append_event(self, session_id: str, event: dict):
        with self._log_path(session_id).open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event) + "\n")

    def create(self, config: SessionConfig) -> Session:
        session_id = uuid.uuid4().hex[:12]
        session = Session(session_id, config, self)
        with self._lock:
            self._sessions[session_id] = session
        self.append_event(
            session_id,
            {"type": "created", "id": session_id, "config": config.model_dump()},
        )
        session.propose_first()
        return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            if session_id in self._sessions:
                return self._sessions[session_id]
        session = self._load(session_id)
        if session is None:
            raise _ApiError(404, "unknown_session", f"no session {session_id!r}")
        with self._lock:
            self._sessions.setdefault(session_id, session)
            return self._sessions[session_id]

    def _load(self, session_id: str) -> Session | None:
        path = self._log_path(session_id)
        if not path.exists():
            return None
        session = None
        with path.open("r", encoding="utf-8") as fh:
            for line in fh:
                event = json.loads(line)
                if event["type"] == "created":
                    session = Session(session_id, SessionConfig(**event["config"]), self)
                elif session is None:
                    raise ValueError(f"corrupt session log {path}: no created event first")
                elif event["type"] == "proposed":
                    session.batches.append(np.asarray(event["x"], dtype=float))
                    session.revision += 1
                    session.status = "awaiting_feedback"
                elif event["type"] == "feedback":
                    fb = Feedback.from_dict(event["feedback"])
                    session.records.append(
                        PreferenceRecord(session.batches[len(session.records)], fb)
                    )
                    session.revision += 1
                    session.status = "fitting"
                elif event["type"] == "done":
                    session.revision += 1
                    session.status = "done"
        return session


def create_app(sessions_dir: str | Path = "./sessions") -> FastAPI:
    app = FastAPI(title="prefbatch sessions", docs_url=None, redoc_url=None)
    store = SessionStore(sessions_dir)
    app.state.store = store

    @app.exception_handler(_ApiError)
    async def handle_api_error(_req: Request, exc: _ApiError):
        return JSONResponse(
            status_code=exc.status, content={"code": exc.code, "message": exc.message}
        )

    @app.exception_handler(RequestValidationError)
    async def handle_validation(_req: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400, content={"code": "invalid_request", "message": str(exc.errors())}
        )

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/sessions", status_code=201)
    def create_session(body: dict):
        try:
            config = SessionConfig(**body)
            config.bounds()
            config.run_config()
        except (ValidationError, ValueError, TypeError) as exc:
            raise _ApiError(400, "invalid_config", str(exc))
        session = store.create(config)
        return session.snapshot()

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return store.get(session_id).snapshot()

    @app.post("/sessions/{session_id}/feedback")
    def submit_feedback(session_id: str, body: dict):
        session = store.get(session_id)
        if "revision" not in body:
            raise _ApiError(422, "invalid_feedback", "body must carry the rendered revision")
        revision = body.pop("revision")
        if not isinstance(revision, int):
            raise _ApiError(422, "invalid_feedback", "revision must be an integer")
        return session.submit_feedback(revision, body)

    @app.get("/sessions/{session_id}/posterior")
    def posterior_view(session_id: str, grid: str):
        session = store.get(session_id)
        try:
            pts = np.asarray(json.loads(grid), dtype=float)
            if pts.ndim == 1:
                pts = pts[:, None]
            if pts.ndim != 2 or pts.shape[1] != session.config.dim:
                raise ValueError
        except ValueError:
            raise _ApiError(
                422, "invalid_grid",
                "grid must be JSON rows of session-dimension points",
            )
        return session.posterior_view(pts)

    return app
