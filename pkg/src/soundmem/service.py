"""HTTP experiment service: plan issuance, sequential clip delivery, click
capture, and round finishing, all journaled to the append-only event log.

Clips are served strictly in order through a per-session cursor so clients
cannot scan ahead and discover repeats; role tags never leave the server.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import Body, FastAPI, HTTPException, Response
from pydantic import BaseModel

from .events import (
    KIND_CLICK,
    KIND_CLIP_STARTED,
    KIND_SESSION_FINISHED,
    KIND_SESSION_STARTED,
    KIND_SURVEY_SUBMITTED,
    EventLog,
    finish_payload,
    replay_events,
)
from .experiment import (
    PlanConfig,
    PlanInfeasible,
    SessionLog,
    SessionPlan,
    WorkerExhausted,
    WorkerHistory,
    plan_session,
)


@dataclass
class ServiceConfig:
    pool_manifest: dict[str, str]  # sound_id -> wav path
    event_log_path: str | Path
    audio_dir: str | Path | None = None
    plan_cfg: PlanConfig = field(default_factory=PlanConfig)
    base_seed: int = 0


@dataclass
class _SessionState:
    plan: SessionPlan
    worker_id: str
    cursor: int = 0
    clicks: set[int] = field(default_factory=set)
    latencies_ms: dict[int, float] = field(default_factory=dict)
    finished: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock)

    def to_log(self) -> SessionLog:
        return SessionLog(
            self.plan.session_id, self.worker_id, set(self.clicks), dict(self.latencies_ms)
        )


def _now_ms() -> int:
    return int(time.time() * 1000)


class ExperimentService:
    """Thread-safe session registry over the event log."""

    def __init__(self, config: ServiceConfig) -> None:
        self.config = config
        self.pool = list(config.pool_manifest)
        self._registry_lock = threading.Lock()
        self._sessions: dict[str, _SessionState] = {}
        self._workers: dict[str, WorkerHistory] = {}
        self._session_counter = 0
        log_path = Path(config.event_log_path)
        if log_path.exists() and log_path.stat().st_size > 0:
            self._restore(log_path)
        self.log = EventLog(log_path)

    def _restore(self, log_path: Path) -> None:
        for session_id, replayed in replay_events(log_path).items():
            state = _SessionState(replayed.plan, replayed.worker_id)
            state.cursor = replayed.cursor
            state.clicks = set(replayed.clicks)
            state.latencies_ms = dict(replayed.latencies_ms)
            state.finished = replayed.finished
            self._sessions[session_id] = state
            history = self._workers.setdefault(replayed.worker_id, WorkerHistory())
            history.n_sessions += 1
            history.target_ids |= replayed.plan.target_ids()
            self._session_counter += 1

    # -- session lifecycle -------------------------------------------------

    def start_session(self, worker_id: str) -> dict:
        with self._registry_lock:
            history = self._workers.setdefault(worker_id, WorkerHistory())
            seed = self.config.base_seed + self._session_counter
            session_id = f"s{self._session_counter + 1:08d}"
            plan = plan_session(self.pool, history, seed, self.config.plan_cfg, session_id)
            self._session_counter += 1
            history.n_sessions += 1
            history.target_ids |= plan.target_ids()
            self._sessions[session_id] = _SessionState(plan, worker_id)
            self.log.append(
                KIND_SESSION_STARTED,
                session_id,
                {"worker_id": worker_id, "plan": plan.to_dict()},
                _now_ms(),
            )
        return {"session_id": session_id, "n_slots": len(plan)}

    def _session(self, session_id: str) -> _SessionState:
        state = self._sessions.get(session_id)
        if state is None:
            raise HTTPException(status_code=404, detail="unknown session")
        return state

    def clip_bytes(self, session_id: str, position: int) -> bytes:
        state = self._session(session_id)
        with state.lock:
            if state.finished:
                raise HTTPException(status_code=409, detail={"error": "session finished"})
            if position != state.cursor:
                raise HTTPException(
                    status_code=409,
                    detail={"error": "out-of-order clip request", "expected_position": state.cursor},
                )
            sound_id = state.plan.sound_at(position)
            path = Path(self.config.pool_manifest[sound_id])
            if self.config.audio_dir is not None and not path.is_absolute():
                path = Path(self.config.audio_dir) / path
            data = path.read_bytes()
            self.log.append(KIND_CLIP_STARTED, session_id, {"position": position}, _now_ms())
            state.cursor += 1
            return data

    def record_click(self, session_id: str, position: int, latency_ms: float | None) -> dict:
        state = self._session(session_id)
        with state.lock:
            if state.finished:
                raise HTTPException(status_code=409, detail={"error": "session finished"})
            if not 0 <= position < state.cursor:
                raise HTTPException(status_code=400, detail={"error": "position not served yet"})
            if position in state.clicks:
                return {"status": "ok", "counted": False}
            state.clicks.add(position)
            if latency_ms is not None:
                state.latencies_ms[position] = float(latency_ms)
            self.log.append(
                KIND_CLICK, session_id, {"position": position, "latency_ms": latency_ms}, _now_ms()
            )
            return {"status": "ok", "counted": True}

    def finish(self, session_id: str) -> dict:
        state = self._session(session_id)
        with state.lock:
            if state.finished:
                raise HTTPException(status_code=409, detail={"error": "session already finished"})
            remaining = len(state.plan) - state.cursor
            if remaining > 0:
                raise HTTPException(
                    status_code=409,
                    detail={"error": "unserved slots remain", "remaining": remaining},
                )
            payload = finish_payload(state.plan, state.to_log())
            state.finished = True
            self.log.append(KIND_SESSION_FINISHED, session_id, payload, _now_ms())
            return payload

    def survey(self, session_id: str, payload: dict) -> dict:
        self._session(session_id)
        self.log.append(KIND_SURVEY_SUBMITTED, session_id, dict(payload), _now_ms())
        return {"status": "ok"}


class _StartBody(BaseModel):
    worker_id: str


class _ClickBody(BaseModel):
    position: int
    latency_ms: float | None = None


def create_app(config: ServiceConfig) -> FastAPI:
    service = ExperimentService(config)
    app = FastAPI(title="soundmem experiment service")
    app.state.service = service

    @app.post("/api/session")
    def start_session(body: _StartBody):
        try:
            return service.start_session(body.worker_id)
        except WorkerExhausted as exc:
            raise HTTPException(status_code=409, detail={"error": str(exc)}) from exc
        except PlanInfeasible as exc:
            raise HTTPException(status_code=503, detail={"error": str(exc)}) from exc

    @app.get("/api/session/{session_id}/clip/{position}")
    def get_clip(session_id: str, position: int):
        data = service.clip_bytes(session_id, position)
        return Response(content=data, media_type="audio/wav")

    @app.post("/api/session/{session_id}/click")
    def click(session_id: str, body: _ClickBody):
        return service.record_click(session_id, body.position, body.latency_ms)

    @app.post("/api/session/{session_id}/finish")
    def finish(session_id: str):
        return service.finish(session_id)

    @app.post("/api/session/{session_id}/survey")
    def survey(session_id: str, payload: dict = Body(...)):
        return service.survey(session_id, payload)

    @app.get("/api/headphone-check")
    def headphone_check():
        # screening algorithm out of scope; always passes and says so
        return {"passed": True, "experimental": True}

    return app


def load_pool_manifest(path) -> dict[str, str]:
    """CSV manifest with a sound_id,path header mapping ids to WAV files."""
    import csv as _csv

    with open(path, newline="", encoding="utf-8") as fh:
        reader = _csv.DictReader(fh)
        if not reader.fieldnames or "sound_id" not in reader.fieldnames or "path" not in reader.fieldnames:
            raise ValueError("pool manifest needs sound_id and path columns")
        manifest: dict[str, str] = {}
        for row in reader:
            sid = row["sound_id"].strip()
            if sid in manifest:
                raise ValueError(f"duplicate sound_id {sid!r} in manifest")
            manifest[sid] = row["path"].strip()
    return manifest
