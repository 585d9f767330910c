"""Append-only JSONL event log and its replay into session state.

The log is the single source of truth: scoring always works from replayed
state, and the simulator emits the same format as the live service.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .experiment import (
    SECOND_PRESENTATION_ROLES,
    FIRST_PRESENTATION_ROLES,
    SessionLog,
    SessionPlan,
    validate_session,
)

KIND_SESSION_STARTED = "session_started"
KIND_CLIP_STARTED = "clip_started"
KIND_CLICK = "click"
KIND_SESSION_FINISHED = "session_finished"
KIND_SURVEY_SUBMITTED = "survey_submitted"

EVENT_KINDS = frozenset(
    {KIND_SESSION_STARTED, KIND_CLIP_STARTED, KIND_CLICK, KIND_SESSION_FINISHED, KIND_SURVEY_SUBMITTED}
)


class ReplayError(Exception):
    """The event stream violates the log invariants."""


@dataclass(slots=True)
class EventRecord:
    seq: int
    ts: int
    kind: str
    session_id: str
    payload: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "seq": self.seq,
                "ts": self.ts,
                "kind": self.kind,
                "session_id": self.session_id,
                "payload": self.payload,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "EventRecord":
        try:
            doc = json.loads(line)
            return cls(
                seq=int(doc["seq"]),
                ts=int(doc["ts"]),
                kind=str(doc["kind"]),
                session_id=str(doc["session_id"]),
                payload=dict(doc["payload"]),
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise ReplayError(f"malformed event line: {exc}") from exc


class EventLog:
    """Serialized appender guaranteeing strictly increasing seq numbers."""

    def __init__(self, path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()
        self._seq = 0
        if self.path.exists():
            for record in iter_events(self.path):
                self._seq = max(self._seq, record.seq)
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, kind: str, session_id: str, payload: Mapping, ts: int) -> EventRecord:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        with self._lock:
            self._seq += 1
            record = EventRecord(self._seq, ts, kind, session_id, dict(payload))
            self._fh.write(record.to_json() + "\n")
            self._fh.flush()
            return record

    def close(self) -> None:
        self._fh.close()


def iter_events(path) -> Iterator[EventRecord]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield EventRecord.from_json(line)


@dataclass
class ReplayedSession:
    plan: SessionPlan
    worker_id: str
    cursor: int = 0
    clicks: set[int] = field(default_factory=set)
    latencies_ms: dict[int, float] = field(default_factory=dict)
    finished: bool = False
    reported: dict | None = None
    surveys: list[dict] = field(default_factory=list)

    @property
    def status(self) -> str:
        return "finished" if self.finished else "active"

    def to_log(self) -> SessionLog:
        return SessionLog(
            session_id=self.plan.session_id,
            worker_id=self.worker_id,
            clicks=set(self.clicks),
            latencies_ms=dict(self.latencies_ms),
            completed=self.finished,
        )


def replay_events(source) -> dict[str, ReplayedSession]:
    """Reconstruct every session from an event stream (path or records).

    Raises ReplayError on non-increasing seq, events referencing unknown
    sessions, writes after a session finished, or out-of-order clip serving.
    """
    records: Iterable[EventRecord]
    if isinstance(source, (str, Path)):
        records = iter_events(source)
    else:
        records = source
    sessions: dict[str, ReplayedSession] = {}
    last_seq = 0
    for rec in records:
        if rec.seq <= last_seq:
            raise ReplayError(f"seq regression at seq {rec.seq}")
        last_seq = rec.seq
        if rec.kind == KIND_SESSION_STARTED:
            if rec.session_id in sessions:
                raise ReplayError(f"duplicate session_started at seq {rec.seq}")
            plan = SessionPlan.from_dict(rec.payload["plan"])
            sessions[rec.session_id] = ReplayedSession(plan, str(rec.payload["worker_id"]))
            continue
        state = sessions.get(rec.session_id)
        if state is None:
            raise ReplayError(f"orphan {rec.kind} event at seq {rec.seq}")
        if rec.kind == KIND_CLIP_STARTED:
            if state.finished:
                raise ReplayError(f"clip after finish at seq {rec.seq}")
            position = int(rec.payload["position"])
            if position != state.cursor:
                raise ReplayError(f"out-of-order clip at seq {rec.seq}")
            state.cursor += 1
        elif rec.kind == KIND_CLICK:
            position = int(rec.payload["position"])
            if position >= state.cursor:
                raise ReplayError(f"click on unserved position at seq {rec.seq}")
            if position not in state.clicks:
                state.clicks.add(position)
                latency = rec.payload.get("latency_ms")
                if latency is not None:
                    state.latencies_ms[position] = float(latency)
        elif rec.kind == KIND_SESSION_FINISHED:
            if state.finished:
                raise ReplayError(f"second session_finished at seq {rec.seq}")
            state.finished = True
            state.reported = dict(rec.payload)
        elif rec.kind == KIND_SURVEY_SUBMITTED:
            state.surveys.append(dict(rec.payload))
        else:
            raise ReplayError(f"unknown event kind {rec.kind!r} at seq {rec.seq}")
    return sessions


def finish_payload(plan: SessionPlan, log: SessionLog) -> dict:
    """Validation scores plus the round score shown to the participant.

    The display score is repeats correctly clicked minus false alarms,
    floored at zero.
    """
    result = validate_session(plan, log)
    hits = sum(1 for s in plan.slots if s.role in SECOND_PRESENTATION_ROLES and s.position in log.clicks)
    false_alarms = sum(
        1 for s in plan.slots if s.role in FIRST_PRESENTATION_ROLES and s.position in log.clicks
    )
    return {
        "vigilance_score": result.vigilance_score,
        "false_positive_rate": result.false_positive_rate,
        "accepted": result.accepted,
        "display_score": max(0, hits - false_alarms),
    }


def sessions_from_replay(
    replayed: Mapping[str, ReplayedSession], only_finished: bool = True
) -> list[tuple[SessionPlan, SessionLog]]:
    out = []
    for state in replayed.values():
        if only_finished and not state.finished:
            continue
        out.append((state.plan, state.to_log()))
    return out


def accepted_sessions(
    replayed: Mapping[str, ReplayedSession]
) -> list[tuple[SessionPlan, SessionLog]]:
    """Finished sessions passing the vigilance / false-positive gate."""
    out = []
    for plan, log in sessions_from_replay(replayed, only_finished=True):
        if validate_session(plan, log).accepted:
            out.append((plan, log))
    return out


def events_from_games(games, base_ts: int = 1_700_000_000_000) -> list[EventRecord]:
    """Serialize simulated games into the same event stream the service writes."""
    records: list[EventRecord] = []
    seq = 0
    ts = base_ts

    def emit(kind: str, session_id: str, payload: dict) -> None:
        nonlocal seq, ts
        seq += 1
        ts += 1
        records.append(EventRecord(seq, ts, kind, session_id, payload))

    for game in games:
        plan, log = game.plan, game.log
        emit(
            KIND_SESSION_STARTED,
            plan.session_id,
            {"worker_id": log.worker_id, "plan": plan.to_dict()},
        )
        for slot in plan.slots:
            emit(KIND_CLIP_STARTED, plan.session_id, {"position": slot.position})
            if slot.position in log.clicks:
                emit(
                    KIND_CLICK,
                    plan.session_id,
                    {
                        "position": slot.position,
                        "latency_ms": log.latencies_ms.get(slot.position),
                    },
                )
        emit(KIND_SESSION_FINISHED, plan.session_id, finish_payload(plan, log))
    return records


def write_events(records: Iterable[EventRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
