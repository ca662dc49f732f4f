"""Append-only work log and digital passports.

Every operator action and machine verdict in a session becomes a WorkEvent
with a per-session contiguous event_id. Events are stored one JSONL file per
session (sessions/<session_id>.jsonl) plus an index file mapping product
serials to sessions; the encoding (sorted keys, compact separators) is frozen
so identical sessions produce identical bytes. An event is durable before it
is acknowledged, duplicates are acknowledged without re-writing (so senders
can replay their spool), and an event_id gap is rejected, forcing the sender
to replay in order.

A digital passport is a pure fold over a serial's events: per-session step
summaries with verdicts, attempt counts, durations, recorded torques and
detection scores. Rebuilding from the same events always yields the same
passport.

Media artifacts (frame snapshots, video segments) live next to the events
under media/. Retention keeps key frames and all events forever but prunes
video segments older than the horizon (183 days: the six-month ceiling).

The collector service exposes the same contracts over HTTP:
POST /events, GET /passport/<serial>, GET /events/<session_id>.
"""

from __future__ import annotations

import enum
import json
import os
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

from .jsonhttp import JsonRequestHandler, ThreadingJsonServer, start_server_thread

DEFAULT_RETENTION_DAYS = 183  # "no more than six months"
DEFAULT_COLLECTOR_PORT = 7423
_MS_PER_DAY = 86_400_000


class LogbookError(Exception):
    pass


class GapDetected(LogbookError):
    """event_id skips ahead; the sender must replay its spool in order."""


class MalformedEvent(LogbookError):
    pass


class EventKind(enum.Enum):
    SESSION_BEGIN = "SessionBegin"
    STEP_START = "StepStart"
    DETECTION = "Detection"
    TORQUE_RESULT = "TorqueResult"
    OPERATOR_ACTION = "OperatorAction"
    ALARM_RAISED = "AlarmRaised"
    ALARM_ACKED = "AlarmAcked"
    STEP_RESULT = "StepResult"
    SESSION_END = "SessionEnd"


class MediaKind(enum.Enum):
    KEY_FRAME = "KeyFrame"
    VIDEO_SEGMENT = "VideoSegment"


@dataclass(frozen=True)
class WorkEvent:
    event_id: int
    session_id: str
    workcell_id: str
    product_serial: str
    timestamp_ms: int
    kind: EventKind
    payload: dict
    media_ref: str | None = None

    def to_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "session_id": self.session_id,
            "workcell_id": self.workcell_id,
            "product_serial": self.product_serial,
            "timestamp_ms": self.timestamp_ms,
            "kind": self.kind.value,
            "payload": self.payload,
            "media_ref": self.media_ref,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorkEvent":
        try:
            event = cls(
                event_id=d["event_id"],
                session_id=d["session_id"],
                workcell_id=d["workcell_id"],
                product_serial=d["product_serial"],
                timestamp_ms=d["timestamp_ms"],
                kind=EventKind(d["kind"]),
                payload=d.get("payload", {}),
                media_ref=d.get("media_ref"),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedEvent(f"bad event document: {exc}")
        _validate_event(event)
        return event


def _validate_event(event: WorkEvent) -> None:
    if not isinstance(event.event_id, int) or event.event_id < 1:
        raise MalformedEvent("event_id must be a positive integer")
    if not isinstance(event.timestamp_ms, int) or event.timestamp_ms < 0:
        raise MalformedEvent("timestamp_ms must be a non-negative integer")
    if not event.session_id or not isinstance(event.session_id, str):
        raise MalformedEvent("session_id must be a non-empty string")
    if not event.product_serial or not isinstance(event.product_serial, str):
        raise MalformedEvent("product_serial must be a non-empty string")
    if not isinstance(event.payload, dict):
        raise MalformedEvent("payload must be an object")


def event_to_json(event: WorkEvent) -> str:
    """Frozen line encoding: sorted keys, compact separators."""
    return json.dumps(event.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class MediaArtifact:
    artifact_id: str
    session_id: str
    captured_at_ms: int
    kind: MediaKind
    size_bytes: int
    path: str

    def to_dict(self) -> dict:
        return {
            "artifact_id": self.artifact_id,
            "session_id": self.session_id,
            "captured_at_ms": self.captured_at_ms,
            "kind": self.kind.value,
            "size_bytes": self.size_bytes,
            "path": self.path,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MediaArtifact":
        return cls(
            artifact_id=d["artifact_id"],
            session_id=d["session_id"],
            captured_at_ms=d["captured_at_ms"],
            kind=MediaKind(d["kind"]),
            size_bytes=d["size_bytes"],
            path=d["path"],
        )


class LogStore:
    """File-backed event store: sessions/<id>.jsonl, media/, index.jsonl.

    Appends within one session are serialized; different sessions append
    concurrently. Readers see a consistent prefix of each session file.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "sessions").mkdir(parents=True, exist_ok=True)
        (self.root / "media").mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._session_locks: dict[str, threading.Lock] = {}
        self._last_ids: dict[str, int] = {}
        self._last_ts: dict[str, int] = {}

    def _session_path(self, session_id: str) -> Path:
        return self.root / "sessions" / f"{session_id}.jsonl"

    def _media_index_path(self) -> Path:
        return self.root / "media" / "index.jsonl"

    def _index_path(self) -> Path:
        return self.root / "index.jsonl"

    def _session_lock(self, session_id: str) -> threading.Lock:
        with self._lock:
            return self._session_locks.setdefault(session_id, threading.Lock())

    def _load_tail(self, session_id: str) -> None:
        if session_id in self._last_ids:
            return
        path = self._session_path(session_id)
        last_id, last_ts = 0, 0
        if path.exists():
            for line in path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    d = json.loads(line)
                    last_id = d["event_id"]
                    last_ts = d["timestamp_ms"]
        self._last_ids[session_id] = last_id
        self._last_ts[session_id] = last_ts

    def append(self, event: WorkEvent) -> str:
        """Durably append one event. Returns "ok" or "duplicate"."""
        _validate_event(event)
        with self._session_lock(event.session_id):
            self._load_tail(event.session_id)
            last = self._last_ids[event.session_id]
            if event.event_id <= last:
                return "duplicate"
            if event.event_id != last + 1:
                raise GapDetected(
                    f"session {event.session_id}: got event_id "
                    f"{event.event_id}, expected {last + 1}"
                )
            if event.timestamp_ms < self._last_ts[event.session_id]:
                raise MalformedEvent(
                    "timestamps must be non-decreasing within a session"
                )
            line = event_to_json(event) + "\n"
            with open(self._session_path(event.session_id), "a",
                      encoding="utf-8") as f:
                f.write(line)
                f.flush()
                os.fsync(f.fileno())
            self._last_ids[event.session_id] = event.event_id
            self._last_ts[event.session_id] = event.timestamp_ms
            if event.kind is EventKind.SESSION_BEGIN:
                self._append_index(event)
            return "ok"

    def _append_index(self, event: WorkEvent) -> None:
        entry = {
            "product_serial": event.product_serial,
            "session_id": event.session_id,
            "workcell_id": event.workcell_id,
            "started_ms": event.timestamp_ms,
        }
        with self._lock:
            with open(self._index_path(), "a", encoding="utf-8") as f:
                f.write(json.dumps(entry, sort_keys=True,
                                   separators=(",", ":")) + "\n")
                f.flush()
                os.fsync(f.fileno())

    def events(self, session_id: str) -> list[WorkEvent]:
        path = self._session_path(session_id)
        if not path.exists():
            return []
        out = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                out.append(WorkEvent.from_dict(json.loads(line)))
        return out

    def sessions_for(self, product_serial: str) -> list[dict]:
        """Index entries for a serial, ordered by start time then id."""
        path = self._index_path()
        if not path.exists():
            return []
        entries = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                entry = json.loads(line)
                if entry["product_serial"] == product_serial:
                    entries.append(entry)
        entries.sort(key=lambda e: (e["started_ms"], e["session_id"]))
        return entries

    # -- media -------------------------------------------------------------

    def add_media(self, artifact: MediaArtifact, payload: bytes) -> None:
        (self.root / artifact.path).parent.mkdir(parents=True, exist_ok=True)
        (self.root / artifact.path).write_bytes(payload)
        with self._lock:
            with open(self._media_index_path(), "a", encoding="utf-8") as f:
                f.write(json.dumps(artifact.to_dict(), sort_keys=True,
                                   separators=(",", ":")) + "\n")
                f.flush()
                os.fsync(f.fileno())

    def media_artifacts(self) -> list[MediaArtifact]:
        path = self._media_index_path()
        if not path.exists():
            return []
        return [
            MediaArtifact.from_dict(json.loads(line))
            for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]

    def retention_sweep(self, now_ms: int,
                        horizon_days: int = DEFAULT_RETENTION_DAYS,
                        ) -> list[MediaArtifact]:
        """Prune video segments older than the horizon.

        Key frames and work events are never touched. Idempotent: a second
        sweep right after the first prunes nothing.
        """
        if horizon_days > DEFAULT_RETENTION_DAYS:
            raise ValueError(
                f"retention horizon is capped at {DEFAULT_RETENTION_DAYS} days"
            )
        cutoff = now_ms - horizon_days * _MS_PER_DAY
        with self._lock:
            artifacts = self.media_artifacts()
            keep, pruned = [], []
            for artifact in artifacts:
                if (artifact.kind is MediaKind.VIDEO_SEGMENT
                        and artifact.captured_at_ms < cutoff):
                    pruned.append(artifact)
                    full = self.root / artifact.path
                    if full.exists():
                        full.unlink()
                else:
                    keep.append(artifact)
            if pruned:
                tmp = self._media_index_path().with_suffix(".tmp")
                with open(tmp, "w", encoding="utf-8") as f:
                    for artifact in keep:
                        f.write(json.dumps(artifact.to_dict(), sort_keys=True,
                                           separators=(",", ":")) + "\n")
                    f.flush()
                    os.fsync(f.fileno())
                tmp.replace(self._media_index_path())
            return pruned


# -- Digital passport ------------------------------------------------------------


@dataclass
class StepSummary:
    step_id: str
    kind: str
    verdict: str = "Pending"
    attempts: int = 0
    duration_ms: int | None = None
    torques_mnm: list[int] = field(default_factory=list)
    detection_scores: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "step_id": self.step_id,
            "kind": self.kind,
            "verdict": self.verdict,
            "attempts": self.attempts,
            "duration_ms": self.duration_ms,
            "torques_mnm": self.torques_mnm,
            "detection_scores": self.detection_scores,
        }


@dataclass
class SessionSummary:
    session_id: str
    workcell_id: str
    started_ms: int
    ended_ms: int | None
    outcome: str
    steps: list[StepSummary]

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "workcell_id": self.workcell_id,
            "started_ms": self.started_ms,
            "ended_ms": self.ended_ms,
            "outcome": self.outcome,
            "steps": [s.to_dict() for s in self.steps],
        }


@dataclass
class DigitalPassport:
    product_serial: str
    sessions: list[SessionSummary]

    def to_dict(self) -> dict:
        return {
            "product_serial": self.product_serial,
            "sessions": [s.to_dict() for s in self.sessions],
        }


def summarize_session(events: list[WorkEvent]) -> SessionSummary:
    """Fold one session's events into its passport entry."""
    if not events:
        raise ValueError("session has no events")
    begin = events[0]
    steps: list[StepSummary] = []
    by_id: dict[str, StepSummary] = {}
    if begin.kind is EventKind.SESSION_BEGIN:
        for entry in begin.payload.get("steps", []):
            summary = StepSummary(step_id=entry["step_id"], kind=entry["kind"])
            steps.append(summary)
            by_id[summary.step_id] = summary

    started_ms = begin.timestamp_ms
    ended_ms: int | None = None
    outcome = "InProgress"
    first_start: dict[str, int] = {}

    for event in events:
        payload = event.payload
        step_id = payload.get("step_id")
        summary = by_id.get(step_id) if step_id else None
        if event.kind is EventKind.STEP_START and summary:
            summary.attempts += 1
            first_start.setdefault(step_id, event.timestamp_ms)
        elif event.kind is EventKind.DETECTION and summary:
            summary.detection_scores.append(payload["score"])
        elif event.kind is EventKind.TORQUE_RESULT and summary:
            summary.torques_mnm.append(payload["final_torque_mnm"])
        elif event.kind is EventKind.STEP_RESULT and summary:
            summary.verdict = payload["outcome"]
            if step_id in first_start:
                summary.duration_ms = event.timestamp_ms - first_start[step_id]
        elif event.kind is EventKind.SESSION_END:
            ended_ms = event.timestamp_ms
            outcome = payload.get("outcome", "Completed")

    return SessionSummary(
        session_id=begin.session_id,
        workcell_id=begin.workcell_id,
        started_ms=started_ms,
        ended_ms=ended_ms,
        outcome=outcome,
        steps=steps,
    )


def build_passport(store: LogStore, product_serial: str) -> DigitalPassport:
    """Deterministic roll-up of everything recorded for one product."""
    sessions = []
    for entry in store.sessions_for(product_serial):
        events = store.events(entry["session_id"])
        if events:
            sessions.append(summarize_session(events))
    return DigitalPassport(product_serial=product_serial, sessions=sessions)


# -- Collector service -----------------------------------------------------------


class CollectorServer:
    """Network face of the log store."""

    def __init__(self, store: LogStore, host: str = "127.0.0.1",
                 port: int = DEFAULT_COLLECTOR_PORT):
        self.store = store
        handler = _make_collector_handler(store)
        self.httpd = ThreadingJsonServer((host, port), handler)

    @property
    def address(self) -> tuple[str, int]:
        return self.httpd.server_address

    def serve_in_thread(self):
        return start_server_thread(self.httpd)

    def serve_forever(self):
        self.httpd.serve_forever()

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


def _make_collector_handler(store: LogStore):
    class CollectorHandler(JsonRequestHandler):
        def do_POST(self):
            if self.path != "/events":
                self.send_error_json(404, "unknown endpoint")
                return
            try:
                doc = self.read_json()
                event = WorkEvent.from_dict(doc)
            except (MalformedEvent, ValueError, TypeError) as exc:
                self.send_error_json(400, f"malformed event: {exc}")
                return
            try:
                status = store.append(event)
            except GapDetected as exc:
                self.send_error_json(409, str(exc))
                return
            except MalformedEvent as exc:
                self.send_error_json(400, str(exc))
                return
            self.send_json(200, {"status": status})

        def do_GET(self):
            if self.path.startswith("/passport/"):
                serial = self.path[len("/passport/"):]
                passport = build_passport(store, serial)
                self.send_json(200, passport.to_dict())
            elif self.path.startswith("/events/"):
                session_id = self.path[len("/events/"):]
                events = store.events(session_id)
                self.send_json(200, {"events": [e.to_dict() for e in events]})
            elif self.path == "/healthz":
                self.send_json(200, {"ok": True})
            else:
                self.send_error_json(404, "unknown endpoint")

    return CollectorHandler


# -- Event sinks (workcell side) ---------------------------------------------------


class EventSink:
    def send(self, event: WorkEvent) -> None:
        raise NotImplementedError

    def flush(self) -> None:
        pass


class StoreSink(EventSink):
    """Embedded logbook: append straight into a local store."""

    def __init__(self, store: LogStore):
        self.store = store

    def send(self, event: WorkEvent) -> None:
        self.store.append(event)


class MemorySink(EventSink):
    def __init__(self):
        self.events: list[WorkEvent] = []

    def send(self, event: WorkEvent) -> None:
        self.events.append(event)


class CollectorSink(EventSink):
    """HTTP ingest with a durable local spool.

    If the collector is unreachable the event is spooled and the session
    keeps going; every later send (and flush) first replays the spool in
    order, which the collector's idempotent ingest makes safe.
    """

    def __init__(self, base_url: str, spool_path: str | Path,
                 timeout_s: float = 5.0):
        self.base_url = base_url.rstrip("/")
        self.spool_path = Path(spool_path)
        self.timeout_s = timeout_s

    def _post(self, event: WorkEvent) -> None:
        req = urllib.request.Request(
            self.base_url + "/events",
            data=event_to_json(event).encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
            resp.read()

    def _spool(self, event: WorkEvent) -> None:
        self.spool_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.spool_path, "a", encoding="utf-8") as f:
            f.write(event_to_json(event) + "\n")
            f.flush()
            os.fsync(f.fileno())

    def _drain_spool(self) -> bool:
        """Replay spooled events in order. True if the spool is now empty."""
        if not self.spool_path.exists():
            return True
        lines = [
            line for line in
            self.spool_path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        remaining = list(lines)
        for line in lines:
            event = WorkEvent.from_dict(json.loads(line))
            try:
                self._post(event)
            except (urllib.error.URLError, OSError):
                break
            remaining.pop(0)
        if remaining:
            self.spool_path.write_text("\n".join(remaining) + "\n",
                                       encoding="utf-8")
            return False
        self.spool_path.unlink()
        return True

    def send(self, event: WorkEvent) -> None:
        if not self._drain_spool():
            self._spool(event)
            return
        try:
            self._post(event)
        except (urllib.error.URLError, OSError):
            self._spool(event)

    def flush(self) -> None:
        self._drain_spool()
