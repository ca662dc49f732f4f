"""Logbook store, passport fold, retention, collector service and the
spooling sink."""

import json
import urllib.error
import urllib.request

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asmcell.logbook import (
    CollectorServer,
    CollectorSink,
    EventKind,
    GapDetected,
    LogStore,
    MalformedEvent,
    MediaArtifact,
    MediaKind,
    WorkEvent,
    build_passport,
    event_to_json,
    summarize_session,
)

DAY_MS = 86_400_000
T0 = 1_600_000_000_000


def make_event(event_id, kind, payload=None, session="sess-1", ts=None,
               serial="SN-001", workcell="WC-1"):
    return WorkEvent(
        event_id=event_id,
        session_id=session,
        workcell_id=workcell,
        product_serial=serial,
        timestamp_ms=T0 + event_id if ts is None else ts,
        kind=kind,
        payload=payload or {},
    )


def begin_event(session="sess-1", serial="SN-001", steps=None, ts=T0,
                workcell="WC-1"):
    return make_event(
        1, EventKind.SESSION_BEGIN,
        {"procedure_id": "P-1", "revision": 1, "product_type": "panel",
         "steps": steps or [{"step_id": "S1", "kind": "OperatorConfirm"}]},
        session=session, serial=serial, ts=ts, workcell=workcell,
    )


class TestAppend:
    def test_fresh_session_starts_at_one(self, tmp_path):
        store = LogStore(tmp_path)
        assert store.append(begin_event()) == "ok"

    def test_duplicate_is_acked_once_stored(self, tmp_path):
        store = LogStore(tmp_path)
        event = begin_event()
        assert store.append(event) == "ok"
        assert store.append(event) == "duplicate"
        assert len(store.events("sess-1")) == 1

    def test_gap_is_rejected(self, tmp_path):
        store = LogStore(tmp_path)
        store.append(begin_event())
        store.append(make_event(2, EventKind.STEP_START, {"step_id": "S1"}))
        store.append(make_event(3, EventKind.STEP_RESULT,
                                {"step_id": "S1", "outcome": "Passed"}))
        with pytest.raises(GapDetected):
            store.append(make_event(5, EventKind.SESSION_END))

    def test_first_event_must_be_id_one(self, tmp_path):
        store = LogStore(tmp_path)
        with pytest.raises(GapDetected):
            store.append(make_event(2, EventKind.STEP_START))

    def test_decreasing_timestamp_rejected(self, tmp_path):
        store = LogStore(tmp_path)
        store.append(begin_event(ts=T0 + 100))
        with pytest.raises(MalformedEvent):
            store.append(make_event(2, EventKind.SESSION_END, ts=T0 + 50))

    def test_durable_across_reopen(self, tmp_path):
        store = LogStore(tmp_path)
        store.append(begin_event())
        store.append(make_event(2, EventKind.SESSION_END))
        del store
        reopened = LogStore(tmp_path)
        events = reopened.events("sess-1")
        assert [e.event_id for e in events] == [1, 2]
        # appends continue where the file left off
        with pytest.raises(GapDetected):
            reopened.append(make_event(4, EventKind.STEP_START))

    def test_negative_timestamp_is_malformed(self, tmp_path):
        store = LogStore(tmp_path)
        with pytest.raises(MalformedEvent):
            store.append(make_event(1, EventKind.SESSION_BEGIN, ts=-5))

    def test_encoding_is_stable(self):
        event = begin_event()
        assert event_to_json(event) == event_to_json(
            WorkEvent.from_dict(json.loads(event_to_json(event)))
        )


def session_events(session, serial, t_start, step_id="S1", torques=None,
                   workcell="WC-1"):
    steps = [{"step_id": step_id, "kind": "Tighten" if torques else "OperatorConfirm"}]
    events = [begin_event(session=session, serial=serial, steps=steps,
                          ts=t_start, workcell=workcell)]
    next_id = 2
    events.append(make_event(next_id, EventKind.STEP_START,
                             {"step_id": step_id, "attempt": 1},
                             session=session, serial=serial,
                             ts=t_start + 10, workcell=workcell))
    next_id += 1
    for i, torque in enumerate(torques or []):
        events.append(make_event(
            next_id, EventKind.TORQUE_RESULT,
            {"step_id": step_id, "fastener_index": i,
             "final_torque_mnm": torque, "mode": "TorqueLimit",
             "status": "Completed"},
            session=session, serial=serial, ts=t_start + 20 + i,
            workcell=workcell))
        next_id += 1
    events.append(make_event(next_id, EventKind.STEP_RESULT,
                             {"step_id": step_id, "outcome": "Passed",
                              "attempt": 1},
                             session=session, serial=serial,
                             ts=t_start + 100, workcell=workcell))
    next_id += 1
    events.append(make_event(next_id, EventKind.SESSION_END,
                             {"outcome": "Completed"},
                             session=session, serial=serial,
                             ts=t_start + 110, workcell=workcell))
    return events


class TestPassport:
    def test_unknown_serial_gives_empty_passport(self, tmp_path):
        passport = build_passport(LogStore(tmp_path), "NOPE")
        assert passport.product_serial == "NOPE"
        assert passport.sessions == []

    def test_three_step_session_in_script_order(self, tmp_path):
        store = LogStore(tmp_path)
        steps = [{"step_id": f"S{i}", "kind": "OperatorConfirm"}
                 for i in (1, 2, 3)]
        store.append(begin_event(steps=steps))
        eid = 2
        for i in (1, 2, 3):
            store.append(make_event(eid, EventKind.STEP_START,
                                    {"step_id": f"S{i}", "attempt": 1}))
            eid += 1
            store.append(make_event(eid, EventKind.STEP_RESULT,
                                    {"step_id": f"S{i}", "outcome": "Passed",
                                     "attempt": 1}))
            eid += 1
        store.append(make_event(eid, EventKind.SESSION_END,
                                {"outcome": "Completed"}))
        passport = build_passport(store, "SN-001")
        assert len(passport.sessions) == 1
        summaries = passport.sessions[0].steps
        assert [s.step_id for s in summaries] == ["S1", "S2", "S3"]
        assert all(s.verdict == "Passed" for s in summaries)
        assert all(s.attempts == 1 for s in summaries)
        assert all(s.duration_ms is not None for s in summaries)

    def test_tighten_step_lists_all_fastener_torques(self, tmp_path):
        store = LogStore(tmp_path)
        torques = [2000, 1999, 2001, 2000]
        for event in session_events("sess-t", "SN-002", T0, torques=torques):
            store.append(event)
        passport = build_passport(store, "SN-002")
        assert passport.sessions[0].steps[0].torques_mnm == torques

    def test_ingest_order_of_sessions_does_not_matter(self, tmp_path):
        a = session_events("sess-a", "SN-003", T0)
        b = session_events("sess-b", "SN-003", T0 + 1_000_000,
                           workcell="WC-2")
        store1 = LogStore(tmp_path / "one")
        for event in a + b:
            store1.append(event)
        store2 = LogStore(tmp_path / "two")
        for event in b + a:
            store2.append(event)
        p1 = build_passport(store1, "SN-003")
        p2 = build_passport(store2, "SN-003")
        assert p1.to_dict() == p2.to_dict()
        assert [s.session_id for s in p1.sessions] == ["sess-a", "sess-b"]
        assert [s.workcell_id for s in p1.sessions] == ["WC-1", "WC-2"]


class TestRetention:
    def artifact(self, aid, kind, age_days, now=T0 + 1000 * DAY_MS):
        return MediaArtifact(
            artifact_id=aid, session_id="sess-1",
            captured_at_ms=now - age_days * DAY_MS,
            kind=kind, size_bytes=4, path=f"media/{aid}",
        ), now

    def test_old_video_segment_is_pruned(self, tmp_path):
        store = LogStore(tmp_path)
        artifact, now = self.artifact("v1", MediaKind.VIDEO_SEGMENT, 200)
        store.add_media(artifact, b"vvvv")
        pruned = store.retention_sweep(now)
        assert [a.artifact_id for a in pruned] == ["v1"]
        assert not (tmp_path / "media/v1").exists()

    def test_old_keyframe_is_retained(self, tmp_path):
        store = LogStore(tmp_path)
        artifact, now = self.artifact("k1", MediaKind.KEY_FRAME, 400)
        store.add_media(artifact, b"kkkk")
        assert store.retention_sweep(now) == []
        assert (tmp_path / "media/k1").exists()

    def test_sweep_is_idempotent(self, tmp_path):
        store = LogStore(tmp_path)
        artifact, now = self.artifact("v1", MediaKind.VIDEO_SEGMENT, 200)
        store.add_media(artifact, b"vvvv")
        assert len(store.retention_sweep(now)) == 1
        assert store.retention_sweep(now) == []

    def test_horizon_above_ceiling_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            LogStore(tmp_path).retention_sweep(T0, horizon_days=200)

    @given(ages=st.lists(st.integers(0, 400), min_size=1, max_size=8),
           kinds=st.lists(st.sampled_from(MediaKind), min_size=8, max_size=8))
    @settings(max_examples=25, deadline=None)
    def test_retention_never_touches_events_or_keyframes(self, tmp_path_factory,
                                                         ages, kinds):
        root = tmp_path_factory.mktemp("ret")
        store = LogStore(root)
        store.append(begin_event())
        now = T0 + 1000 * DAY_MS
        for i, (age, kind) in enumerate(zip(ages, kinds)):
            artifact = MediaArtifact(
                artifact_id=f"a{i}", session_id="sess-1",
                captured_at_ms=now - age * DAY_MS, kind=kind,
                size_bytes=1, path=f"media/a{i}")
            store.add_media(artifact, b"x")
        pruned = store.retention_sweep(now)
        assert all(a.kind is MediaKind.VIDEO_SEGMENT for a in pruned)
        assert all(now - a.captured_at_ms > 183 * DAY_MS for a in pruned)
        remaining = store.media_artifacts()
        assert all(a.kind is MediaKind.KEY_FRAME
                   or now - a.captured_at_ms <= 183 * DAY_MS
                   for a in remaining)
        assert len(store.events("sess-1")) == 1


def post_json(url, obj):
    req = urllib.request.Request(
        url, data=json.dumps(obj).encode(), method="POST",
        headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=5) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def get_json(url):
    with urllib.request.urlopen(url, timeout=5) as resp:
        return resp.status, json.loads(resp.read())


@pytest.fixture
def collector(tmp_path):
    store = LogStore(tmp_path / "store")
    server = CollectorServer(store, port=0)
    server.serve_in_thread()
    host, port = server.address
    yield store, f"http://{host}:{port}"
    server.close()


class TestCollector:
    def test_valid_event_is_acked(self, collector):
        _, base = collector
        status, body = post_json(base + "/events", begin_event().to_dict())
        assert status == 200
        assert body["status"] == "ok"

    def test_malformed_event_is_400(self, collector):
        _, base = collector
        doc = begin_event().to_dict()
        doc["timestamp_ms"] = -12
        status, body = post_json(base + "/events", doc)
        assert status == 400
        assert "error" in body

    def test_gap_is_409(self, collector):
        _, base = collector
        post_json(base + "/events", begin_event().to_dict())
        doc = make_event(7, EventKind.SESSION_END).to_dict()
        status, _ = post_json(base + "/events", doc)
        assert status == 409

    def test_passport_merges_sessions_from_two_workcells(self, collector):
        _, base = collector
        a = session_events("sess-a", "SN-9", T0, workcell="WC-1")
        b = session_events("sess-b", "SN-9", T0 + 500_000, workcell="WC-2")
        for event in b + a:  # arrival order scrambled on purpose
            status, _ = post_json(base + "/events", event.to_dict())
            assert status == 200
        status, passport = get_json(base + "/passport/SN-9")
        assert status == 200
        assert [s["workcell_id"] for s in passport["sessions"]] == \
            ["WC-1", "WC-2"]

    def test_events_endpoint_returns_session_log(self, collector):
        _, base = collector
        for event in session_events("sess-e", "SN-10", T0):
            post_json(base + "/events", event.to_dict())
        status, body = get_json(base + "/events/sess-e")
        assert status == 200
        ids = [e["event_id"] for e in body["events"]]
        assert ids == list(range(1, len(ids) + 1))


class TestCollectorSink:
    def test_spools_when_unreachable_then_flushes(self, tmp_path):
        store = LogStore(tmp_path / "store")
        server = CollectorServer(store, port=0)
        host, port = server.address  # not serving yet: connection refused
        spool = tmp_path / "spool.jsonl"
        sink = CollectorSink(f"http://{host}:{port}", spool)

        events = session_events("sess-s", "SN-11", T0)
        for event in events[:3]:
            sink.send(event)
        assert spool.exists()
        assert len(spool.read_text().splitlines()) == 3
        assert store.events("sess-s") == []

        server.serve_in_thread()
        for event in events[3:]:
            sink.send(event)
        sink.flush()
        assert not spool.exists()
        stored = store.events("sess-s")
        assert [e.event_id for e in stored] == [e.event_id for e in events]
        server.close()

    def test_direct_send_when_reachable(self, tmp_path):
        store = LogStore(tmp_path / "store")
        server = CollectorServer(store, port=0)
        server.serve_in_thread()
        host, port = server.address
        sink = CollectorSink(f"http://{host}:{port}", tmp_path / "spool.jsonl")
        events = session_events("sess-d", "SN-12", T0)
        for event in events:
            sink.send(event)
        assert len(store.events("sess-d")) == len(events)
        assert not (tmp_path / "spool.jsonl").exists()
        server.close()
