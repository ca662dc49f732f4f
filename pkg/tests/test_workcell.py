"""Workcell orchestration tests: config validation against the equipment
table, simulated scenes, full deterministic sessions, retries and halts, and
the event-sourcing round trip."""

import pytest

from conftest import fast_tool_params, make_template_library
from asmcell.logbook import EventKind, MemorySink, event_to_json
from asmcell.procedure import StepStatus, parse_procedure
from asmcell.tooling import Mode
from asmcell.workcell import (
    InjectedOffset,
    LightState,
    PipeToolConnector,
    SessionError,
    SessionRunner,
    SimulatedSceneSource,
    Violation,
    parse_config,
    validate_config,
)

INSPECT_ONLY = """\
procedure P-I
product crate-mark
revision 1

step S1 Inspect
  template_id = T-1
  expected_region = 50,50,16,16
  min_score = 0.8
"""

TIGHTEN_ONLY = """\
procedure P-T
product panel
revision 1

step S1 Tighten
  fastener_count = 2
  target_torque_nm = 2.0
  mode = TorqueLimit
"""


def config_text(cameras=1, has_tool=True, fov=90.0):
    lines = ["workcell WC-X", f"has_tool = {'true' if has_tool else 'false'}",
             "has_light = true"]
    for i in range(1, cameras + 1):
        lines += [f"camera cam-{i}", "  resolution_mp = 2",
                  f"  fov_deg = {fov}", "  focal_px = 900",
                  "  cx = 320", "  cy = 240", "  k1 = 0"]
    return "\n".join(lines) + "\n"


class TestConfigParsing:
    def test_parse_full_config(self, cell_config):
        assert cell_config.workcell_id == "WC-1"
        assert cell_config.has_tool
        assert len(cell_config.cameras) == 1
        assert cell_config.cameras[0].fov_deg == 90
        assert cell_config.retry_cap == 3

    def test_defaults(self):
        cfg = parse_config("workcell WC-0\n")
        assert not cfg.has_tool
        assert cfg.min_score == 0.8
        assert cfg.tol_px == 20.0
        assert cfg.torque_band_nm == 0.5
        assert cfg.cameras == ()

    def test_bad_directive_rejected(self):
        from asmcell.workcell import ConfigError

        with pytest.raises(ConfigError):
            parse_config("workcell WC\nbogus directive here\n")


class TestValidateConfig:
    def test_warehouse_cell_with_inspect_script(self, template_lib):
        cfg = parse_config(config_text(cameras=1, has_tool=False))
        script = parse_procedure(INSPECT_ONLY)
        assert validate_config(cfg, script, template_lib) == []

    def test_assembly_cell_with_tighten_script(self, template_lib,
                                               reference_script):
        cfg = parse_config(config_text(cameras=3, has_tool=True))
        assert validate_config(cfg, reference_script, template_lib) == []

    def test_tighten_without_tool_is_violation(self, template_lib):
        cfg = parse_config(config_text(cameras=1, has_tool=False))
        script = parse_procedure(TIGHTEN_ONLY)
        violations = validate_config(cfg, script, template_lib)
        assert any("no tool" in v.message for v in violations)

    def test_vision_step_without_camera_is_violation(self, template_lib):
        cfg = parse_config(config_text(cameras=0, has_tool=True))
        script = parse_procedure(INSPECT_ONLY)
        violations = validate_config(cfg, script, template_lib)
        assert any("no cameras" in v.message for v in violations)

    def test_narrow_fov_is_violation(self, template_lib):
        cfg = parse_config(config_text(cameras=1, fov=60))
        script = parse_procedure(INSPECT_ONLY)
        violations = validate_config(cfg, script, template_lib)
        assert any("90" in v.message for v in violations)

    def test_missing_template_is_violation(self, template_lib):
        cfg = parse_config(config_text(cameras=1))
        script = parse_procedure(INSPECT_ONLY.replace("T-1", "T-404"))
        violations = validate_config(cfg, script, template_lib)
        assert any("T-404" in v.message for v in violations)

    def test_unknown_camera_binding_is_violation(self, template_lib):
        cfg = parse_config(config_text(cameras=1))
        script = parse_procedure(
            INSPECT_ONLY.replace("min_score = 0.8",
                                 "min_score = 0.8\n  camera = cam-9")
        )
        violations = validate_config(cfg, script, template_lib)
        assert any("cam-9" in v.message for v in violations)


class TestSimulatedScene:
    def test_bench_accumulates_elements(self, template_lib, reference_script):
        scene = SimulatedSceneSource(template_lib, noise_sigma=0.0)
        s1, s2 = reference_script.steps[0], reference_script.steps[1]
        frame1 = scene.capture(s1, 1, "cam-1")
        t1 = template_lib["T-1"].image.pixels
        assert (frame1.pixels[100:116, 100:116] == t1).all()
        frame2 = scene.capture(s2, 1, "cam-1")
        t2 = template_lib["T-2"].image.pixels
        assert (frame2.pixels[100:116, 100:116] == t1).all()
        assert (frame2.pixels[200:216, 300:316] == t2).all()

    def test_injection_offsets_first_attempt_only(self, template_lib,
                                                  reference_script):
        scene = SimulatedSceneSource(
            template_lib, noise_sigma=0.0,
            injections=[InjectedOffset("S1", dx=50, dy=0)],
        )
        s1 = reference_script.steps[0]
        frame = scene.capture(s1, 1, "cam-1")
        t1 = template_lib["T-1"].image.pixels
        assert (frame.pixels[100:116, 150:166] == t1).all()
        frame = scene.capture(s1, 2, "cam-1")
        assert (frame.pixels[100:116, 100:116] == t1).all()

    def test_persistent_injection(self, template_lib, reference_script):
        scene = SimulatedSceneSource(
            template_lib, noise_sigma=0.0,
            injections=[InjectedOffset("S1", dx=50, dy=0, persist=True)],
        )
        s1 = reference_script.steps[0]
        for attempt in (1, 2, 3):
            frame = scene.capture(s1, attempt, "cam-1")
            t1 = template_lib["T-1"].image.pixels
            assert (frame.pixels[100:116, 150:166] == t1).all()


def run_reference_session(cfg, script, template_lib, *, seed=7,
                          injections=(), sink=None):
    sink = sink if sink is not None else MemorySink()
    scene = SimulatedSceneSource(template_lib, noise_sigma=0.02, seed=seed,
                                 injections=injections)
    runner = SessionRunner(
        cfg, script, template_lib, scene,
        PipeToolConnector(fast_tool_params(seed=seed)),
        sink, product_serial="SN-100", mode="sim", seed=seed,
    )
    return runner.run(), sink


class TestSession:
    def test_happy_path_completes(self, cell_config, reference_script,
                                  template_lib):
        rt, sink = run_reference_session(cell_config, reference_script,
                                         template_lib)
        assert rt.status == "complete"
        assert all(s.status is StepStatus.PASSED for s in rt.states)
        assert rt.light is LightState.IDLE
        kinds = [e.kind for e in sink.events]
        assert kinds[0] is EventKind.SESSION_BEGIN
        assert kinds[-1] is EventKind.SESSION_END
        assert kinds.count(EventKind.STEP_START) == 5
        assert kinds.count(EventKind.STEP_RESULT) == 5
        assert kinds.count(EventKind.DETECTION) == 3  # 2 installs + 1 inspect
        assert kinds.count(EventKind.TORQUE_RESULT) == 4
        ids = [e.event_id for e in sink.events]
        assert ids == list(range(1, len(ids) + 1))
        times = [e.timestamp_ms for e in sink.events]
        assert times == sorted(times)

    def test_detection_scores_are_high(self, cell_config, reference_script,
                                       template_lib):
        rt, sink = run_reference_session(cell_config, reference_script,
                                         template_lib)
        scores = [e.payload["score"] for e in sink.events
                  if e.kind is EventKind.DETECTION]
        assert len(scores) == 3
        assert all(s >= 0.9 for s in scores)

    def test_torques_within_band(self, cell_config, reference_script,
                                 template_lib):
        rt, sink = run_reference_session(cell_config, reference_script,
                                         template_lib)
        torques = [e.payload["final_torque_mnm"] for e in sink.events
                   if e.kind is EventKind.TORQUE_RESULT]
        assert len(torques) == 4
        assert all(abs(t - 2000) <= 500 for t in torques)

    def test_bit_reproducible(self, cell_config, reference_script,
                              template_lib):
        _, sink_a = run_reference_session(cell_config, reference_script,
                                          template_lib, seed=7)
        _, sink_b = run_reference_session(cell_config, reference_script,
                                          template_lib, seed=7)
        log_a = [event_to_json(e) for e in sink_a.events]
        log_b = [event_to_json(e) for e in sink_b.events]
        assert log_a == log_b

    def test_different_seed_changes_log(self, cell_config, reference_script,
                                        template_lib):
        _, sink_a = run_reference_session(cell_config, reference_script,
                                          template_lib, seed=7)
        _, sink_b = run_reference_session(cell_config, reference_script,
                                          template_lib, seed=8)
        assert [event_to_json(e) for e in sink_a.events] != \
            [event_to_json(e) for e in sink_b.events]

    def test_transient_misplacement_retries_then_passes(
            self, cell_config, reference_script, template_lib):
        rt, sink = run_reference_session(
            cell_config, reference_script, template_lib,
            injections=[InjectedOffset("S1", dx=50, dy=0)],
        )
        assert rt.status == "complete"
        s1 = next(s for s in rt.states if s.step_id == "S1")
        assert s1.status is StepStatus.PASSED
        assert s1.attempts == 2
        kinds = [e.kind for e in sink.events]
        assert kinds.count(EventKind.ALARM_RAISED) == 1
        assert kinds.count(EventKind.ALARM_ACKED) == 1
        failed = [e for e in sink.events if e.kind is EventKind.STEP_RESULT
                  and e.payload["outcome"] == "Failed"]
        assert len(failed) == 1
        assert failed[0].payload["reason"] == "misplaced"

    def test_persistent_failure_halts_after_retry_cap(
            self, cell_config, reference_script, template_lib):
        rt, sink = run_reference_session(
            cell_config, reference_script, template_lib,
            injections=[InjectedOffset("S1", dx=50, dy=0, persist=True)],
        )
        assert rt.status == "halted"
        s1 = next(s for s in rt.states if s.step_id == "S1")
        assert s1.status is StepStatus.FAILED
        assert s1.attempts == 3
        assert rt.light is LightState.ALARM
        starts = [e for e in sink.events if e.kind is EventKind.STEP_START]
        assert [e.payload["attempt"] for e in starts] == [1, 2, 3]
        end = sink.events[-1]
        assert end.kind is EventKind.SESSION_END
        assert end.payload["outcome"] == "Halted"

    def test_empty_serial_rejected(self, cell_config, reference_script,
                                   template_lib):
        scene = SimulatedSceneSource(template_lib)
        with pytest.raises(SessionError):
            SessionRunner(cell_config, reference_script, template_lib, scene,
                          PipeToolConnector(fast_tool_params()), MemorySink(),
                          product_serial="", mode="sim", seed=0)

    def test_validation_failure_rejected_at_start(self, reference_script,
                                                  template_lib):
        cfg = parse_config(config_text(cameras=1, has_tool=False))
        scene = SimulatedSceneSource(template_lib)
        with pytest.raises(SessionError):
            SessionRunner(cfg, reference_script, template_lib, scene,
                          PipeToolConnector(fast_tool_params()), MemorySink(),
                          product_serial="SN-1", mode="sim", seed=0)

    def test_event_sourcing_round_trip(self, cell_config, reference_script,
                                       template_lib):
        """Replaying StepResult events rebuilds the terminal step states."""
        rt, sink = run_reference_session(
            cell_config, reference_script, template_lib,
            injections=[InjectedOffset("S2", dx=40, dy=40)],
        )
        rebuilt = {s["step_id"]: {"status": "Pending", "attempts": 0}
                   for s in sink.events[0].payload["steps"]}
        for event in sink.events:
            if event.kind is not EventKind.STEP_RESULT:
                continue
            entry = rebuilt[event.payload["step_id"]]
            entry["attempts"] = event.payload["attempt"]
            if event.payload["outcome"] == "Passed":
                entry["status"] = "Passed"
            elif event.payload["attempt"] >= cell_config.retry_cap:
                entry["status"] = "Failed"
            else:
                entry["status"] = "Pending"
        for state in rt.states:
            entry = rebuilt[state.step_id]
            assert entry["status"] == state.status.value
            assert entry["attempts"] == state.attempts

    def test_exactly_one_active_step_throughout(self, cell_config,
                                                reference_script,
                                                template_lib):
        rt, sink = run_reference_session(cell_config, reference_script,
                                         template_lib)
        # terminal state: no active steps at all
        assert all(s.status is not StepStatus.ACTIVE for s in rt.states)

    def test_actuation_cutoff_script_passes_too(self, cell_config,
                                                template_lib):
        script = parse_procedure(
            TIGHTEN_ONLY.replace("TorqueLimit", "ActuationCutoff")
        )
        scene = SimulatedSceneSource(template_lib, seed=3)
        runner = SessionRunner(
            cell_config, script, template_lib, scene,
            PipeToolConnector(fast_tool_params(seed=3)), MemorySink(),
            product_serial="SN-AC", mode="sim", seed=3,
        )
        rt = runner.run()
        assert rt.status == "complete"
