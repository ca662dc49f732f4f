"""Per-workplace orchestrator: loads the cell configuration, runs assembly
sessions step by step, invokes vision checks, commands the fastening tool
over the wire protocol, drives the light indication, and emits the audit
events that become the product's digital passport.

A cell configuration is a line-oriented file from the same format family as
procedure scripts:

    workcell WC-1
    has_tool = true
    has_light = true
    retry_cap = 3
    min_score = 0.8
    tol_px = 20
    torque_band_nm = 0.5
    templates = templates
    tool = pipe

    camera cam-1
      resolution_mp = 2
      fov_deg = 90
      focal_px = 900
      cx = 400
      cy = 300
      k1 = 0

Sessions are driven by one orchestrator thread; operator-facing inputs
(confirmations, alarm acknowledgements, replay frames) arrive from API
threads through the SessionRuntime, which serializes all state mutations
under one lock. Scene frames come either from the deterministic renderer
(simulation mode) or from operator-submitted PGM uploads (replay mode).
Events flow to the logbook through a sink that spools locally while the
collector is unreachable, so a cell keeps working through logbook outages.
"""

from __future__ import annotations

import enum
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from .clock import Clock, SimClock, WallClock
from .logbook import EventKind, EventSink, WorkEvent
from .procedure import (
    InspectParams,
    InstallElementParams,
    OperatorConfirmParams,
    ProcedureScript,
    Step,
    StepKind,
    StepState,
    StepStatus,
    TightenParams,
    activate_step,
    apply_result,
    initial_states,
    next_pending,
    session_complete,
)
from .tooling import DEFAULT_TORQUE_MODEL, Mode
from .vision import (
    CameraModel,
    Correct,
    Detection,
    GrayImage,
    Misplaced,
    Template,
    TemplateLibrary,
    match_template,
    render_scene,
    undistort_point,
    verify_placement,
)
from .wireproto import (
    Telemetry,
    ToolClient,
    ToolParams,
    ToolRejected,
    ToolUnreachable,
    open_pipe_tool,
)

_SESSION_NAMESPACE = uuid.UUID("3c9a61a3-52cc-4d2e-9f6c-0f3e5a1d7b42")
FRAME_TIME_MS = 40  # simulated camera exposure+transfer per capture


class ConfigError(Exception):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


class CameraUnavailable(Exception):
    pass


class LightState(enum.Enum):
    IDLE = "Idle"
    PROCEED = "Proceed"
    ATTENTION = "Attention"
    ALARM = "Alarm"


@dataclass(frozen=True)
class CameraConfig:
    camera_id: str
    resolution_mp: float
    fov_deg: float
    model: CameraModel

    def __post_init__(self):
        if self.resolution_mp <= 0 or self.fov_deg <= 0:
            raise ValueError("camera resolution and field of view must be positive")


@dataclass(frozen=True)
class WorkcellConfig:
    workcell_id: str
    cameras: tuple[CameraConfig, ...] = ()
    has_tool: bool = False
    has_light: bool = True
    retry_cap: int = 3
    min_score: float = 0.8
    tol_px: float = 20.0
    torque_band_nm: float = 0.5
    templates_dir: str | None = None
    tool_address: str = "pipe"  # "pipe" or "tcp:<host>:<port>"
    logbook_url: str | None = None

    def camera(self, camera_id: str | None) -> CameraConfig:
        if camera_id is None:
            if not self.cameras:
                raise CameraUnavailable("cell has no cameras")
            return self.cameras[0]
        for cam in self.cameras:
            if cam.camera_id == camera_id:
                return cam
        raise CameraUnavailable(f"unknown camera {camera_id!r}")


_BOOL = {"true": True, "false": False, "yes": True, "no": False,
         "1": True, "0": False}


def parse_config(text: str) -> WorkcellConfig:
    """Parse a workcell configuration document."""
    workcell_id: str | None = None
    scalars: dict[str, str] = {}
    cameras: list[CameraConfig] = []
    current_cam: tuple[str, dict[str, str]] | None = None

    def flush_camera():
        nonlocal current_cam
        if current_cam is None:
            return
        cam_id, pairs = current_cam
        try:
            cameras.append(CameraConfig(
                camera_id=cam_id,
                resolution_mp=float(pairs.get("resolution_mp", 2.0)),
                fov_deg=float(pairs.get("fov_deg", 90.0)),
                model=CameraModel(
                    focal_px=float(pairs.get("focal_px", 1000.0)),
                    principal_point=(
                        float(pairs.get("cx", 0.0)),
                        float(pairs.get("cy", 0.0)),
                    ),
                    k1=float(pairs.get("k1", 0.0)),
                ),
            ))
        except ValueError as exc:
            raise ConfigError(0, f"camera {cam_id}: {exc}")
        current_cam = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        indented = raw[0] in (" ", "\t")
        if indented:
            if current_cam is None:
                raise ConfigError(lineno, "indented line outside a camera block")
            if "=" not in stripped:
                raise ConfigError(lineno, f"expected 'key = value': {stripped!r}")
            key, _, value = stripped.partition("=")
            current_cam[1][key.strip()] = value.strip()
            continue
        words = stripped.split()
        if words[0] == "workcell":
            flush_camera()
            if len(words) != 2:
                raise ConfigError(lineno, "expected 'workcell <id>'")
            workcell_id = words[1]
        elif words[0] == "camera":
            flush_camera()
            if len(words) != 2:
                raise ConfigError(lineno, "expected 'camera <id>'")
            current_cam = (words[1], {})
        elif "=" in stripped:
            flush_camera()
            key, _, value = stripped.partition("=")
            scalars[key.strip()] = value.strip()
        else:
            raise ConfigError(lineno, f"unknown directive {words[0]!r}")
    flush_camera()

    if workcell_id is None:
        raise ConfigError(0, "missing 'workcell <id>' line")

    def scalar(key, default, convert):
        if key not in scalars:
            return default
        try:
            return convert(scalars[key])
        except (ValueError, KeyError):
            raise ConfigError(0, f"bad value for {key!r}: {scalars[key]!r}")

    return WorkcellConfig(
        workcell_id=workcell_id,
        cameras=tuple(cameras),
        has_tool=scalar("has_tool", False, lambda v: _BOOL[v.lower()]),
        has_light=scalar("has_light", True, lambda v: _BOOL[v.lower()]),
        retry_cap=scalar("retry_cap", 3, int),
        min_score=scalar("min_score", 0.8, float),
        tol_px=scalar("tol_px", 20.0, float),
        torque_band_nm=scalar("torque_band_nm", 0.5, float),
        templates_dir=scalars.get("templates"),
        tool_address=scalars.get("tool", "pipe"),
        logbook_url=scalars.get("logbook"),
    )


def load_config(path: str | Path) -> WorkcellConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class Violation:
    where: str
    message: str

    def __str__(self):
        return f"{self.where}: {self.message}"


def validate_config(cfg: WorkcellConfig, script: ProcedureScript,
                    templates: TemplateLibrary | None = None,
                    ) -> list[Violation]:
    """Equipment/step compatibility checks; empty list means the pair is ok."""
    violations = []
    vision_steps = [s for s in script.steps
                    if s.kind in (StepKind.INSTALL_ELEMENT, StepKind.INSPECT)]
    tighten_steps = [s for s in script.steps if s.kind is StepKind.TIGHTEN]

    if tighten_steps and not cfg.has_tool:
        violations.append(Violation(
            "workcell", "script has Tighten steps but the cell has no tool"
        ))
    if vision_steps:
        if not cfg.cameras:
            violations.append(Violation(
                "workcell", "script has vision steps but the cell has no cameras"
            ))
        for cam in cfg.cameras:
            if cam.fov_deg < 90:
                violations.append(Violation(
                    f"camera {cam.camera_id}",
                    f"field of view {cam.fov_deg} deg is below the 90 deg minimum"
                ))
    if vision_steps and templates is None:
        violations.append(Violation(
            "workcell", "script has vision steps but no template library is configured"
        ))
    camera_ids = {cam.camera_id for cam in cfg.cameras}
    for step in vision_steps:
        if step.params.camera is not None and step.params.camera not in camera_ids:
            violations.append(Violation(
                f"step {step.step_id}",
                f"camera binding {step.params.camera!r} does not exist"
            ))
        if templates is not None and step.params.template_id not in templates:
            violations.append(Violation(
                f"step {step.step_id}",
                f"template {step.params.template_id!r} is not in the library"
            ))
    if cfg.retry_cap < 1:
        violations.append(Violation("workcell", "retry_cap must be at least 1"))
    return violations


# -- Scene sources ---------------------------------------------------------------


@dataclass(frozen=True)
class InjectedOffset:
    """Test/demo hook: displace an element's simulated placement."""

    step_id: str
    dx: int
    dy: int
    persist: bool = False  # False: only the first attempt is offset


class SimulatedSceneSource:
    """Deterministic synthetic bench.

    The bench accumulates elements as install steps execute; every capture
    renders the current bench with seeded noise. Injected offsets displace an
    element's placement (first attempt only, unless persistent), which is how
    misplacement failures are produced on demand.
    """

    def __init__(self, templates: TemplateLibrary, width: int = 640,
                 height: int = 480, noise_sigma: float = 0.02, seed: int = 0,
                 injections: list[InjectedOffset] = ()):
        self.templates = templates
        self.width = width
        self.height = height
        self.noise_sigma = noise_sigma
        self.seed = seed
        self._injections = {inj.step_id: inj for inj in injections}
        self._bench: dict[str, tuple[Template, tuple[int, int]]] = {}
        self._captures = 0
        self.on_capture = None  # hook: (camera_id, GrayImage) -> None

    def _placement(self, step: Step, attempt: int) -> tuple[int, int]:
        region = step.params.expected_region
        x, y = region.x, region.y
        inj = self._injections.get(step.step_id)
        if inj is not None and (inj.persist or attempt == 1):
            x, y = x + inj.dx, y + inj.dy
        return x, y

    def capture(self, step: Step, attempt: int, camera_id: str) -> GrayImage:
        if step.kind in (StepKind.INSTALL_ELEMENT, StepKind.INSPECT):
            tpl = self.templates[step.params.template_id]
            self._bench[step.step_id] = (tpl, self._placement(step, attempt))
        self._captures += 1
        frame = render_scene(
            list(self._bench.values()), self.width, self.height,
            noise_sigma=self.noise_sigma,
            seed=[self.seed, self._captures],
        )
        if self.on_capture is not None:
            self.on_capture(camera_id, frame)
        return frame


class ReplaySceneSource:
    """Frames arrive from the operator API (POST /cameras/<id>/frame)."""

    def __init__(self, timeout_s: float = 120.0):
        self.timeout_s = timeout_s
        self._cond = threading.Condition()
        self._frames: dict[str, list[GrayImage]] = {}
        self.on_capture = None

    def submit(self, camera_id: str, frame: GrayImage) -> None:
        with self._cond:
            self._frames.setdefault(camera_id, []).append(frame)
            self._cond.notify_all()

    def capture(self, step: Step, attempt: int, camera_id: str) -> GrayImage:
        with self._cond:
            ok = self._cond.wait_for(
                lambda: self._frames.get(camera_id),
                timeout=self.timeout_s,
            )
            if not ok:
                raise CameraUnavailable(
                    f"no frame submitted for camera {camera_id!r}"
                )
            frame = self._frames[camera_id].pop(0)
        if self.on_capture is not None:
            self.on_capture(camera_id, frame)
        return frame


# -- Tool connectors --------------------------------------------------------------


class PipeToolConnector:
    """In-process simulated tool; a fresh endpoint per Tighten step."""

    def __init__(self, params: ToolParams):
        self.params = params

    def open(self) -> ToolClient:
        return ToolClient(open_pipe_tool(self.params))


class TcpToolConnector:
    def __init__(self, host: str, port: int):
        self.host = host
        self.port = port

    def open(self) -> ToolClient:
        return ToolClient.connect_tcp(self.host, self.port)


def tool_connector_for(address: str, pipe_params: ToolParams):
    """Build a connector from a config/CLI tool address."""
    if address == "pipe":
        return PipeToolConnector(pipe_params)
    if address.startswith("tcp:"):
        _, host, port = address.split(":")
        return TcpToolConnector(host, int(port))
    raise ValueError(f"bad tool address {address!r}; use 'pipe' or 'tcp:<host>:<port>'")


# -- Session runtime ---------------------------------------------------------------


@dataclass
class TorqueLive:
    setpoint_nm: float
    band_nm: float
    fastener_count: int
    fastener_index: int = 0
    last_t_ms: int = 0
    last_torque_nm: float = 0.0
    recorded_mnm: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "setpoint_nm": self.setpoint_nm,
            "band_nm": self.band_nm,
            "fastener_count": self.fastener_count,
            "fastener_index": self.fastener_index,
            "last_t_ms": self.last_t_ms,
            "last_torque_nm": self.last_torque_nm,
            "recorded_mnm": list(self.recorded_mnm),
        }


class SessionRuntime:
    """All mutable state of one running session, mutation-serialized.

    The orchestrator thread drives the session; operator API threads read
    snapshots and deliver confirmations, alarm acks and replay frames. Every
    stream item (work event, light change, live telemetry) is appended to an
    ordered list that event-stream subscribers replay from any position.
    """

    def __init__(self, session_id: str, cfg: WorkcellConfig,
                 script: ProcedureScript, product_serial: str,
                 clock: Clock, sink: EventSink, mode: str, seed: int):
        self.session_id = session_id
        self.cfg = cfg
        self.script = script
        self.product_serial = product_serial
        self.clock = clock
        self.sink = sink
        self.mode = mode
        self.seed = seed

        self.cond = threading.Condition()
        self.states: list[StepState] = initial_states(script)
        self.status = "created"  # created | running | complete | halted
        self.light = LightState.IDLE
        self.started_ms: int | None = None
        self.ended_ms: int | None = None
        self.active_step_id: str | None = None
        self.events: list[WorkEvent] = []
        self.stream: list[dict] = []
        self.torque: TorqueLive | None = None
        self.last_detection: dict | None = None
        self._confirmed: set[str] = set()
        self._ack_pending = False
        self._next_event_id = 1

    # -- emission (orchestrator thread) ----------------------------------

    def emit(self, kind: EventKind, payload: dict,
             media_ref: str | None = None) -> WorkEvent:
        self.clock.advance_ms(1)
        with self.cond:
            event = WorkEvent(
                event_id=self._next_event_id,
                session_id=self.session_id,
                workcell_id=self.cfg.workcell_id,
                product_serial=self.product_serial,
                timestamp_ms=self.clock.now_ms(),
                kind=kind,
                payload=payload,
                media_ref=media_ref,
            )
            self._next_event_id += 1
            self.events.append(event)
            self.stream.append({"type": "event", "event": event.to_dict()})
            self.cond.notify_all()
        self.sink.send(event)
        return event

    def set_light(self, light: LightState) -> None:
        with self.cond:
            if light is self.light:
                return
            self.light = light
            self.stream.append({"type": "light", "light": light.value})
            self.cond.notify_all()

    def push_telemetry(self, item: dict) -> None:
        with self.cond:
            self.stream.append({"type": "telemetry", **item})
            self.cond.notify_all()

    # -- operator inputs (API threads) -------------------------------------

    def confirm(self, step_id: str) -> str:
        """Operator pressed confirm. Returns 'confirmed' or 'already'."""
        with self.cond:
            state = next((s for s in self.states if s.step_id == step_id), None)
            if state is None:
                raise KeyError(step_id)
            step = self.script.step(step_id)
            if step.kind is not StepKind.OPERATOR_CONFIRM:
                raise ValueError(f"step {step_id} is not an operator confirmation")
            if state.status is StepStatus.PASSED or step_id in self._confirmed:
                # idempotent: re-confirm is a no-op success
                if state.status is StepStatus.PASSED:
                    return "already"
                return "confirmed"
            if state.status is not StepStatus.ACTIVE:
                raise ValueError(f"step {step_id} is not active")
            self._confirmed.add(step_id)
            self.cond.notify_all()
            return "confirmed"

    def acknowledge_alarm(self) -> None:
        with self.cond:
            if self.light is not LightState.ALARM:
                raise ValueError("no alarm to acknowledge")
            self._ack_pending = False
            self.cond.notify_all()

    # -- orchestrator waits --------------------------------------------------

    def wait_confirm(self, step_id: str, timeout_s: float | None) -> bool:
        with self.cond:
            return self.cond.wait_for(
                lambda: step_id in self._confirmed, timeout=timeout_s
            )

    def wait_ack(self, timeout_s: float | None) -> bool:
        with self.cond:
            return self.cond.wait_for(
                lambda: not self._ack_pending, timeout=timeout_s
            )

    def raise_alarm(self) -> None:
        with self.cond:
            self._ack_pending = True
        self.set_light(LightState.ALARM)

    # -- snapshots -----------------------------------------------------------

    def snapshot(self) -> dict:
        with self.cond:
            active = None
            if self.active_step_id is not None:
                step = self.script.step(self.active_step_id)
                active = {
                    "step_id": step.step_id,
                    "kind": step.kind.value,
                    "detail": _step_detail(step),
                }
            return {
                "session_id": self.session_id,
                "workcell_id": self.cfg.workcell_id,
                "product_serial": self.product_serial,
                "procedure_id": self.script.procedure_id,
                "status": self.status,
                "light": self.light.value,
                "started_ms": self.started_ms,
                "ended_ms": self.ended_ms,
                "active_step": active,
                "steps": [
                    {"step_id": s.step_id, "status": s.status.value,
                     "attempts": s.attempts,
                     "kind": self.script.step(s.step_id).kind.value}
                    for s in self.states
                ],
                "last_detection": self.last_detection,
                "torque": self.torque.to_dict() if self.torque else None,
                "event_count": len(self.events),
            }

    def stream_items(self, start: int, keepalive_s: float = 15.0):
        """Yield (index, item) from ``start`` onwards; blocks for new ones.

        Yields (index, None) keepalive markers while idle; ends once the
        session is terminal and everything was delivered.
        """
        index = start
        while True:
            with self.cond:
                self.cond.wait_for(
                    lambda: len(self.stream) > index
                    or self.status in ("complete", "halted"),
                    timeout=keepalive_s,
                )
                items = self.stream[index:]
                terminal = self.status in ("complete", "halted")
            if not items and not terminal:
                yield index, None
                continue
            for item in items:
                yield index, item
                index += 1
            if terminal and index >= len(self.stream):
                return


def _step_detail(step: Step) -> dict:
    p = step.params
    if isinstance(p, InstallElementParams):
        r = p.expected_region
        return {"element_id": p.element_id, "template_id": p.template_id,
                "expected_region": [r.x, r.y, r.w, r.h],
                "tol_px": p.position_tolerance_px, "camera": p.camera}
    if isinstance(p, InspectParams):
        r = p.expected_region
        return {"template_id": p.template_id,
                "expected_region": [r.x, r.y, r.w, r.h],
                "min_score": p.min_score, "camera": p.camera}
    if isinstance(p, TightenParams):
        return {"fastener_count": p.fastener_count,
                "target_torque_nm": p.target_torque_nm,
                "mode": p.mode.value}
    return {"prompt": p.prompt}


# -- Orchestrator -----------------------------------------------------------------


class SessionError(Exception):
    pass


def make_session_id(cfg: WorkcellConfig, product_serial: str, seed: int,
                    deterministic: bool) -> str:
    if deterministic:
        return str(uuid.uuid5(
            _SESSION_NAMESPACE,
            f"{cfg.workcell_id}:{product_serial}:{seed}",
        ))
    return str(uuid.uuid4())


class SessionRunner:
    """Runs one session to completion against pluggable scene/tool/log backends."""

    def __init__(self, cfg: WorkcellConfig, script: ProcedureScript,
                 templates: TemplateLibrary | None, scene_source,
                 tool_connector, sink: EventSink, *,
                 product_serial: str, mode: str = "sim", seed: int = 0,
                 clock: Clock | None = None, auto_confirm: bool = True,
                 operator_timeout_s: float | None = 600.0):
        if not product_serial:
            raise SessionError("product_serial must be non-empty")
        violations = validate_config(cfg, script, templates)
        if violations:
            raise SessionError(
                "config/script validation failed: "
                + "; ".join(str(v) for v in violations)
            )
        self.cfg = cfg
        self.script = script
        self.templates = templates
        self.scene_source = scene_source
        self.tool_connector = tool_connector
        self.auto_confirm = auto_confirm
        self.operator_timeout_s = operator_timeout_s
        clock = clock if clock is not None else (
            SimClock() if mode == "sim" else WallClock()
        )
        self.runtime = SessionRuntime(
            session_id=make_session_id(cfg, product_serial, seed,
                                       deterministic=(mode == "sim")),
            cfg=cfg, script=script, product_serial=product_serial,
            clock=clock, sink=sink, mode=mode, seed=seed,
        )

    def run(self) -> SessionRuntime:
        rt = self.runtime
        script = self.script
        with rt.cond:
            rt.status = "running"
            rt.started_ms = rt.clock.now_ms()
        rt.set_light(LightState.PROCEED)
        rt.emit(EventKind.SESSION_BEGIN, {
            "procedure_id": script.procedure_id,
            "product_type": script.product_type,
            "revision": script.revision,
            "steps": [{"step_id": s.step_id, "kind": s.kind.value}
                      for s in script.steps],
            "mode": rt.mode,
            "seed": rt.seed,
        })

        halted = False
        while True:
            step = next_pending(script, rt.states)
            if step is None:
                break
            with rt.cond:
                rt.states = activate_step(rt.states, step.step_id)
                rt.active_step_id = step.step_id
                attempt = next(
                    s.attempts for s in rt.states if s.step_id == step.step_id
                ) + 1
            rt.set_light(
                LightState.ATTENTION
                if step.kind is StepKind.OPERATOR_CONFIRM
                else LightState.PROCEED
            )
            start_ms = rt.clock.now_ms()
            rt.emit(EventKind.STEP_START, {
                "step_id": step.step_id, "kind": step.kind.value,
                "attempt": attempt,
            })

            outcome, reason = self._run_step(step, attempt)

            rt.emit(EventKind.STEP_RESULT, {
                "step_id": step.step_id,
                "outcome": outcome.value,
                "attempt": attempt,
                "reason": reason,
                "duration_ms": rt.clock.now_ms() - start_ms,
            })
            with rt.cond:
                rt.states, halted = apply_result(
                    rt.states, step.step_id, outcome, self.cfg.retry_cap
                )
                rt.active_step_id = None

            if outcome is StepStatus.FAILED:
                rt.raise_alarm()
                rt.emit(EventKind.ALARM_RAISED, {
                    "step_id": step.step_id, "reason": reason,
                })
                if halted:
                    break
                if self.auto_confirm:
                    rt.acknowledge_alarm()
                    rt.emit(EventKind.OPERATOR_ACTION, {
                        "step_id": step.step_id, "action": "auto_acknowledge",
                    })
                    rt.emit(EventKind.ALARM_ACKED, {"step_id": step.step_id})
                    rt.set_light(LightState.ATTENTION)
                else:
                    if not rt.wait_ack(self.operator_timeout_s):
                        halted = True
                        break
                    rt.emit(EventKind.OPERATOR_ACTION, {
                        "step_id": step.step_id, "action": "acknowledge_alarm",
                    })
                    rt.emit(EventKind.ALARM_ACKED, {"step_id": step.step_id})
                    rt.set_light(LightState.ATTENTION)
            else:
                rt.set_light(LightState.PROCEED)

        complete = session_complete(rt.states)
        counts = {
            "passed": sum(s.status is StepStatus.PASSED for s in rt.states),
            "failed": sum(s.status is StepStatus.FAILED for s in rt.states),
            "skipped": sum(s.status is StepStatus.SKIPPED for s in rt.states),
        }
        rt.emit(EventKind.SESSION_END, {
            "outcome": "Completed" if complete else "Halted", **counts,
        })
        with rt.cond:
            rt.status = "complete" if complete else "halted"
            rt.ended_ms = rt.clock.now_ms()
            rt.cond.notify_all()
        if complete:
            rt.set_light(LightState.IDLE)
        rt.sink.flush()
        return rt

    # -- step execution -------------------------------------------------------

    def _run_step(self, step: Step, attempt: int) -> tuple[StepStatus, str | None]:
        if step.kind in (StepKind.INSTALL_ELEMENT, StepKind.INSPECT):
            return self._run_vision_step(step, attempt)
        if step.kind is StepKind.TIGHTEN:
            return self._run_tighten_step(step)
        return self._run_confirm_step(step)

    def _run_vision_step(self, step: Step,
                         attempt: int) -> tuple[StepStatus, str | None]:
        rt = self.runtime
        params = step.params
        try:
            cam = self.cfg.camera(params.camera)
            frame = self.scene_source.capture(step, attempt, cam.camera_id)
        except CameraUnavailable as exc:
            return StepStatus.FAILED, f"camera_unavailable: {exc}"
        rt.clock.advance_ms(FRAME_TIME_MS)

        raw = match_template(frame, self.templates[params.template_id])
        center = undistort_point(raw.center, cam.model)
        det = Detection(raw.template_id, center, raw.score)

        if isinstance(params, InstallElementParams):
            tol, min_score = params.position_tolerance_px, self.cfg.min_score
        else:
            tol, min_score = self.cfg.tol_px, params.min_score
        verdict = verify_placement(det, params.expected_region, tol, min_score)
        region = params.expected_region
        verdict_name = type(verdict).__name__
        offset = verdict.offset_px if isinstance(verdict, Misplaced) else None
        detection_info = {
            "step_id": step.step_id,
            "template_id": params.template_id,
            "camera_id": cam.camera_id,
            "center": [det.center[0], det.center[1]],
            "score": det.score,
            "verdict": verdict_name,
            "offset_px": offset,
            "expected_region": [region.x, region.y, region.w, region.h],
            "tol_px": tol,
        }
        with rt.cond:
            rt.last_detection = detection_info
        rt.emit(EventKind.DETECTION, detection_info)

        if isinstance(verdict, Correct):
            return StepStatus.PASSED, None
        if isinstance(verdict, Misplaced):
            return StepStatus.FAILED, "misplaced"
        return StepStatus.FAILED, "not_found"

    def _run_tighten_step(self, step: Step) -> tuple[StepStatus, str | None]:
        rt = self.runtime
        params: TightenParams = step.params
        setpoint = params.target_torque_nm
        with rt.cond:
            rt.torque = TorqueLive(
                setpoint_nm=setpoint,
                band_nm=self.cfg.torque_band_nm,
                fastener_count=params.fastener_count,
            )
        try:
            client = self.tool_connector.open()
        except ToolUnreachable as exc:
            return StepStatus.FAILED, f"tool_unreachable: {exc}"
        try:
            for index in range(params.fastener_count):
                with rt.cond:
                    rt.torque.fastener_index = index
                last_t_ms = 0

                def on_telemetry(t: Telemetry, index=index):
                    nonlocal last_t_ms
                    last_t_ms = t.t_ms
                    torque_nm = (t.current_ma / 1000.0) * \
                        DEFAULT_TORQUE_MODEL.k_nm_per_a
                    with rt.cond:
                        rt.torque.last_t_ms = t.t_ms
                        rt.torque.last_torque_nm = torque_nm
                    rt.push_telemetry({
                        "step_id": step.step_id,
                        "fastener_index": index,
                        "t_ms": t.t_ms,
                        "torque_nm": torque_nm,
                        "setpoint_nm": setpoint,
                        "band_nm": self.cfg.torque_band_nm,
                    })

                result = client.run_fastener(params.mode, setpoint,
                                             on_telemetry=on_telemetry)
                rt.clock.advance_ms(last_t_ms)
                status_name = {0: "Completed", 1: "Stalled", 2: "Aborted"}.get(
                    result.status, "Unknown"
                )
                with rt.cond:
                    rt.torque.recorded_mnm.append(result.final_torque_mnm)
                rt.emit(EventKind.TORQUE_RESULT, {
                    "step_id": step.step_id,
                    "fastener_index": index,
                    "final_torque_mnm": result.final_torque_mnm,
                    "mode": params.mode.value,
                    "status": status_name,
                })
                if status_name != "Completed":
                    return StepStatus.FAILED, f"tool_status:{status_name}"
                deviation = abs(result.final_torque_mnm / 1000.0 - setpoint)
                if deviation > self.cfg.torque_band_nm:
                    return StepStatus.FAILED, "torque_out_of_band"
            return StepStatus.PASSED, None
        except ToolRejected as exc:
            return StepStatus.FAILED, f"tool_rejected: {exc}"
        except ToolUnreachable as exc:
            return StepStatus.FAILED, f"tool_unreachable: {exc}"
        finally:
            client.close()

    def _run_confirm_step(self, step: Step) -> tuple[StepStatus, str | None]:
        rt = self.runtime
        if self.auto_confirm:
            rt.emit(EventKind.OPERATOR_ACTION, {
                "step_id": step.step_id, "action": "auto_confirm",
            })
            return StepStatus.PASSED, None
        if not rt.wait_confirm(step.step_id, self.operator_timeout_s):
            return StepStatus.FAILED, "confirmation_timeout"
        rt.emit(EventKind.OPERATOR_ACTION, {
            "step_id": step.step_id, "action": "confirm",
        })
        return StepStatus.PASSED, None
