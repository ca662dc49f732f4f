"""Procedure scripts: the declarative programs a workcell executes.

A script is data, not code: a fixed header plus an ordered list of steps, in
a line-oriented UTF-8 format (full grammar in docs/procedure-format.ebnf):

    # free comment
    procedure P-100
    product sat-panel
    revision 3

    step S1 InstallElement
      element_id = EL-1
      template_id = T-1
      expected_region = 100,100,64,64
      position_tolerance_px = 20

    step S2 Tighten
      fastener_count = 4
      target_torque_nm = 2.0
      mode = TorqueLimit

Step kinds are InstallElement, Tighten, Inspect and OperatorConfirm; there is
deliberately no branching, looping or expression syntax. Regions are
x,y,w,h integer rectangles, torques decimal Nm. Vision steps may name a
camera; otherwise the cell's first camera is used.

The step engine is pure: states are immutable values, transitions return new
state lists. A failed step goes back to Pending for another attempt until the
retry cap is exhausted, at which point it stays Failed and the session halts.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

from .tooling import Mode
from .vision import Region


class ProcedureSyntaxError(Exception):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


class ProcedureValidationError(Exception):
    def __init__(self, step_id: str | None, message: str):
        where = f"step {step_id}: " if step_id else ""
        super().__init__(f"{where}{message}")
        self.step_id = step_id
        self.message = message


class UnknownStep(Exception):
    pass


class NotActive(Exception):
    pass


class InconsistentState(Exception):
    pass


class StepKind(enum.Enum):
    INSTALL_ELEMENT = "InstallElement"
    TIGHTEN = "Tighten"
    INSPECT = "Inspect"
    OPERATOR_CONFIRM = "OperatorConfirm"


@dataclass(frozen=True)
class InstallElementParams:
    element_id: str
    template_id: str
    expected_region: Region
    position_tolerance_px: float
    camera: str | None = None

    def __post_init__(self):
        if self.position_tolerance_px < 0:
            raise ValueError("position_tolerance_px must be non-negative")


@dataclass(frozen=True)
class TightenParams:
    fastener_count: int
    target_torque_nm: float
    mode: Mode

    def __post_init__(self):
        if self.fastener_count < 1:
            raise ValueError("fastener_count must be at least 1")
        if not self.target_torque_nm > 0:
            raise ValueError("target_torque_nm must be positive")


@dataclass(frozen=True)
class InspectParams:
    template_id: str
    expected_region: Region
    min_score: float
    camera: str | None = None

    def __post_init__(self):
        if not -1.0 <= self.min_score <= 1.0:
            raise ValueError("min_score must lie in [-1, 1]")


@dataclass(frozen=True)
class OperatorConfirmParams:
    prompt: str


StepParams = (InstallElementParams | TightenParams | InspectParams
              | OperatorConfirmParams)

_KIND_OF_PARAMS = {
    InstallElementParams: StepKind.INSTALL_ELEMENT,
    TightenParams: StepKind.TIGHTEN,
    InspectParams: StepKind.INSPECT,
    OperatorConfirmParams: StepKind.OPERATOR_CONFIRM,
}


@dataclass(frozen=True)
class Step:
    step_id: str
    params: StepParams

    @property
    def kind(self) -> StepKind:
        return _KIND_OF_PARAMS[type(self.params)]


@dataclass(frozen=True)
class ProcedureScript:
    procedure_id: str
    product_type: str
    revision: int
    steps: tuple[Step, ...]

    def __post_init__(self):
        if self.revision < 1:
            raise ProcedureValidationError(None, "revision must be >= 1")
        if not self.steps:
            raise ProcedureValidationError(None, "script has no steps")
        seen = set()
        for step in self.steps:
            if step.step_id in seen:
                raise ProcedureValidationError(
                    step.step_id, "duplicate step id"
                )
            seen.add(step.step_id)

    def step(self, step_id: str) -> Step:
        for s in self.steps:
            if s.step_id == step_id:
                return s
        raise UnknownStep(step_id)


class StepStatus(enum.Enum):
    PENDING = "Pending"
    ACTIVE = "Active"
    PASSED = "Passed"
    FAILED = "Failed"
    SKIPPED = "Skipped"


@dataclass(frozen=True)
class StepState:
    step_id: str
    status: StepStatus = StepStatus.PENDING
    attempts: int = 0


# -- Parsing -------------------------------------------------------------------

_REQUIRED_KEYS = {
    StepKind.INSTALL_ELEMENT: {"element_id", "template_id", "expected_region",
                               "position_tolerance_px"},
    StepKind.TIGHTEN: {"fastener_count", "target_torque_nm", "mode"},
    StepKind.INSPECT: {"template_id", "expected_region", "min_score"},
    StepKind.OPERATOR_CONFIRM: {"prompt"},
}
_OPTIONAL_KEYS = {
    StepKind.INSTALL_ELEMENT: {"camera"},
    StepKind.TIGHTEN: set(),
    StepKind.INSPECT: {"camera"},
    StepKind.OPERATOR_CONFIRM: set(),
}


def _parse_region(value: str, lineno: int) -> Region:
    parts = [p.strip() for p in value.split(",")]
    if len(parts) != 4:
        raise ProcedureSyntaxError(lineno, f"region must be x,y,w,h: {value!r}")
    try:
        x, y, w, h = (int(p) for p in parts)
    except ValueError:
        raise ProcedureSyntaxError(lineno, f"region fields must be integers: {value!r}")
    try:
        return Region(x, y, w, h)
    except ValueError as exc:
        raise ProcedureSyntaxError(lineno, str(exc))


def _parse_number(value: str, lineno: int, key: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ProcedureSyntaxError(lineno, f"{key} must be a number: {value!r}")


def _parse_int(value: str, lineno: int, key: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ProcedureSyntaxError(lineno, f"{key} must be an integer: {value!r}")


def _build_params(kind: StepKind, step_id: str,
                  pairs: dict[str, tuple[str, int]]) -> StepParams:
    keys = set(pairs)
    missing = _REQUIRED_KEYS[kind] - keys
    if missing:
        raise ProcedureValidationError(
            step_id, f"missing keys for {kind.value}: {', '.join(sorted(missing))}"
        )
    extra = keys - _REQUIRED_KEYS[kind] - _OPTIONAL_KEYS[kind]
    if extra:
        raise ProcedureValidationError(
            step_id, f"unexpected keys for {kind.value}: {', '.join(sorted(extra))}"
        )

    def value(key):
        return pairs[key][0]

    def line(key):
        return pairs[key][1]

    try:
        if kind is StepKind.INSTALL_ELEMENT:
            return InstallElementParams(
                element_id=value("element_id"),
                template_id=value("template_id"),
                expected_region=_parse_region(value("expected_region"),
                                              line("expected_region")),
                position_tolerance_px=_parse_number(
                    value("position_tolerance_px"),
                    line("position_tolerance_px"), "position_tolerance_px"),
                camera=value("camera") if "camera" in pairs else None,
            )
        if kind is StepKind.TIGHTEN:
            mode_text = value("mode")
            try:
                mode = Mode(mode_text)
            except ValueError:
                raise ProcedureValidationError(
                    step_id, f"unknown tighten mode {mode_text!r}"
                )
            return TightenParams(
                fastener_count=_parse_int(value("fastener_count"),
                                          line("fastener_count"),
                                          "fastener_count"),
                target_torque_nm=_parse_number(value("target_torque_nm"),
                                               line("target_torque_nm"),
                                               "target_torque_nm"),
                mode=mode,
            )
        if kind is StepKind.INSPECT:
            return InspectParams(
                template_id=value("template_id"),
                expected_region=_parse_region(value("expected_region"),
                                              line("expected_region")),
                min_score=_parse_number(value("min_score"),
                                        line("min_score"), "min_score"),
                camera=value("camera") if "camera" in pairs else None,
            )
        return OperatorConfirmParams(prompt=value("prompt"))
    except ValueError as exc:
        raise ProcedureValidationError(step_id, str(exc))


def parse_procedure(text: str) -> ProcedureScript:
    """Parse and validate a procedure document.

    Raises ProcedureSyntaxError for malformed text and
    ProcedureValidationError for well-formed but invalid content.
    """
    header: dict[str, str] = {}
    steps: list[Step] = []
    current: tuple[str, StepKind, dict[str, tuple[str, int]]] | None = None

    def flush_current():
        nonlocal current
        if current is not None:
            step_id, kind, pairs = current
            steps.append(Step(step_id, _build_params(kind, step_id, pairs)))
            current = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        indented = raw[0] in (" ", "\t")

        if indented:
            if current is None:
                raise ProcedureSyntaxError(
                    lineno, "indented line outside a step block"
                )
            if "=" not in stripped:
                raise ProcedureSyntaxError(
                    lineno, f"expected 'key = value', got {stripped!r}"
                )
            key, _, value = stripped.partition("=")
            key = key.strip()
            value = value.strip()
            if not key:
                raise ProcedureSyntaxError(lineno, "empty key")
            if key in current[2]:
                raise ProcedureSyntaxError(lineno, f"duplicate key {key!r}")
            current[2][key] = (value, lineno)
            continue

        words = stripped.split()
        keyword = words[0]
        if keyword in ("procedure", "product", "revision"):
            flush_current()
            if len(words) < 2:
                raise ProcedureSyntaxError(lineno, f"{keyword} needs a value")
            if keyword in header:
                raise ProcedureSyntaxError(lineno, f"duplicate {keyword} line")
            if steps or current:
                raise ProcedureSyntaxError(
                    lineno, f"{keyword} must appear before the first step"
                )
            header[keyword] = " ".join(words[1:])
        elif keyword == "step":
            flush_current()
            if len(words) != 3:
                raise ProcedureSyntaxError(
                    lineno, "expected 'step <id> <kind>'"
                )
            _, step_id, kind_text = words
            try:
                kind = StepKind(kind_text)
            except ValueError:
                raise ProcedureValidationError(
                    step_id, f"unknown step kind {kind_text!r}"
                )
            current = (step_id, kind, {})
        else:
            raise ProcedureSyntaxError(
                lineno, f"unknown directive {keyword!r}"
            )

    flush_current()

    for field in ("procedure", "product", "revision"):
        if field not in header:
            raise ProcedureSyntaxError(0, f"missing {field!r} header line")
    try:
        revision = int(header["revision"])
    except ValueError:
        raise ProcedureSyntaxError(
            0, f"revision must be an integer: {header['revision']!r}"
        )

    return ProcedureScript(
        procedure_id=header["procedure"],
        product_type=header["product"],
        revision=revision,
        steps=tuple(steps),
    )


def _format_number(x: float) -> str:
    return repr(int(x)) if float(x).is_integer() else repr(float(x))


def serialize_procedure(script: ProcedureScript) -> str:
    """Canonical text form; parse_procedure round-trips it exactly."""
    lines = [
        f"procedure {script.procedure_id}",
        f"product {script.product_type}",
        f"revision {script.revision}",
    ]
    for step in script.steps:
        lines.append("")
        lines.append(f"step {step.step_id} {step.kind.value}")
        p = step.params
        if isinstance(p, InstallElementParams):
            r = p.expected_region
            lines.append(f"  element_id = {p.element_id}")
            lines.append(f"  template_id = {p.template_id}")
            lines.append(f"  expected_region = {r.x},{r.y},{r.w},{r.h}")
            lines.append(
                f"  position_tolerance_px = {_format_number(p.position_tolerance_px)}"
            )
            if p.camera is not None:
                lines.append(f"  camera = {p.camera}")
        elif isinstance(p, TightenParams):
            lines.append(f"  fastener_count = {p.fastener_count}")
            lines.append(
                f"  target_torque_nm = {_format_number(p.target_torque_nm)}"
            )
            lines.append(f"  mode = {p.mode.value}")
        elif isinstance(p, InspectParams):
            r = p.expected_region
            lines.append(f"  template_id = {p.template_id}")
            lines.append(f"  expected_region = {r.x},{r.y},{r.w},{r.h}")
            lines.append(f"  min_score = {_format_number(p.min_score)}")
            if p.camera is not None:
                lines.append(f"  camera = {p.camera}")
        else:
            lines.append(f"  prompt = {p.prompt}")
    return "\n".join(lines) + "\n"


# -- Step engine ---------------------------------------------------------------


def initial_states(script: ProcedureScript) -> list[StepState]:
    return [StepState(step.step_id) for step in script.steps]


def _check_coverage(script: ProcedureScript, states: list[StepState]) -> None:
    if [s.step_id for s in states] != [s.step_id for s in script.steps]:
        raise InconsistentState(
            "states must cover the script's steps exactly once, in order"
        )


def next_pending(script: ProcedureScript,
                 states: list[StepState]) -> Step | None:
    """First Pending step, or None when no Pending steps remain."""
    _check_coverage(script, states)
    active = [s for s in states if s.status is StepStatus.ACTIVE]
    if len(active) > 1:
        raise InconsistentState(
            f"multiple active steps: {[s.step_id for s in active]}"
        )
    for state, step in zip(states, script.steps):
        if state.status is StepStatus.PENDING:
            return step
    return None


def activate_step(states: list[StepState], step_id: str) -> list[StepState]:
    """Mark one Pending step Active; exactly one step may be Active."""
    if any(s.status is StepStatus.ACTIVE for s in states):
        raise InconsistentState("another step is already active")
    out = []
    found = False
    for s in states:
        if s.step_id == step_id:
            found = True
            if s.status is not StepStatus.PENDING:
                raise NotActive(f"step {step_id} is {s.status.value}, not Pending")
            out.append(replace(s, status=StepStatus.ACTIVE))
        else:
            out.append(s)
    if not found:
        raise UnknownStep(step_id)
    return out


def apply_result(states: list[StepState], step_id: str, outcome: StepStatus,
                 retry_cap: int = 3) -> tuple[list[StepState], bool]:
    """Record a step attempt's outcome.

    Returns (new states, halted). Passed steps stay Passed; a Failed step
    returns to Pending for a retry until its attempt count reaches
    retry_cap, after which it stays Failed and the session halts.
    """
    if outcome not in (StepStatus.PASSED, StepStatus.FAILED):
        raise ValueError("outcome must be Passed or Failed")
    if retry_cap < 1:
        raise ValueError("retry_cap must be at least 1")
    out = []
    halted = False
    found = False
    for s in states:
        if s.step_id != step_id:
            out.append(s)
            continue
        found = True
        if s.status is not StepStatus.ACTIVE:
            raise NotActive(f"step {step_id} is {s.status.value}, not Active")
        attempts = s.attempts + 1
        if outcome is StepStatus.PASSED:
            out.append(replace(s, status=StepStatus.PASSED, attempts=attempts))
        elif attempts >= retry_cap:
            out.append(replace(s, status=StepStatus.FAILED, attempts=attempts))
            halted = True
        else:
            out.append(replace(s, status=StepStatus.PENDING, attempts=attempts))
    if not found:
        raise UnknownStep(step_id)
    return out, halted


def session_complete(states: list[StepState]) -> bool:
    return all(
        s.status in (StepStatus.PASSED, StepStatus.SKIPPED) for s in states
    )
