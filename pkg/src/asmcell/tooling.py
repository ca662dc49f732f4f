"""Smart fastening tool: current-to-torque law, calibration fitting, and a
seeded simulation of tightening a threaded joint in both limiting modes.

The tool measures motor current and converts it to torque through a linear
law, torque = K * current + offset, with K = 0.3 Nm/A for the reference
motor. The joint is a piecewise-linear torque-angle curve: constant run-down
friction while the fastener spins free, then a linear ramp once the head
seats. That is the simplest joint that exhibits the overshoot the two
limiting modes exist to control:

* TorqueLimit - motor current is clamped at the setpoint's equivalent, so the
  joint stalls against the clamp and the final torque equals the setpoint
  exactly.
* ActuationCutoff - rotation is interrupted on the first control tick whose
  sampled current implies the setpoint has been reached; the final torque can
  overshoot by at most stiffness * speed * tick.

Current sampling carries seeded Gaussian noise, so runs are bit-reproducible
for a given seed. The simulation can run one-shot or be stepped tick by tick
(that is how the wire-protocol tool endpoint streams telemetry).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

PAPER_K_NM_PER_A = 0.3


class ToolingError(Exception):
    pass


class NegativeCurrent(ToolingError):
    pass


class BelowOffset(ToolingError):
    pass


class DegenerateSamples(ToolingError):
    pass


class Mode(enum.Enum):
    TORQUE_LIMIT = "TorqueLimit"
    ACTUATION_CUTOFF = "ActuationCutoff"


class TighteningStatus(enum.Enum):
    COMPLETED = "Completed"
    STALLED = "Stalled"
    ABORTED = "Aborted"


@dataclass(frozen=True)
class TorqueModel:
    k_nm_per_a: float
    offset_nm: float = 0.0
    band_nm: float = 0.0

    def __post_init__(self):
        if not self.k_nm_per_a > 0:
            raise ValueError("k_nm_per_a must be positive")
        if self.band_nm < 0:
            raise ValueError("band_nm must be non-negative")


DEFAULT_TORQUE_MODEL = TorqueModel(k_nm_per_a=PAPER_K_NM_PER_A)


def torque_from_current(i_a: float, m: TorqueModel) -> float:
    """Linear conversion law: torque = K * current + offset."""
    if i_a < 0:
        raise NegativeCurrent(f"current {i_a} A is negative")
    return m.k_nm_per_a * i_a + m.offset_nm


def current_for_torque(m_nm: float, m: TorqueModel) -> float:
    """Exact inverse of torque_from_current."""
    if m_nm <= m.offset_nm:
        raise BelowOffset(
            f"torque {m_nm} Nm is not above the model offset {m.offset_nm} Nm"
        )
    return (m_nm - m.offset_nm) / m.k_nm_per_a


def fit_calibration(samples: list[tuple[float, float]],
                    fit_offset: bool = False) -> TorqueModel:
    """Least-squares line through (current, torque) pairs.

    Without fit_offset the line is forced through the origin, matching the
    proportional form of the conversion law. band_nm is the largest absolute
    residual of the fit.
    """
    if len(samples) < 2:
        raise DegenerateSamples("need at least two calibration samples")
    currents = np.array([s[0] for s in samples], dtype=np.float64)
    torques = np.array([s[1] for s in samples], dtype=np.float64)
    if np.all(currents == currents[0]):
        raise DegenerateSamples("all calibration samples share one current")
    if fit_offset:
        design = np.column_stack([currents, np.ones_like(currents)])
        (k, offset), *_ = np.linalg.lstsq(design, torques, rcond=None)
    else:
        k = float(np.dot(currents, torques) / np.dot(currents, currents))
        offset = 0.0
    residuals = torques - (k * currents + offset)
    return TorqueModel(
        k_nm_per_a=float(k),
        offset_nm=float(offset),
        band_nm=float(np.max(np.abs(residuals))),
    )


def generate_calibration_samples(n: int, k: float = PAPER_K_NM_PER_A,
                                 offset: float = 0.0, noise: float = 0.05,
                                 seed: int = 0,
                                 current_max_a: float = 10.0,
                                 ) -> list[tuple[float, float]]:
    """Synthetic bench data: evenly spread currents, uniform torque noise."""
    rng = np.random.default_rng(seed)
    currents = np.linspace(0.5, current_max_a, n)
    torques = k * currents + offset
    if noise > 0:
        torques = torques + rng.uniform(-noise, noise, size=n)
    return list(zip(currents.tolist(), torques.tolist()))


def format_calibration_report(model: TorqueModel,
                              samples: list[tuple[float, float]]) -> str:
    """Frozen plain-text calibration report (table + fitted line)."""
    lines = [
        "# torque calibration report",
        "# current_a   torque_nm  residual_nm",
    ]
    for current, torque in samples:
        residual = torque - (model.k_nm_per_a * current + model.offset_nm)
        lines.append(f"{current:11.6f} {torque:11.6f} {residual:+12.6f}")
    lines += [
        f"k_nm_per_a = {model.k_nm_per_a:.6f}",
        f"offset_nm  = {model.offset_nm:.6f}",
        f"band_nm    = {model.band_nm:.6f}",
        f"samples    = {len(samples)}",
    ]
    return "\n".join(lines) + "\n"


# -- Joint and tightening simulation -------------------------------------------


@dataclass(frozen=True)
class JointModel:
    run_down_torque_nm: float
    seat_angle_rad: float
    stiffness_nm_per_rad: float

    def __post_init__(self):
        if min(self.run_down_torque_nm, self.seat_angle_rad,
               self.stiffness_nm_per_rad) <= 0:
            raise ValueError("all joint parameters must be positive")

    def torque_at(self, angle_rad: float) -> float:
        """Resisting torque: run-down friction, then the seating ramp."""
        if angle_rad < self.seat_angle_rad:
            return self.run_down_torque_nm
        return self.run_down_torque_nm + self.stiffness_nm_per_rad * (
            angle_rad - self.seat_angle_rad
        )


DEFAULT_JOINT = JointModel(
    run_down_torque_nm=0.2,
    seat_angle_rad=2.0,
    stiffness_nm_per_rad=50.0,
)


@dataclass(frozen=True)
class ToolConfig:
    mode: Mode
    setpoint_nm: float
    speed_rad_per_s: float = 5.0
    tick_s: float = 0.001
    current_noise_a: float = 0.05
    seed: int = 0
    max_duration_s: float = 30.0

    def __post_init__(self):
        if not self.setpoint_nm > 0:
            raise ValueError("setpoint_nm must be positive")
        if not 0 < self.tick_s <= 0.01:
            raise ValueError("tick_s must be in (0, 0.01]")
        if self.speed_rad_per_s <= 0:
            raise ValueError("speed_rad_per_s must be positive")
        if self.current_noise_a < 0:
            raise ValueError("current_noise_a must be non-negative")


@dataclass(frozen=True)
class TickSample:
    t_s: float
    current_a: float
    angle_rad: float


@dataclass(frozen=True)
class TighteningResult:
    final_torque_nm: float
    samples: tuple[TickSample, ...]
    status: TighteningStatus


class ToolSimulation:
    """Tick-stepped tightening run; single driver at a time.

    Call tick() until finished is True, then read result(). abort() ends the
    run early with status Aborted.
    """

    def __init__(self, joint: JointModel, cfg: ToolConfig,
                 model: TorqueModel = DEFAULT_TORQUE_MODEL):
        if cfg.setpoint_nm <= joint.run_down_torque_nm:
            raise ValueError(
                f"setpoint {cfg.setpoint_nm} Nm must exceed the joint's "
                f"run-down torque {joint.run_down_torque_nm} Nm"
            )
        if cfg.setpoint_nm <= model.offset_nm:
            raise ValueError("setpoint must be above the model offset")
        self.joint = joint
        self.cfg = cfg
        self.model = model
        self._rng = np.random.default_rng(cfg.seed)
        self._clamp_a = current_for_torque(cfg.setpoint_nm, model)
        self._tick_index = 0
        self._angle = 0.0
        self._true_current = self._current_for(joint.run_down_torque_nm)
        self._samples: list[TickSample] = []
        self._status: TighteningStatus | None = None

    def _current_for(self, torque_nm: float) -> float:
        # Below the model offset the motor draws no torque-producing current.
        if torque_nm <= self.model.offset_nm:
            return 0.0
        return current_for_torque(torque_nm, self.model)

    @property
    def finished(self) -> bool:
        return self._status is not None

    @property
    def ticks(self) -> int:
        return self._tick_index

    def tick(self) -> TickSample:
        """Advance one control period; returns the sampled telemetry."""
        if self.finished:
            raise RuntimeError("simulation already finished")
        self._tick_index += 1
        t = self._tick_index * self.cfg.tick_s
        next_angle = self._angle + self.cfg.speed_rad_per_s * self.cfg.tick_s
        true_torque = self.joint.torque_at(next_angle)

        if self.cfg.mode is Mode.TORQUE_LIMIT and true_torque >= self.cfg.setpoint_nm:
            # Current clamp stalls the motor exactly where the joint's
            # resistance equals the setpoint.
            stall_angle = self.joint.seat_angle_rad + (
                self.cfg.setpoint_nm - self.joint.run_down_torque_nm
            ) / self.joint.stiffness_nm_per_rad
            self._angle = stall_angle
            self._true_current = self._clamp_a
            sample = self._record(t)
            self._status = TighteningStatus.COMPLETED
            return sample

        self._angle = next_angle
        self._true_current = self._current_for(true_torque)
        sample = self._record(t)

        if self.cfg.mode is Mode.ACTUATION_CUTOFF:
            implied = torque_from_current(max(sample.current_a, 0.0), self.model)
            if implied >= self.cfg.setpoint_nm:
                self._status = TighteningStatus.COMPLETED
                return sample

        if t >= self.cfg.max_duration_s:
            self._status = TighteningStatus.STALLED
        return sample

    def _record(self, t: float) -> TickSample:
        noise = float(self._rng.normal(0.0, self.cfg.current_noise_a)) \
            if self.cfg.current_noise_a > 0 else 0.0
        sample = TickSample(
            t_s=t,
            current_a=self._true_current + noise,
            angle_rad=self._angle,
        )
        self._samples.append(sample)
        return sample

    def abort(self) -> None:
        if not self.finished:
            self._status = TighteningStatus.ABORTED

    def result(self) -> TighteningResult:
        if not self.finished:
            raise RuntimeError("simulation still running")
        return TighteningResult(
            final_torque_nm=torque_from_current(self._true_current, self.model),
            samples=tuple(self._samples),
            status=self._status,
        )


def simulate_tightening(joint: JointModel, cfg: ToolConfig,
                        model: TorqueModel = DEFAULT_TORQUE_MODEL,
                        ) -> TighteningResult:
    """One-shot tightening run; ticks the simulation to completion."""
    sim = ToolSimulation(joint, cfg, model)
    while not sim.finished:
        sim.tick()
    return sim.result()
