"""Tooling tests: the conversion law with the reference K, least-squares
calibration against closed-form expectations, and the tightening simulation
against its analytic stall/overshoot bounds."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asmcell.tooling import (
    BelowOffset,
    DegenerateSamples,
    JointModel,
    Mode,
    NegativeCurrent,
    TighteningStatus,
    ToolConfig,
    ToolSimulation,
    TorqueModel,
    current_for_torque,
    fit_calibration,
    format_calibration_report,
    generate_calibration_samples,
    simulate_tightening,
    torque_from_current,
)

REF = TorqueModel(k_nm_per_a=0.3)


class TestConversionLaw:
    def test_reference_point(self):
        assert torque_from_current(1.0, REF) == 0.3

    def test_zero_current(self):
        assert torque_from_current(0.0, REF) == 0.0

    def test_linear_scaling(self):
        assert torque_from_current(10.0, REF) == pytest.approx(3.0, abs=1e-12)

    def test_inverse_reference_point(self):
        assert current_for_torque(0.3, REF) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("torque", [0.5, 2.0, 5.0])
    def test_round_trip(self, torque):
        assert torque_from_current(
            current_for_torque(torque, REF), REF
        ) == pytest.approx(torque, abs=1e-12)

    def test_offset_model(self):
        m = TorqueModel(k_nm_per_a=0.3, offset_nm=0.2)
        assert current_for_torque(2.0, m) == pytest.approx(6.0, abs=1e-9)

    def test_negative_current_rejected(self):
        with pytest.raises(NegativeCurrent):
            torque_from_current(-0.1, REF)

    def test_below_offset_rejected(self):
        m = TorqueModel(k_nm_per_a=0.3, offset_nm=0.5)
        with pytest.raises(BelowOffset):
            current_for_torque(0.4, m)

    @given(
        k=st.floats(0.01, 10),
        offset=st.floats(-1, 1),
        torque=st.floats(1.1, 100),
    )
    def test_round_trip_property(self, k, offset, torque):
        m = TorqueModel(k_nm_per_a=k, offset_nm=offset)
        back = torque_from_current(current_for_torque(torque, m), m)
        assert back == pytest.approx(torque, rel=1e-12)


class TestCalibrationFit:
    def test_noiseless_line_through_origin(self):
        samples = [(1.0, 0.3), (2.0, 0.6), (3.0, 0.9)]
        model = fit_calibration(samples)
        assert model.k_nm_per_a == pytest.approx(0.3, abs=1e-12)
        assert model.offset_nm == 0.0
        assert model.band_nm <= 1e-12

    def test_noiseless_line_with_offset(self):
        currents = np.linspace(1, 8, 15)
        samples = [(i, 0.3 * i + 0.25) for i in currents]
        model = fit_calibration(samples, fit_offset=True)
        assert model.k_nm_per_a == pytest.approx(0.3, abs=1e-12)
        assert model.offset_nm == pytest.approx(0.25, abs=1e-12)
        assert model.band_nm <= 1e-12

    def test_noisy_recovery_within_one_percent(self):
        samples = generate_calibration_samples(50, k=0.3, noise=0.05, seed=11)
        model = fit_calibration(samples)
        assert abs(model.k_nm_per_a - 0.3) / 0.3 < 0.01
        # Residual band covers the noise amplitude plus the small slope error.
        assert 0.0 < model.band_nm < 0.1

    def test_single_current_rejected(self):
        with pytest.raises(DegenerateSamples):
            fit_calibration([(2.0, 0.6), (2.0, 0.61)])

    def test_too_few_samples_rejected(self):
        with pytest.raises(DegenerateSamples):
            fit_calibration([(2.0, 0.6)])

    @given(
        k=st.floats(0.05, 5),
        seed=st.integers(0, 2**32 - 1),
    )
    @settings(max_examples=50)
    def test_exact_recovery_property(self, k, seed):
        rng = np.random.default_rng(seed)
        currents = np.sort(rng.uniform(0.5, 10, size=8))
        samples = [(float(i), float(k * i)) for i in currents]
        model = fit_calibration(samples)
        assert model.k_nm_per_a == pytest.approx(k, rel=1e-10)

    def test_report_format_is_frozen(self):
        samples = [(1.0, 0.3), (2.0, 0.6)]
        model = fit_calibration(samples)
        report = format_calibration_report(model, samples)
        lines = report.splitlines()
        assert lines[0] == "# torque calibration report"
        assert lines[1] == "# current_a   torque_nm  residual_nm"
        assert lines[2] == "   1.000000    0.300000    +0.000000"
        assert "k_nm_per_a = 0.300000" in lines
        assert "samples    = 2" in lines


QUICK_JOINT = JointModel(
    run_down_torque_nm=0.2, seat_angle_rad=0.1, stiffness_nm_per_rad=50.0
)


class TestSimulateTightening:
    def test_torque_limit_noiseless_hits_setpoint_exactly(self):
        cfg = ToolConfig(Mode.TORQUE_LIMIT, setpoint_nm=2.0,
                         speed_rad_per_s=1.0, current_noise_a=0.0)
        result = simulate_tightening(QUICK_JOINT, cfg, REF)
        assert result.status is TighteningStatus.COMPLETED
        assert result.final_torque_nm == pytest.approx(2.0, abs=1e-9)

    def test_torque_limit_exact_even_with_noise(self):
        cfg = ToolConfig(Mode.TORQUE_LIMIT, setpoint_nm=2.0,
                         speed_rad_per_s=1.0, current_noise_a=0.05, seed=3)
        result = simulate_tightening(QUICK_JOINT, cfg, REF)
        assert result.final_torque_nm == pytest.approx(2.0, abs=1e-9)

    def test_actuation_cutoff_overshoot_bound(self):
        cfg = ToolConfig(Mode.ACTUATION_CUTOFF, setpoint_nm=2.0,
                         speed_rad_per_s=1.0, tick_s=0.001,
                         current_noise_a=0.0)
        result = simulate_tightening(QUICK_JOINT, cfg, REF)
        assert result.status is TighteningStatus.COMPLETED
        assert 2.0 <= result.final_torque_nm <= 2.05

    @pytest.mark.parametrize("mode", list(Mode))
    @pytest.mark.parametrize("stiffness", [10.0, 50.0, 200.0])
    def test_noiseless_runs_stay_within_analytic_bound(self, mode, stiffness):
        joint = JointModel(0.2, 0.1, stiffness)
        cfg = ToolConfig(mode, setpoint_nm=2.0, speed_rad_per_s=5.0,
                         current_noise_a=0.0)
        result = simulate_tightening(joint, cfg, REF)
        bound = stiffness * cfg.speed_rad_per_s * cfg.tick_s
        assert abs(result.final_torque_nm - 2.0) <= bound + 1e-12

    def test_noisy_runs_stay_within_bound_plus_noise_band(self):
        violations = 0
        for seed in range(100):
            joint = JointModel(0.2, 0.1, 10.0 + (seed % 20) * 9.5)
            cfg = ToolConfig(Mode.ACTUATION_CUTOFF, setpoint_nm=2.0,
                             speed_rad_per_s=1.0, current_noise_a=0.05,
                             seed=seed)
            result = simulate_tightening(joint, cfg, REF)
            bound = joint.stiffness_nm_per_rad * cfg.speed_rad_per_s * cfg.tick_s
            if abs(result.final_torque_nm - 2.0) > bound + 4 * 0.05 * 0.3:
                violations += 1
        assert violations == 0

    def test_noise_band_probability_over_1000_seeded_runs(self):
        # |final - setpoint| <= bound + 4*sigma*K in >= 99.9% of seeded runs
        joint = JointModel(0.2, 0.1, 50.0)
        bound = 50.0 * 1.0 * 0.001
        limit = bound + 4 * 0.05 * 0.3
        within = 0
        for seed in range(1000):
            cfg = ToolConfig(Mode.ACTUATION_CUTOFF, setpoint_nm=2.0,
                             speed_rad_per_s=1.0, current_noise_a=0.05,
                             seed=seed)
            result = simulate_tightening(joint, cfg, REF)
            if abs(result.final_torque_nm - 2.0) <= limit:
                within += 1
        assert within >= 999

    def test_never_reaching_seat_stalls(self):
        joint = JointModel(0.2, 1000.0, 50.0)
        cfg = ToolConfig(Mode.TORQUE_LIMIT, setpoint_nm=2.0,
                         speed_rad_per_s=1.0, current_noise_a=0.0,
                         max_duration_s=0.05)
        result = simulate_tightening(joint, cfg, REF)
        assert result.status is TighteningStatus.STALLED

    def test_setpoint_below_run_down_rejected(self):
        cfg = ToolConfig(Mode.TORQUE_LIMIT, setpoint_nm=0.1,
                         speed_rad_per_s=1.0)
        with pytest.raises(ValueError):
            simulate_tightening(QUICK_JOINT, cfg, REF)

    def test_samples_are_time_ordered(self):
        cfg = ToolConfig(Mode.TORQUE_LIMIT, setpoint_nm=2.0,
                         speed_rad_per_s=1.0, current_noise_a=0.05, seed=5)
        result = simulate_tightening(QUICK_JOINT, cfg, REF)
        times = [s.t_s for s in result.samples]
        assert times == sorted(times)
        assert len(times) > 0

    def test_bit_deterministic_given_seed(self):
        cfg = ToolConfig(Mode.ACTUATION_CUTOFF, setpoint_nm=2.0,
                         speed_rad_per_s=1.0, current_noise_a=0.05, seed=42)
        a = simulate_tightening(QUICK_JOINT, cfg, REF)
        b = simulate_tightening(QUICK_JOINT, cfg, REF)
        assert a == b

    def test_incremental_stepping_and_abort(self):
        cfg = ToolConfig(Mode.TORQUE_LIMIT, setpoint_nm=2.0,
                         speed_rad_per_s=1.0, current_noise_a=0.0)
        sim = ToolSimulation(QUICK_JOINT, cfg, REF)
        for _ in range(5):
            sample = sim.tick()
        assert not sim.finished
        assert sample.t_s == pytest.approx(0.005)
        sim.abort()
        assert sim.finished
        assert sim.result().status is TighteningStatus.ABORTED
        with pytest.raises(RuntimeError):
            sim.tick()

    def test_incremental_matches_one_shot(self):
        cfg = ToolConfig(Mode.ACTUATION_CUTOFF, setpoint_nm=2.0,
                         speed_rad_per_s=1.0, current_noise_a=0.05, seed=9)
        sim = ToolSimulation(QUICK_JOINT, cfg, REF)
        while not sim.finished:
            sim.tick()
        assert sim.result() == simulate_tightening(QUICK_JOINT, cfg, REF)
