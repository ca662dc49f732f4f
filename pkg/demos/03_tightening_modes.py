"""
The two torque-limiting modes
=============================

Runs the tightening simulation on the same joint in both modes and plots the
delivered torque over time. TorqueLimit clamps motor current, so the joint
stalls exactly at the setpoint; ActuationCutoff interrupts rotation on the
first sample at or above the setpoint and overshoots by at most
stiffness * speed * tick.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from asmcell.tooling import (
    JointModel, Mode, ToolConfig, TorqueModel, simulate_tightening,
    torque_from_current,
)

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

model = TorqueModel(k_nm_per_a=0.3)
joint = JointModel(run_down_torque_nm=0.2, seat_angle_rad=1.0,
                   stiffness_nm_per_rad=50.0)
setpoint = 2.0

fig, ax = plt.subplots(figsize=(8, 5))
for mode, color in ((Mode.TORQUE_LIMIT, "tab:blue"),
                    (Mode.ACTUATION_CUTOFF, "tab:orange")):
    cfg = ToolConfig(mode, setpoint, speed_rad_per_s=1.0,
                     current_noise_a=0.05, seed=3)
    result = simulate_tightening(joint, cfg, model)
    bound = joint.stiffness_nm_per_rad * cfg.speed_rad_per_s * cfg.tick_s
    print(f"{mode.value:16} final = {result.final_torque_nm:.4f} Nm "
          f"(setpoint {setpoint}, analytic bound +/-{bound:.3f}) "
          f"[{result.status.value}]")
    times = [s.t_s for s in result.samples]
    sampled = [torque_from_current(max(s.current_a, 0.0), model)
               for s in result.samples]
    ax.plot(times, sampled, color=color, lw=0.8, alpha=0.8, label=mode.value)

ax.axhline(setpoint, color="k", lw=1, label=f"setpoint {setpoint} Nm")
ax.axhspan(setpoint - 0.5, setpoint + 0.5, color="green", alpha=0.08,
           label="+/-0.5 Nm band")
ax.set_xlabel("time, s")
ax.set_ylabel("sampled torque, Nm")
ax.set_title("tightening: run-down, seating ramp, limited stop")
ax.legend(loc="upper left")
ax.grid(alpha=0.3)
fig.savefig(out / "tightening_modes.png", dpi=110, bbox_inches="tight")
print(f"plot saved to {out / 'tightening_modes.png'}")
