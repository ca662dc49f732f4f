"""
Current-to-torque calibration
=============================

Generates noisy bench measurements around the reference 0.3 Nm/A motor law,
fits the proportional model by least squares, prints the frozen calibration
report, and plots measured points against the fitted line with its
+/-0.5 Nm accuracy corridor.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from asmcell.tooling import (
    fit_calibration, format_calibration_report, generate_calibration_samples,
)

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

samples = generate_calibration_samples(50, k=0.3, noise=0.05, seed=11)
model = fit_calibration(samples)

print(format_calibration_report(model, samples[:10]))
print(f"... ({len(samples)} samples total)")
print(f"fitted K = {model.k_nm_per_a:.6f} Nm/A "
      f"({abs(model.k_nm_per_a - 0.3) / 0.3 * 100:.2f}% from reference)")

currents = np.array([s[0] for s in samples])
torques = np.array([s[1] for s in samples])
line_x = np.linspace(0, currents.max(), 50)
line_y = model.k_nm_per_a * line_x + model.offset_nm

fig, ax = plt.subplots(figsize=(7, 5))
ax.plot(currents, torques, "k.", label="measured")
ax.plot(line_x, line_y, "b-", label=f"fit: {model.k_nm_per_a:.3f} Nm/A")
ax.plot(line_x, line_y + 0.5, "b--", lw=1, label="fit +0.5 Nm")
ax.plot(line_x, line_y - 0.5, "b--", lw=1, label="fit -0.5 Nm")
ax.set_xlabel("motor current, A")
ax.set_ylabel("output torque, Nm")
ax.set_title("motor torque vs current")
ax.legend()
ax.grid(alpha=0.3)
fig.savefig(out / "calibration.png", dpi=110, bbox_inches="tight")
print(f"plot saved to {out / 'calibration.png'}")
