"""
Build a demo cell
=================

Writes everything the other demos and the CLI need into ./demo-cell/:
three template images, a template manifest, a workcell configuration and
the five-step reference procedure.
"""

from pathlib import Path

import numpy as np

from asmcell.vision import GrayImage, write_pgm

root = Path(__file__).parent / "demo-cell"
templates = root / "templates"
templates.mkdir(parents=True, exist_ok=True)

# three distinct high-contrast 16x16 patterns
rng = np.random.default_rng(1234)
manifest = []
for i in (1, 2, 3):
    pixels = rng.random((16, 16))
    pixels[::4, :] = 1.0
    write_pgm(GrayImage(pixels), templates / f"t{i}.pgm")
    manifest.append(f"template T-{i} t{i}.pgm")
(templates / "manifest.txt").write_text("\n".join(manifest) + "\n")

(root / "cell.txt").write_text("""\
workcell WC-1
has_tool = true
has_light = true
retry_cap = 3
min_score = 0.8
tol_px = 20
torque_band_nm = 0.5
templates = templates

camera cam-1
  resolution_mp = 2
  fov_deg = 90
  focal_px = 900
  cx = 320
  cy = 240
  k1 = 0
""")

(root / "proc.txt").write_text("""\
# five-step reference procedure: two installs, one multi-fastener
# tightening, one inspection, one operator confirmation
procedure P-100
product sat-panel
revision 3

step S1 InstallElement
  element_id = EL-1
  template_id = T-1
  expected_region = 100,100,16,16
  position_tolerance_px = 20

step S2 InstallElement
  element_id = EL-2
  template_id = T-2
  expected_region = 300,200,16,16
  position_tolerance_px = 20

step S3 Tighten
  fastener_count = 4
  target_torque_nm = 2.0
  mode = TorqueLimit

step S4 Inspect
  template_id = T-1
  expected_region = 100,100,16,16
  min_score = 0.8

step S5 OperatorConfirm
  prompt = Close the cover and check the harness
""")

print(f"demo cell written to {root}")
print("try:  asmcell validate --config demos/demo-cell/cell.txt "
      "--procedure demos/demo-cell/proc.txt")
