"""
Template matching on a synthetic bench
======================================

Renders a noisy workbench frame with two elements, finds one of them by
normalized cross-correlation, and judges its placement. Saves an annotated
overlay to demos/output/.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import matplotlib.patches as patches
import numpy as np

from asmcell.vision import (
    GrayImage, Region, Template, match_template, render_scene, verify_placement,
)

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

# two synthetic elements
rng = np.random.default_rng(42)
el1 = Template("EL-1", GrayImage(rng.random((20, 20))))
el2 = Template("EL-2", GrayImage(rng.random((14, 14))))

# EL-1 sits 28 px right of where it should be; EL-2 is fine
frame = render_scene(
    [(el1, (148, 100)), (el2, (300, 220))],
    width=640, height=480, noise_sigma=0.02, seed=7,
)

expected = Region(120, 100, 20, 20)
det = match_template(frame, el1)
verdict = verify_placement(det, expected, tol_px=20, min_score=0.8)

print(f"detection: center={det.center}, score={det.score:.4f}")
print(f"verdict:   {type(verdict).__name__}")
if hasattr(verdict, "offset_px"):
    print(f"offset:    {verdict.offset_px:.1f} px beyond the 20 px tolerance")

fig, ax = plt.subplots(figsize=(8, 6))
ax.imshow(frame.pixels, cmap="gray", vmin=0, vmax=1)
ax.add_patch(patches.Rectangle((expected.x, expected.y), expected.w,
                               expected.h, fill=False, color="lime", lw=2,
                               label="expected region"))
ax.add_patch(patches.Rectangle((det.center[0] - 9.5, det.center[1] - 9.5),
                               20, 20, fill=False, color="red", lw=2,
                               label=f"detected (score {det.score:.3f})"))
ax.annotate("", xy=det.center, xytext=expected.center,
            arrowprops=dict(color="orange", arrowstyle="->", lw=2))
ax.legend(loc="lower right")
ax.set_title(f"placement check: {type(verdict).__name__}")
fig.savefig(out / "template_matching.png", dpi=110, bbox_inches="tight")
print(f"overlay saved to {out / 'template_matching.png'}")
