"""Shared fixtures: a deterministic template library, the reference five-step
script, and cell configurations mirroring the equipment table."""

import numpy as np
import pytest

from asmcell.procedure import parse_procedure
from asmcell.tooling import JointModel
from asmcell.vision import GrayImage, TemplateLibrary, write_pgm
from asmcell.wireproto import ToolParams
from asmcell.workcell import parse_config

REFERENCE_PROCEDURE = """\
# reference five-step assembly procedure
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
"""

CELL_CONFIG = """\
workcell WC-1
has_tool = true
has_light = true
retry_cap = 3
min_score = 0.8
tol_px = 20
torque_band_nm = 0.5

camera cam-1
  resolution_mp = 2
  fov_deg = 90
  focal_px = 900
  cx = 320
  cy = 240
  k1 = 0
"""


def make_template_library(directory, count=3, size=16):
    """Three high-contrast 16x16 patterns, deterministic."""
    rng = np.random.default_rng(1234)
    lines = []
    for i in range(1, count + 1):
        pixels = rng.random((size, size))
        pixels[::4, :] = 1.0  # strong stripes keep NCC sharp under noise
        write_pgm(GrayImage(pixels), directory / f"t{i}.pgm")
        lines.append(f"template T-{i} t{i}.pgm")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")
    return TemplateLibrary.load(directory)


@pytest.fixture
def template_lib(tmp_path):
    tdir = tmp_path / "templates"
    tdir.mkdir()
    return make_template_library(tdir)


@pytest.fixture
def reference_script():
    return parse_procedure(REFERENCE_PROCEDURE)


@pytest.fixture
def cell_config():
    return parse_config(CELL_CONFIG)


def fast_tool_params(seed=0, noise=0.05):
    """Quick-seating joint so full sessions stay fast."""
    return ToolParams(
        joint=JointModel(run_down_torque_nm=0.2, seat_angle_rad=0.5,
                         stiffness_nm_per_rad=50.0),
        speed_rad_per_s=5.0,
        tick_s=0.001,
        current_noise_a=noise,
        seed=seed,
    )


def write_demo_cell(root):
    """Materialize config + procedure + template files for CLI runs."""
    tdir = root / "templates"
    tdir.mkdir(parents=True, exist_ok=True)
    make_template_library(tdir)
    config_path = root / "cell.txt"
    config_path.write_text(CELL_CONFIG + "templates = templates\n")
    procedure_path = root / "proc.txt"
    procedure_path.write_text(REFERENCE_PROCEDURE)
    return {"config": config_path, "procedure": procedure_path,
            "templates": tdir, "root": root}


@pytest.fixture
def demo_cell(tmp_path):
    return write_demo_cell(tmp_path)
