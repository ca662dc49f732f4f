"""
A complete assembly session, end to end
=======================================

Runs the five-step reference procedure against the simulated bench and tool
(run 00_make_demo_cell.py first), with a deliberately misplaced element on
the first attempt of step S1 so the retry/alarm machinery is visible. Then
rebuilds the product's digital passport from the event log alone.
"""

from pathlib import Path

from asmcell.logbook import LogStore, StoreSink, build_passport
from asmcell.procedure import parse_procedure
from asmcell.tooling import JointModel
from asmcell.vision import TemplateLibrary
from asmcell.wireproto import ToolParams
from asmcell.workcell import (
    InjectedOffset, PipeToolConnector, SessionRunner, SimulatedSceneSource,
    load_config,
)

cell_dir = Path(__file__).parent / "demo-cell"
if not cell_dir.exists():
    raise SystemExit("run demos/00_make_demo_cell.py first")

cfg = load_config(cell_dir / "cell.txt")
script = parse_procedure((cell_dir / "proc.txt").read_text())
templates = TemplateLibrary.load(cell_dir / "templates")

store = LogStore(Path(__file__).parent / "output" / "logbook")
scene = SimulatedSceneSource(
    templates, noise_sigma=0.02, seed=7,
    injections=[InjectedOffset("S1", dx=50, dy=0)],  # first attempt misplaced
)
tool = PipeToolConnector(ToolParams(
    joint=JointModel(0.2, 0.5, 50.0), seed=7,
))

runner = SessionRunner(cfg, script, templates, scene, tool, StoreSink(store),
                       product_serial="SN-0042", mode="sim", seed=7)
rt = runner.run()

print(f"session {rt.session_id} -> {rt.status}, light {rt.light.value}")
for state in rt.states:
    print(f"  {state.step_id}: {state.status.value} "
          f"after {state.attempts} attempt(s)")

print()
passport = build_passport(store, "SN-0042")
session = passport.sessions[-1]
print(f"passport for SN-0042: {len(passport.sessions)} session(s), "
      f"latest {session.outcome}")
for step in session.steps:
    extras = []
    if step.torques_mnm:
        extras.append(f"torques={step.torques_mnm} mNm")
    if step.detection_scores:
        extras.append(
            "scores=" + ",".join(f"{s:.3f}" for s in step.detection_scores))
    print(f"  {step.step_id:3} {step.kind:16} {step.verdict:7} "
          f"attempts={step.attempts} duration={step.duration_ms} ms "
          + " ".join(extras))
print()
print("note: S1 failed once (misplaced by injection), alarm was raised and")
print("acknowledged, the retry passed; every attempt is in the passport.")
