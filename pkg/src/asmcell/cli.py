"""Single entrypoint for desk-scale use:

    asmcell validate  --config cell.txt --procedure proc.txt
    asmcell run       --config cell.txt --procedure proc.txt --serial SN-1 \
                      --mode sim --seed 7 --store logbook-data
    asmcell calibrate --generate 50 --k 0.3 --noise 0.05 --seed 11
    asmcell serve     --role {workcell,logbook,tool} ...
    asmcell passport  --store logbook-data --serial SN-1

Exit codes: 0 ok, 1 domain failure (validation violations, halted session,
degenerate data), 2 environment failure (missing file, port in use).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .logbook import (
    CollectorServer,
    CollectorSink,
    DEFAULT_COLLECTOR_PORT,
    EventKind,
    LogStore,
    StoreSink,
    build_passport,
)
from .operator_api import DEFAULT_OPERATOR_PORT, OperatorApiServer, WorkcellService
from .procedure import (
    ProcedureScript,
    ProcedureSyntaxError,
    ProcedureValidationError,
    StepKind,
    parse_procedure,
)
from .tooling import (
    DegenerateSamples,
    JointModel,
    fit_calibration,
    format_calibration_report,
    generate_calibration_samples,
)
from .vision import TemplateLibrary
from .wireproto import DEFAULT_TOOL_PORT, ToolParams, ToolServer
from .workcell import (
    InjectedOffset,
    SessionRunner,
    SimulatedSceneSource,
    WorkcellConfig,
    load_config,
    tool_connector_for,
    validate_config,
)

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_ENV = 2


def _fail_env(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_ENV


def _parse_listen(value: str, default_port: int) -> tuple[str, int]:
    if ":" in value:
        host, _, port = value.rpartition(":")
        return host, int(port)
    return value, default_port


def _parse_injection(value: str) -> InjectedOffset:
    # format: STEP:DX,DY[:persist]
    parts = value.split(":")
    if len(parts) not in (2, 3):
        raise argparse.ArgumentTypeError(
            f"expected STEP:DX,DY[:persist], got {value!r}"
        )
    step_id, offsets = parts[0], parts[1]
    dx, _, dy = offsets.partition(",")
    persist = len(parts) == 3 and parts[2] == "persist"
    try:
        return InjectedOffset(step_id, int(dx), int(dy), persist)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad offsets in {value!r}")


def _load_inputs(args) -> tuple[WorkcellConfig, ProcedureScript,
                                TemplateLibrary | None]:
    config_path = Path(args.config)
    cfg = load_config(config_path)
    script = parse_procedure(Path(args.procedure).read_text(encoding="utf-8"))
    templates = None
    if cfg.templates_dir is not None:
        tdir = Path(cfg.templates_dir)
        if not tdir.is_absolute():
            tdir = config_path.parent / tdir
        templates = TemplateLibrary.load(tdir)
    return cfg, script, templates


def _add_tool_args(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("simulated tool")
    group.add_argument("--joint-rundown", type=float, default=0.2,
                       help="free-spin friction torque, Nm")
    group.add_argument("--joint-seat", type=float, default=0.5,
                       help="angle at which the head seats, rad")
    group.add_argument("--joint-stiffness", type=float, default=50.0,
                       help="torque ramp past seating, Nm/rad")
    group.add_argument("--tool-speed", type=float, default=5.0,
                       help="rotation speed, rad/s")
    group.add_argument("--tool-tick", type=float, default=0.001,
                       help="control period, s")
    group.add_argument("--tool-noise", type=float, default=0.05,
                       help="current sampling noise sigma, A")
    group.add_argument("--realtime", action="store_true",
                       help="pace the simulation at wall-clock speed")


def _tool_params(args, seed: int) -> ToolParams:
    return ToolParams(
        joint=JointModel(
            run_down_torque_nm=args.joint_rundown,
            seat_angle_rad=args.joint_seat,
            stiffness_nm_per_rad=args.joint_stiffness,
        ),
        speed_rad_per_s=args.tool_speed,
        tick_s=args.tool_tick,
        current_noise_a=args.tool_noise,
        seed=seed,
        realtime=args.realtime,
    )


# -- validate ---------------------------------------------------------------------


def cmd_validate(args) -> int:
    try:
        cfg, script, templates = _load_inputs(args)
    except (ProcedureSyntaxError, ProcedureValidationError) as exc:
        print(f"invalid procedure: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (FileNotFoundError, OSError) as exc:
        return _fail_env(str(exc))
    violations = validate_config(cfg, script, templates)
    if args.json:
        print(json.dumps({
            "ok": not violations,
            "violations": [{"where": v.where, "message": v.message}
                           for v in violations],
        }, sort_keys=True))
    else:
        for v in violations:
            print(f"violation: {v}")
        if not violations:
            print(f"ok: {cfg.workcell_id} can run {script.procedure_id}")
    return EXIT_DOMAIN if violations else EXIT_OK


# -- run --------------------------------------------------------------------------


def _make_sink(args, store_dir: Path):
    logbook_url = args.logbook_url
    if logbook_url:
        store_dir.mkdir(parents=True, exist_ok=True)
        return CollectorSink(logbook_url, store_dir / "spool.jsonl"), None
    store = LogStore(store_dir)
    return StoreSink(store), store


def _step_detail_line(step, events) -> str:
    if step.kind is StepKind.TIGHTEN:
        torques = [e.payload["final_torque_mnm"] for e in events
                   if e.kind is EventKind.TORQUE_RESULT
                   and e.payload["step_id"] == step.step_id]
        return "torques_mnm=" + ",".join(str(t) for t in torques)
    if step.kind is StepKind.OPERATOR_CONFIRM:
        actions = [e.payload["action"] for e in events
                   if e.kind is EventKind.OPERATOR_ACTION
                   and e.payload.get("step_id") == step.step_id]
        return actions[-1] if actions else ""
    detections = [e.payload for e in events
                  if e.kind is EventKind.DETECTION
                  and e.payload["step_id"] == step.step_id]
    if not detections:
        return ""
    last = detections[-1]
    detail = f"score={last['score']:.6f} verdict={last['verdict']}"
    if last.get("offset_px") is not None:
        detail += f" offset={last['offset_px']:.2f}px"
    return detail


def cmd_run(args) -> int:
    try:
        cfg, script, templates = _load_inputs(args)
    except FileNotFoundError as exc:
        return _fail_env(str(exc))
    except (ProcedureSyntaxError, ProcedureValidationError) as exc:
        print(f"invalid procedure: {exc}", file=sys.stderr)
        return EXIT_DOMAIN

    violations = validate_config(cfg, script, templates)
    if violations:
        for v in violations:
            print(f"violation: {v}", file=sys.stderr)
        return EXIT_DOMAIN

    store_dir = Path(args.store)
    if args.logbook_url is None and cfg.logbook_url:
        args.logbook_url = cfg.logbook_url
    sink, _ = _make_sink(args, store_dir)

    tool_address = args.tool or cfg.tool_address
    connector = tool_connector_for(tool_address, _tool_params(args, args.seed))

    headless = args.headless or args.mode == "sim"
    if args.mode == "sim":
        scene = SimulatedSceneSource(
            templates, noise_sigma=args.scene_noise, seed=args.seed,
            injections=args.inject_offset,
        )
        try:
            runner = SessionRunner(
                cfg, script, templates, scene, connector, sink,
                product_serial=args.serial, mode="sim", seed=args.seed,
                auto_confirm=headless,
            )
        except SessionError as exc:
            print(f"session rejected: {exc}", file=sys.stderr)
            return EXIT_DOMAIN
        rt = runner.run()
    else:
        # replay mode: serve the operator API and wait for frames/actions
        service = WorkcellService(
            cfg, templates, sink_factory=lambda: sink,
            tool_connector=connector, default_mode="replay",
            default_seed=args.seed, auto_confirm=headless,
        )
        host, port = _parse_listen(args.listen, DEFAULT_OPERATOR_PORT)
        try:
            server = OperatorApiServer(service, host, port)
        except OSError as exc:
            return _fail_env(f"cannot listen on {args.listen}: {exc}")
        server.serve_in_thread()
        print(f"operator API at http://{server.address[0]}:{server.address[1]}")
        rt = service.start_session(script, args.serial, mode="replay",
                                   seed=args.seed)
        service.wait_session_end()
        server.close()

    events = rt.events
    if args.json:
        print(json.dumps(_session_document(rt, events), sort_keys=True))
    else:
        print(f"session {rt.session_id}")
        print(f"product {rt.product_serial}  procedure "
              f"{script.procedure_id} rev {script.revision}")
        print(f"{'step':6} {'kind':17} {'status':8} {'attempts':8} detail")
        for state in rt.states:
            step = script.step(state.step_id)
            print(f"{state.step_id:6} {step.kind.value:17} "
                  f"{state.status.value:8} {state.attempts:<8} "
                  f"{_step_detail_line(step, events)}")
        print(f"result: {rt.status.upper()}")
    return EXIT_OK if rt.status == "complete" else EXIT_DOMAIN


def _session_document(rt, events) -> dict:
    torques: dict[str, list[int]] = {}
    scores: dict[str, list[float]] = {}
    for e in events:
        sid = e.payload.get("step_id")
        if e.kind is EventKind.TORQUE_RESULT:
            torques.setdefault(sid, []).append(e.payload["final_torque_mnm"])
        elif e.kind is EventKind.DETECTION:
            scores.setdefault(sid, []).append(e.payload["score"])
    return {
        "session_id": rt.session_id,
        "product_serial": rt.product_serial,
        "status": rt.status,
        "light": rt.light.value,
        "steps": [
            {
                "step_id": s.step_id,
                "status": s.status.value,
                "attempts": s.attempts,
                "torques_mnm": torques.get(s.step_id, []),
                "detection_scores": scores.get(s.step_id, []),
            }
            for s in rt.states
        ],
        "event_count": len(events),
    }


# -- calibrate ---------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    if args.samples:
        try:
            lines = Path(args.samples).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            return _fail_env(str(exc))
        samples = []
        for line in lines:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            current, torque = line.split()[:2]
            samples.append((float(current), float(torque)))
    else:
        samples = generate_calibration_samples(
            args.generate, k=args.k, noise=args.noise, seed=args.seed,
        )
    try:
        model = fit_calibration(samples, fit_offset=args.fit_offset)
    except DegenerateSamples as exc:
        print(f"cannot fit: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    if args.json:
        print(json.dumps({
            "k_nm_per_a": model.k_nm_per_a,
            "offset_nm": model.offset_nm,
            "band_nm": model.band_nm,
            "samples": len(samples),
        }, sort_keys=True))
    else:
        print(format_calibration_report(model, samples), end="")
    return EXIT_OK


# -- serve -------------------------------------------------------------------------


def cmd_serve(args) -> int:
    try:
        return _cmd_serve(args)
    except KeyboardInterrupt:
        return EXIT_OK


def _cmd_serve(args) -> int:
    if args.role == "logbook":
        host, port = _parse_listen(args.listen, DEFAULT_COLLECTOR_PORT)
        store = LogStore(args.store)
        try:
            server = CollectorServer(store, host, port)
        except OSError as exc:
            return _fail_env(f"cannot listen on {args.listen}: {exc}")
        print(f"logbook collector at http://{server.address[0]}:"
              f"{server.address[1]} (store: {args.store})", flush=True)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            server.close()
        return EXIT_OK

    if args.role == "tool":
        host, port = _parse_listen(args.listen, DEFAULT_TOOL_PORT)
        try:
            server = ToolServer(_tool_params(args, args.seed), host, port)
        except OSError as exc:
            return _fail_env(f"cannot listen on {args.listen}: {exc}")
        print(f"simulated tool at tcp:{server.address[0]}:{server.address[1]}",
              flush=True)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            server.close()
        return EXIT_OK

    # workcell
    if not args.config or not args.procedure:
        return _fail_env("--role workcell requires --config and --procedure")
    try:
        cfg, script, templates = _load_inputs(args)
    except FileNotFoundError as exc:
        return _fail_env(str(exc))
    except (ProcedureSyntaxError, ProcedureValidationError) as exc:
        print(f"invalid procedure: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    store_dir = Path(args.store)
    if args.logbook_url is None and cfg.logbook_url:
        args.logbook_url = cfg.logbook_url
    sink, _ = _make_sink(args, store_dir)
    tool_address = args.tool or cfg.tool_address
    connector = tool_connector_for(tool_address, _tool_params(args, args.seed))
    service = WorkcellService(
        cfg, templates, sink_factory=lambda: sink, tool_connector=connector,
        default_mode=args.mode, default_seed=args.seed,
        noise_sigma=args.scene_noise, injections=args.inject_offset,
        auto_confirm=args.headless, ui_dir=args.ui,
    )
    host, port = _parse_listen(args.listen, DEFAULT_OPERATOR_PORT)
    try:
        server = OperatorApiServer(service, host, port)
    except OSError as exc:
        return _fail_env(f"cannot listen on {args.listen}: {exc}")
    print(f"workcell {cfg.workcell_id} operator API at "
          f"http://{server.address[0]}:{server.address[1]}", flush=True)
    if args.serial:
        rt = service.start_session(script, args.serial, mode=args.mode,
                                   seed=args.seed)
        print(f"session {rt.session_id} started for {args.serial}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return EXIT_OK


# -- passport ----------------------------------------------------------------------


def cmd_passport(args) -> int:
    store_path = Path(args.store)
    if not store_path.exists():
        return _fail_env(f"no store at {store_path}")
    passport = build_passport(LogStore(store_path), args.serial)
    if args.json:
        print(json.dumps(passport.to_dict(), sort_keys=True))
        return EXIT_OK
    print(f"digital passport: {passport.product_serial}")
    if not passport.sessions:
        print("  (no recorded sessions)")
    for session in passport.sessions:
        print(f"session {session.session_id} at {session.workcell_id} "
              f"[{session.outcome}]")
        for step in session.steps:
            extra = ""
            if step.torques_mnm:
                extra = "  torques_mnm=" + ",".join(
                    str(t) for t in step.torques_mnm)
            elif step.detection_scores:
                extra = "  scores=" + ",".join(
                    f"{s:.4f}" for s in step.detection_scores)
            duration = (f"{step.duration_ms} ms"
                        if step.duration_ms is not None else "-")
            print(f"  {step.step_id:6} {step.kind:17} {step.verdict:8} "
                  f"attempts={step.attempts} duration={duration}{extra}")
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asmcell",
        description="assembly-cell control system (fully simulatable)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser(
        "validate", help="check a config/procedure pair")
    p_validate.add_argument("--config", required=True)
    p_validate.add_argument("--procedure", required=True)
    p_validate.add_argument("--json", action="store_true")
    p_validate.set_defaults(func=cmd_validate)

    p_run = sub.add_parser("run", help="run one assembly session")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--procedure", required=True)
    p_run.add_argument("--serial", required=True)
    p_run.add_argument("--mode", choices=("sim", "replay"), default="sim")
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--logbook-url", default=None)
    p_run.add_argument("--store", default="logbook-data",
                       help="local store dir (events, or spool with --logbook-url)")
    p_run.add_argument("--tool", default=None,
                       help="pipe or tcp:<host>:<port>; overrides config")
    p_run.add_argument("--listen", default="127.0.0.1:0",
                       help="operator API address in replay mode")
    p_run.add_argument("--headless", action="store_true",
                       help="auto-confirm operator steps")
    p_run.add_argument("--scene-noise", type=float, default=0.02)
    p_run.add_argument("--inject-offset", type=_parse_injection,
                       action="append", default=[],
                       metavar="STEP:DX,DY[:persist]",
                       help="displace an element's simulated placement")
    p_run.add_argument("--json", action="store_true")
    _add_tool_args(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cal = sub.add_parser("calibrate", help="fit the current-to-torque law")
    source = p_cal.add_mutually_exclusive_group(required=True)
    source.add_argument("--samples", help="file of 'current torque' lines")
    source.add_argument("--generate", type=int,
                        help="generate N synthetic bench samples")
    p_cal.add_argument("--k", type=float, default=0.3)
    p_cal.add_argument("--noise", type=float, default=0.05)
    p_cal.add_argument("--seed", type=int, default=0)
    p_cal.add_argument("--fit-offset", action="store_true")
    p_cal.add_argument("--json", action="store_true")
    p_cal.set_defaults(func=cmd_calibrate)

    p_serve = sub.add_parser("serve", help="run a service")
    p_serve.add_argument("--role", choices=("workcell", "logbook", "tool"),
                         required=True)
    p_serve.add_argument("--listen", default="127.0.0.1:0")
    p_serve.add_argument("--store", default="logbook-data")
    p_serve.add_argument("--config")
    p_serve.add_argument("--procedure")
    p_serve.add_argument("--serial")
    p_serve.add_argument("--mode", choices=("sim", "replay"), default="sim")
    p_serve.add_argument("--seed", type=int, default=0)
    p_serve.add_argument("--logbook-url", default=None)
    p_serve.add_argument("--tool", default=None)
    p_serve.add_argument("--headless", action="store_true")
    p_serve.add_argument("--scene-noise", type=float, default=0.02)
    p_serve.add_argument("--inject-offset", type=_parse_injection,
                         action="append", default=[],
                         metavar="STEP:DX,DY[:persist]")
    p_serve.add_argument("--ui", default=None,
                         help="directory of operator UI assets to serve")
    _add_tool_args(p_serve)
    p_serve.set_defaults(func=cmd_serve)

    p_pass = sub.add_parser("passport", help="print a product's passport")
    p_pass.add_argument("--store", required=True)
    p_pass.add_argument("--serial", required=True)
    p_pass.add_argument("--json", action="store_true")
    p_pass.set_defaults(func=cmd_passport)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
