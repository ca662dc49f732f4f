"""Operator-facing HTTP API of a workcell.

Endpoints (JSON bodies unless noted):

    GET  /session                  state snapshot of the active session
    POST /session                  start a session {product_serial, seed?, ...}
    POST /steps/<id>/confirm       operator confirmation (idempotent)
    POST /alarm/ack                acknowledge the alarm light
    POST /cameras/<id>/frame       submit a PGM frame (replay mode)
    GET  /cameras/<id>/frame.png   last frame of that camera as PNG
    GET  /events?from=<n>          server-push stream, one JSON item per
                                   message (SSE; items are work events,
                                   light changes and live torque telemetry)

The server holds one active session at a time. Session state reads are
consistent snapshots; the event stream delivers every item at least once, in
order, and can be resumed from any index (Last-Event-ID or ?from=).
"""

from __future__ import annotations

import io
import json
import threading
from pathlib import Path

import numpy as np

from .jsonhttp import JsonRequestHandler, ThreadingJsonServer, start_server_thread
from .procedure import ProcedureScript, parse_procedure
from .vision import GrayImage, PgmError, TemplateLibrary, decode_pgm
from .workcell import (
    ReplaySceneSource,
    SessionRunner,
    SessionRuntime,
    SimulatedSceneSource,
    WorkcellConfig,
)

DEFAULT_OPERATOR_PORT = 7422

_MIME = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".png": "image/png",
    ".svg": "image/svg+xml",
    ".ico": "image/x-icon",
    ".json": "application/json",
    ".map": "application/json",
}


class WorkcellService:
    """Owns the cell's config, template library and the active session."""

    def __init__(self, cfg: WorkcellConfig, templates: TemplateLibrary | None,
                 sink_factory, tool_connector, *, default_mode: str = "sim",
                 default_seed: int = 0, noise_sigma: float = 0.02,
                 injections=(), auto_confirm: bool = False,
                 ui_dir: str | Path | None = None):
        self.cfg = cfg
        self.templates = templates
        self.sink_factory = sink_factory
        self.tool_connector = tool_connector
        self.default_mode = default_mode
        self.default_seed = default_seed
        self.noise_sigma = noise_sigma
        self.injections = list(injections)
        self.auto_confirm = auto_confirm
        self.ui_dir = Path(ui_dir) if ui_dir else None

        self._lock = threading.Lock()
        self.runtime: SessionRuntime | None = None
        self.scene_source = None
        self._runner_thread: threading.Thread | None = None
        self.last_frames: dict[str, GrayImage] = {}

    def _remember_frame(self, camera_id: str, frame: GrayImage) -> None:
        with self._lock:
            self.last_frames[camera_id] = frame

    def start_session(self, script: ProcedureScript, product_serial: str,
                      mode: str | None = None, seed: int | None = None,
                      ) -> SessionRuntime:
        with self._lock:
            if self.runtime is not None and self.runtime.status in (
                    "created", "running"):
                raise RuntimeError("a session is already active")
            mode = mode or self.default_mode
            seed = self.default_seed if seed is None else seed
            if mode == "sim":
                scene = SimulatedSceneSource(
                    self.templates, noise_sigma=self.noise_sigma, seed=seed,
                    injections=self.injections,
                )
            else:
                scene = ReplaySceneSource()
            scene.on_capture = self._remember_frame
            runner = SessionRunner(
                self.cfg, script, self.templates, scene, self.tool_connector,
                self.sink_factory(), product_serial=product_serial, mode=mode,
                seed=seed, auto_confirm=self.auto_confirm,
            )
            self.runtime = runner.runtime
            self.scene_source = scene
            self._runner_thread = threading.Thread(
                target=runner.run, daemon=True
            )
            self._runner_thread.start()
            return runner.runtime

    def submit_frame(self, camera_id: str, frame: GrayImage) -> None:
        self.cfg.camera(camera_id)  # raises CameraUnavailable if unknown
        self._remember_frame(camera_id, frame)
        if isinstance(self.scene_source, ReplaySceneSource):
            self.scene_source.submit(camera_id, frame)

    def wait_session_end(self, timeout_s: float | None = None) -> bool:
        t = self._runner_thread
        if t is None:
            return True
        t.join(timeout_s)
        return not t.is_alive()


class OperatorApiServer:
    def __init__(self, service: WorkcellService, host: str = "127.0.0.1",
                 port: int = DEFAULT_OPERATOR_PORT):
        self.service = service
        handler = _make_handler(service)
        self.httpd = ThreadingJsonServer((host, port), handler)

    @property
    def address(self) -> tuple[str, int]:
        return self.httpd.server_address

    def serve_in_thread(self):
        return start_server_thread(self.httpd)

    def serve_forever(self):
        self.httpd.serve_forever()

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


def _make_handler(service: WorkcellService):
    class OperatorHandler(JsonRequestHandler):
        def _runtime(self) -> SessionRuntime | None:
            return service.runtime

        # -- GET ------------------------------------------------------------

        def do_GET(self):
            path, _, query = self.path.partition("?")
            if path == "/session":
                rt = self._runtime()
                if rt is None:
                    self.send_error_json(404, "no session")
                    return
                self.send_json(200, rt.snapshot())
            elif path == "/events":
                self._stream_events(query)
            elif path.startswith("/cameras/") and path.endswith("/frame.png"):
                camera_id = path[len("/cameras/"):-len("/frame.png")]
                self._send_frame_png(camera_id)
            elif path == "/healthz":
                self.send_json(200, {"ok": True})
            elif service.ui_dir is not None:
                self._serve_static(path)
            else:
                self.send_error_json(404, "unknown endpoint")

        def _send_frame_png(self, camera_id: str) -> None:
            frame = service.last_frames.get(camera_id)
            if frame is None:
                self.send_error_json(404, f"no frame for camera {camera_id!r}")
                return
            from PIL import Image

            data = np.rint(frame.pixels * 255.0).astype(np.uint8)
            buf = io.BytesIO()
            Image.fromarray(data, mode="L").save(buf, format="PNG")
            self.send_bytes(200, "image/png", buf.getvalue())

        def _serve_static(self, path: str) -> None:
            rel = path.lstrip("/") or "index.html"
            full = (service.ui_dir / rel).resolve()
            try:
                full.relative_to(service.ui_dir.resolve())
            except ValueError:
                self.send_error_json(404, "not found")
                return
            if not full.is_file():
                self.send_error_json(404, "not found")
                return
            mime = _MIME.get(full.suffix, "application/octet-stream")
            self.send_bytes(200, mime, full.read_bytes())

        def _stream_events(self, query: str) -> None:
            rt = self._runtime()
            if rt is None:
                self.send_error_json(404, "no session")
                return
            start = 0
            last_event_id = self.headers.get("Last-Event-ID")
            if last_event_id is not None:
                try:
                    start = int(last_event_id) + 1
                except ValueError:
                    pass
            for part in query.split("&"):
                if part.startswith("from="):
                    try:
                        start = int(part[len("from="):])
                    except ValueError:
                        pass
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Connection", "close")
            self.end_headers()
            try:
                for index, item in rt.stream_items(start):
                    if item is None:
                        self.wfile.write(b": keepalive\n\n")
                        self.wfile.flush()
                        continue
                    data = json.dumps(item, sort_keys=True)
                    chunk = f"id: {index}\ndata: {data}\n\n"
                    self.wfile.write(chunk.encode("utf-8"))
                    self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError, OSError):
                return

        # -- POST -----------------------------------------------------------

        def do_POST(self):
            path = self.path.partition("?")[0]
            if path == "/session":
                self._start_session()
            elif path.startswith("/steps/") and path.endswith("/confirm"):
                step_id = path[len("/steps/"):-len("/confirm")]
                self._confirm(step_id)
            elif path == "/alarm/ack":
                self._ack_alarm()
            elif path.startswith("/cameras/") and path.endswith("/frame"):
                camera_id = path[len("/cameras/"):-len("/frame")]
                self._submit_frame(camera_id)
            else:
                self.send_error_json(404, "unknown endpoint")

        def _start_session(self):
            try:
                body = self.read_json() or {}
            except (ValueError, UnicodeDecodeError):
                self.send_error_json(400, "bad JSON body")
                return
            serial = body.get("product_serial")
            if not serial:
                self.send_error_json(400, "product_serial is required")
                return
            script_path = body.get("procedure")
            script_text = body.get("procedure_text")
            try:
                if script_text:
                    script = parse_procedure(script_text)
                elif script_path:
                    script = parse_procedure(
                        Path(script_path).read_text(encoding="utf-8"))
                else:
                    self.send_error_json(
                        400, "procedure or procedure_text is required")
                    return
            except Exception as exc:
                self.send_error_json(400, f"bad procedure: {exc}")
                return
            try:
                rt = service.start_session(
                    script, serial,
                    mode=body.get("mode"), seed=body.get("seed"),
                )
            except RuntimeError as exc:
                self.send_error_json(409, str(exc))
                return
            except Exception as exc:
                self.send_error_json(400, str(exc))
                return
            self.send_json(200, {"session_id": rt.session_id})

        def _confirm(self, step_id: str):
            rt = self._runtime()
            if rt is None:
                self.send_error_json(404, "no session")
                return
            try:
                status = rt.confirm(step_id)
            except KeyError:
                self.send_error_json(404, f"unknown step {step_id!r}")
                return
            except ValueError as exc:
                self.send_error_json(409, str(exc))
                return
            self.send_json(200, {"status": status})

        def _ack_alarm(self):
            rt = self._runtime()
            if rt is None:
                self.send_error_json(404, "no session")
                return
            try:
                rt.acknowledge_alarm()
            except ValueError as exc:
                self.send_error_json(409, str(exc))
                return
            self.send_json(200, {"status": "acknowledged"})

        def _submit_frame(self, camera_id: str):
            raw = self.read_body()
            try:
                frame = decode_pgm(raw)
            except PgmError as exc:
                self.send_error_json(400, f"bad PGM: {exc}")
                return
            try:
                service.submit_frame(camera_id, frame)
            except Exception as exc:
                self.send_error_json(404, str(exc))
                return
            self.send_json(200, {"status": "accepted"})

    return OperatorHandler
