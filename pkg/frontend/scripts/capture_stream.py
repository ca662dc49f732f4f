"""Capture a real workcell event stream into the vitest fixture.

Serves the reference five-step procedure in simulation mode with a
misplaced first attempt on S1, acknowledges the alarm and confirms S5 over
the HTTP API (exactly what the panel does), then saves the initial snapshot
plus the full ordered stream to tests/fixtures/stream.json.

Run from the repo root after installing the Python package:

    python3 frontend/scripts/capture_stream.py
"""

import json
import socket
import subprocess
import sys
import time
import urllib.error
import urllib.request
from pathlib import Path

REPO = Path(__file__).resolve().parents[2]
FIXTURE = Path(__file__).resolve().parents[1] / "tests/fixtures/stream.json"
CLI = [sys.executable, "-m", "asmcell"]


def free_port() -> int:
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


def get(base, path):
    try:
        with urllib.request.urlopen(base + path, timeout=5) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def post(base, path):
    req = urllib.request.Request(base + path, data=b"{}", method="POST",
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=5) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def main() -> None:
    subprocess.run([sys.executable, str(REPO / "demos/00_make_demo_cell.py")],
                   check=True, capture_output=True)
    cell = REPO / "demos/demo-cell"
    port = free_port()
    proc = subprocess.Popen(
        CLI + ["serve", "--role", "workcell",
               "--config", str(cell / "cell.txt"),
               "--procedure", str(cell / "proc.txt"),
               "--serial", "SN-0042", "--listen", f"127.0.0.1:{port}",
               "--mode", "sim", "--seed", "7", "--store", "/tmp/capture-store",
               "--joint-seat", "0.5", "--inject-offset", "S1:50,0"],
        stdout=subprocess.PIPE, text=True, cwd=REPO,
    )
    base = f"http://127.0.0.1:{port}"
    try:
        for _ in range(2):
            proc.stdout.readline()
        code, snapshot = get(base, "/session")
        assert code == 200, snapshot

        deadline = time.time() + 60
        acked = confirmed = False
        while time.time() < deadline:
            code, snap = get(base, "/session")
            if not acked and snap["light"] == "Alarm":
                assert post(base, "/alarm/ack")[0] == 200
                acked = True
            active = snap.get("active_step")
            if (not confirmed and active
                    and active["kind"] == "OperatorConfirm"):
                assert post(base, "/steps/S5/confirm")[0] == 200
                confirmed = True
            if snap["status"] == "complete":
                break
            time.sleep(0.03)
        assert snap["status"] == "complete", snap

        items = []
        with urllib.request.urlopen(base + "/events?from=0",
                                    timeout=30) as resp:
            for line in resp:
                text = line.decode("utf-8").rstrip("\n")
                if text.startswith("data: "):
                    items.append(json.loads(text[len("data: "):]))
    finally:
        proc.terminate()
        proc.wait(timeout=10)

    FIXTURE.parent.mkdir(parents=True, exist_ok=True)
    FIXTURE.write_text(json.dumps(
        {"snapshot": snapshot, "stream": items}, indent=1, sort_keys=True,
    ))
    events = sum(1 for i in items if i["type"] == "event")
    print(f"captured {len(items)} stream items ({events} work events) "
          f"-> {FIXTURE}")


if __name__ == "__main__":
    main()
