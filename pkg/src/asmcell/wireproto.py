"""Framed wire protocol between the workcell controller and the fastening
tool, plus the session layer that drives a tightening run over it.

Frame layout (bit-exact, normative):

    sync     1 byte   0xAA
    length   u8       payload byte count
    msg_type u8
    seq      u8       sender's frame counter, wraps at 255
    payload  0..255 bytes, layout per message type, little-endian fields
    crc      u16 LE   CRC-16/CCITT-FALSE over length||msg_type||seq||payload

Message types:

    0x01 SetMode   {mode: u8}            0 TorqueLimit, 1 ActuationCutoff
    0x02 SetLimit  {torque_mnm: u32}     setpoint in milli-Nm
    0x03 Start     {}
    0x04 Stop      {}
    0x05 Ack       {acked_seq: u8, status: u8}   0 OK, 1 Rejected
    0x06 Telemetry {t_ms: u32, current_ma: u32, angle_mdeg: i32}
    0x07 Result    {final_torque_mnm: u32, status: u8}  0 Completed,
                                                        1 Stalled, 2 Aborted

Torques travel as integer milli-Nm and currents as integer mA: fixed 0.001
precision, far below the tool's +/-0.5 Nm accuracy band, and no floats on
the wire.

The endpoint is a sequential state machine per connection: Idle ->
Configured (SetMode and SetLimit, each Ack'd) -> Running (Start) -> Result,
then back to Configured for the next fastener. Stop while Running aborts;
commands invalid in the current state are Ack'd as Rejected. The transport
is any ordered byte stream; loopback TCP and an in-process socketpair behave
identically.
"""

from __future__ import annotations

import select
import socket
import struct
import threading
import time
from dataclasses import dataclass

from .tooling import (
    JointModel,
    Mode,
    TighteningStatus,
    ToolConfig,
    ToolSimulation,
    TorqueModel,
    DEFAULT_JOINT,
    DEFAULT_TORQUE_MODEL,
)

SYNC = 0xAA
HEADER_LEN = 4  # sync + length + msg_type + seq
CRC_LEN = 2
DEFAULT_TOOL_PORT = 7421
TELEMETRY_MAX_HZ = 100

ACK_OK = 0
ACK_REJECTED = 1

MODE_CODES = {Mode.TORQUE_LIMIT: 0, Mode.ACTUATION_CUTOFF: 1}
MODE_FROM_CODE = {v: k for k, v in MODE_CODES.items()}
STATUS_CODES = {
    TighteningStatus.COMPLETED: 0,
    TighteningStatus.STALLED: 1,
    TighteningStatus.ABORTED: 2,
}
STATUS_FROM_CODE = {v: k for k, v in STATUS_CODES.items()}


class DecodeError(Exception):
    pass


class BadSync(DecodeError):
    pass


class BadCrc(DecodeError):
    pass


class UnknownType(DecodeError):
    pass


class LengthMismatch(DecodeError):
    pass


class Truncated(DecodeError):
    """Not enough bytes yet; feed more."""


class ToolRejected(Exception):
    """The tool Ack'd a command with status Rejected."""


class ToolUnreachable(Exception):
    pass


# -- CRC -----------------------------------------------------------------------

def _build_crc_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) if crc & 0x8000 else (crc << 1)
            crc &= 0xFFFF
        table.append(crc)
    return table


_CRC_TABLE = _build_crc_table()


def crc16_ccitt_false(data: bytes) -> int:
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xor."""
    crc = 0xFFFF
    for b in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[(crc >> 8) ^ b]
    return crc


# -- Messages ------------------------------------------------------------------


@dataclass(frozen=True)
class SetMode:
    mode: int  # 0 TorqueLimit, 1 ActuationCutoff


@dataclass(frozen=True)
class SetLimit:
    torque_mnm: int


@dataclass(frozen=True)
class Start:
    pass


@dataclass(frozen=True)
class Stop:
    pass


@dataclass(frozen=True)
class Ack:
    acked_seq: int
    status: int  # 0 OK, 1 Rejected


@dataclass(frozen=True)
class Telemetry:
    t_ms: int
    current_ma: int
    angle_mdeg: int


@dataclass(frozen=True)
class Result:
    final_torque_mnm: int
    status: int  # 0 Completed, 1 Stalled, 2 Aborted


Message = SetMode | SetLimit | Start | Stop | Ack | Telemetry | Result

_LAYOUT = {
    0x01: (SetMode, "<B"),
    0x02: (SetLimit, "<I"),
    0x03: (Start, ""),
    0x04: (Stop, ""),
    0x05: (Ack, "<BB"),
    0x06: (Telemetry, "<IIi"),
    0x07: (Result, "<IB"),
}
_TYPE_OF = {cls: code for code, (cls, _) in _LAYOUT.items()}


def encode(msg: Message, seq: int) -> bytes:
    """Serialize one message into a complete frame."""
    if not 0 <= seq <= 255:
        raise ValueError("seq must fit in a u8")
    msg_type = _TYPE_OF[type(msg)]
    _, fmt = _LAYOUT[msg_type]
    fields = [getattr(msg, f) for f in msg.__dataclass_fields__]
    try:
        payload = struct.pack(fmt, *fields) if fmt else b""
    except struct.error as exc:
        raise ValueError(f"field out of range for {type(msg).__name__}: {exc}")
    body = bytes([len(payload), msg_type, seq]) + payload
    crc = crc16_ccitt_false(body)
    return bytes([SYNC]) + body + struct.pack("<H", crc)


def decode(buf: bytes) -> tuple[Message, int, bytes]:
    """Parse exactly one frame from the front of ``buf``.

    Returns (message, seq, remainder). Raises Truncated when more bytes are
    needed, BadSync/BadCrc/UnknownType/LengthMismatch on corrupt input.
    """
    if len(buf) < 1:
        raise Truncated("empty buffer")
    if buf[0] != SYNC:
        raise BadSync(f"expected sync 0xAA, got 0x{buf[0]:02X}")
    if len(buf) < HEADER_LEN:
        raise Truncated("incomplete header")
    length = buf[1]
    total = HEADER_LEN + length + CRC_LEN
    if len(buf) < total:
        raise Truncated(f"need {total} bytes, have {len(buf)}")
    body = buf[1:HEADER_LEN + length]
    stored_crc = struct.unpack_from("<H", buf, HEADER_LEN + length)[0]
    if crc16_ccitt_false(body) != stored_crc:
        raise BadCrc(
            f"crc mismatch: stored 0x{stored_crc:04X}, "
            f"computed 0x{crc16_ccitt_false(body):04X}"
        )
    msg_type = buf[2]
    seq = buf[3]
    entry = _LAYOUT.get(msg_type)
    if entry is None:
        raise UnknownType(f"unknown msg_type 0x{msg_type:02X}")
    cls, fmt = entry
    expected = struct.calcsize(fmt) if fmt else 0
    if length != expected:
        raise LengthMismatch(
            f"{cls.__name__} payload must be {expected} bytes, got {length}"
        )
    payload = bytes(buf[HEADER_LEN:HEADER_LEN + length])
    msg = cls(*struct.unpack(fmt, payload)) if fmt else cls()
    return msg, seq, bytes(buf[total:])


class FrameStream:
    """Reassembles frames from a byte stream chopped at arbitrary points."""

    def __init__(self):
        self._buf = b""

    def feed(self, data: bytes) -> list[tuple[Message, int]]:
        self._buf += data
        out = []
        while True:
            try:
                msg, seq, rest = decode(self._buf)
            except Truncated:
                break
            self._buf = rest
            out.append((msg, seq))
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


# -- Tool endpoint (the simulated tool's network face) ---------------------------


@dataclass
class ToolParams:
    """Everything the tool side needs besides the per-run mode/setpoint."""

    joint: JointModel = DEFAULT_JOINT
    model: TorqueModel = DEFAULT_TORQUE_MODEL
    speed_rad_per_s: float = 5.0
    tick_s: float = 0.001
    current_noise_a: float = 0.05
    seed: int = 0
    max_duration_s: float = 30.0
    realtime: bool = False


class ToolEndpoint:
    """Serves one connection; sequential state machine, no shared state.

    Each accepted Start runs a fresh simulation seeded with seed + run_index,
    streaming Telemetry decimated to at most 100 Hz (always including the
    final tick) and finishing with exactly one Result.
    """

    def __init__(self, conn: socket.socket, params: ToolParams,
                 silence_timeout_s: float | None = None):
        self.conn = conn
        self.params = params
        self.silence_timeout_s = silence_timeout_s
        self._stream = FrameStream()
        self._tx_seq = 0
        self._mode: Mode | None = None
        self._setpoint_mnm: int | None = None
        self._runs_started = 0

    def _send(self, msg: Message) -> None:
        self.conn.sendall(encode(msg, self._tx_seq))
        self._tx_seq = (self._tx_seq + 1) & 0xFF

    def _ack(self, seq: int, ok: bool) -> None:
        self._send(Ack(acked_seq=seq, status=ACK_OK if ok else ACK_REJECTED))

    def _reset(self) -> None:
        self._mode = None
        self._setpoint_mnm = None

    def serve(self) -> None:
        """Handle frames until the peer disconnects."""
        try:
            while True:
                self.conn.settimeout(self.silence_timeout_s)
                try:
                    data = self.conn.recv(4096)
                except socket.timeout:
                    self._reset()  # silence: drop back to Idle
                    continue
                except OSError:
                    return
                if not data:
                    return
                for msg, seq in self._stream.feed(data):
                    self._handle(msg, seq)
        finally:
            try:
                self.conn.close()
            except OSError:
                pass

    def _handle(self, msg: Message, seq: int) -> None:
        if isinstance(msg, SetMode):
            if msg.mode in MODE_FROM_CODE:
                self._mode = MODE_FROM_CODE[msg.mode]
                self._ack(seq, True)
            else:
                self._ack(seq, False)
        elif isinstance(msg, SetLimit):
            setpoint_nm = msg.torque_mnm / 1000.0
            if setpoint_nm > self.params.joint.run_down_torque_nm:
                self._setpoint_mnm = msg.torque_mnm
                self._ack(seq, True)
            else:
                self._ack(seq, False)
        elif isinstance(msg, Start):
            if self._mode is None or self._setpoint_mnm is None:
                self._ack(seq, False)
                return
            self._ack(seq, True)
            self._run()
        elif isinstance(msg, Stop):
            # Nothing is running here (Stop during a run is fielded inside
            # _run), so there is nothing to abort.
            self._ack(seq, False)
        else:
            self._ack(seq, False)

    def _run(self) -> None:
        p = self.params
        cfg = ToolConfig(
            mode=self._mode,
            setpoint_nm=self._setpoint_mnm / 1000.0,
            speed_rad_per_s=p.speed_rad_per_s,
            tick_s=p.tick_s,
            current_noise_a=p.current_noise_a,
            seed=p.seed + self._runs_started,
            max_duration_s=p.max_duration_s,
        )
        self._runs_started += 1
        sim = ToolSimulation(p.joint, cfg, p.model)
        every = max(1, round(0.01 / cfg.tick_s))  # decimate to <= 100 Hz

        while not sim.finished:
            sample = sim.tick()
            if sim.finished or sim.ticks % every == 0:
                self._send(Telemetry(
                    t_ms=round(sample.t_s * 1000),
                    current_ma=max(0, round(sample.current_a * 1000)),
                    angle_mdeg=round(sample.angle_rad * 57295.77951308232),
                ))
            if p.realtime:
                time.sleep(cfg.tick_s)
            if self._poll_stop(sim):
                break

        result = sim.result()
        self._send(Result(
            final_torque_mnm=round(result.final_torque_nm * 1000),
            status=STATUS_CODES[result.status],
        ))

    def _poll_stop(self, sim: ToolSimulation) -> bool:
        """Field frames arriving mid-run without blocking the tick loop."""
        try:
            readable, _, _ = select.select([self.conn], [], [], 0)
        except (OSError, ValueError):
            sim.abort()
            return True
        if not readable:
            return False
        try:
            data = self.conn.recv(4096)
        except OSError:
            sim.abort()
            return True
        if not data:
            sim.abort()
            return True
        stopped = False
        for msg, seq in self._stream.feed(data):
            if isinstance(msg, Stop):
                self._ack(seq, True)
                sim.abort()
                stopped = True
            else:
                self._ack(seq, False)
        return stopped


class ToolServer:
    """TCP face of the simulated tool: one endpoint per connection."""

    def __init__(self, params: ToolParams, host: str = "127.0.0.1",
                 port: int = DEFAULT_TOOL_PORT,
                 silence_timeout_s: float | None = 0.5):
        self.params = params
        self.silence_timeout_s = silence_timeout_s
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(4)
        self._threads: list[threading.Thread] = []
        self._closing = False

    @property
    def address(self) -> tuple[str, int]:
        return self._sock.getsockname()

    def serve_forever(self) -> None:
        while True:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return  # closed
            endpoint = ToolEndpoint(conn, self.params, self.silence_timeout_s)
            t = threading.Thread(target=endpoint.serve, daemon=True)
            t.start()
            self._threads.append(t)

    def serve_in_thread(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t

    def close(self) -> None:
        self._closing = True
        try:
            self._sock.close()
        except OSError:
            pass


def open_pipe_tool(params: ToolParams) -> socket.socket:
    """In-process tool: returns the controller side of a socketpair whose
    other end is served by a daemon endpoint thread."""
    controller_side, tool_side = socket.socketpair()
    endpoint = ToolEndpoint(tool_side, params, silence_timeout_s=None)
    threading.Thread(target=endpoint.serve, daemon=True).start()
    return controller_side


# -- Controller-side session ----------------------------------------------------


class ToolClient:
    """Drives one tightening run at a time over a connected byte stream."""

    def __init__(self, conn: socket.socket, ack_timeout_s: float = 10.0):
        self.conn = conn
        self.ack_timeout_s = ack_timeout_s
        self._stream = FrameStream()
        self._tx_seq = 0
        self._inbox: list[tuple[Message, int]] = []

    @classmethod
    def connect_tcp(cls, host: str, port: int,
                    timeout_s: float = 5.0) -> "ToolClient":
        try:
            conn = socket.create_connection((host, port), timeout=timeout_s)
        except OSError as exc:
            raise ToolUnreachable(f"cannot reach tool at {host}:{port}: {exc}")
        return cls(conn)

    def close(self) -> None:
        try:
            self.conn.close()
        except OSError:
            pass

    def _send(self, msg: Message) -> int:
        seq = self._tx_seq
        try:
            self.conn.sendall(encode(msg, seq))
        except OSError as exc:
            raise ToolUnreachable(f"send failed: {exc}")
        self._tx_seq = (self._tx_seq + 1) & 0xFF
        return seq

    def _next_message(self) -> tuple[Message, int]:
        while not self._inbox:
            self.conn.settimeout(self.ack_timeout_s)
            try:
                data = self.conn.recv(4096)
            except socket.timeout:
                raise ToolUnreachable("tool silent past the timeout")
            except OSError as exc:
                raise ToolUnreachable(f"receive failed: {exc}")
            if not data:
                raise ToolUnreachable("tool closed the connection")
            self._inbox.extend(self._stream.feed(data))
        return self._inbox.pop(0)

    def _command(self, msg: Message) -> None:
        seq = self._send(msg)
        reply, _ = self._next_message()
        if not isinstance(reply, Ack) or reply.acked_seq != seq:
            raise ToolUnreachable(f"expected Ack of seq {seq}, got {reply}")
        if reply.status != ACK_OK:
            raise ToolRejected(f"tool rejected {type(msg).__name__}")

    def run_fastener(self, mode: Mode, setpoint_nm: float,
                     on_telemetry=None) -> Result:
        """SetMode + SetLimit + Start, then stream until the Result."""
        self._command(SetMode(MODE_CODES[mode]))
        self._command(SetLimit(round(setpoint_nm * 1000)))
        self._command(Start())
        while True:
            msg, _ = self._next_message()
            if isinstance(msg, Telemetry):
                if on_telemetry is not None:
                    on_telemetry(msg)
            elif isinstance(msg, Result):
                return msg
            # Stray Acks (e.g. of a racing Stop) are ignored here.

    def stop(self) -> None:
        self._send(Stop())
