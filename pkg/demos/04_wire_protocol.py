"""
The tool wire protocol, byte by byte
====================================

Encodes the command sequence a workcell sends for one fastener, shows the
exact frame bytes, then drives a complete tightening over the in-process
pipe transport and prints the decimated telemetry.
"""

from asmcell.tooling import JointModel, Mode
from asmcell.wireproto import (
    SetLimit, SetMode, Start, ToolClient, ToolParams, crc16_ccitt_false,
    encode, decode, open_pipe_tool,
)

print("check value: crc16_ccitt_false(b'123456789') = "
      f"0x{crc16_ccitt_false(b'123456789'):04X}")
print()

for seq, msg in enumerate([SetMode(0), SetLimit(2000), Start()]):
    frame = encode(msg, seq)
    decoded, got_seq, _ = decode(frame)
    print(f"{type(msg).__name__:9} seq={seq}  ->  {frame.hex(' ')}")
    assert decoded == msg and got_seq == seq
print()

# now over a live (simulated) tool
params = ToolParams(
    joint=JointModel(run_down_torque_nm=0.2, seat_angle_rad=0.5,
                     stiffness_nm_per_rad=50.0),
    speed_rad_per_s=1.0, current_noise_a=0.05, seed=21,
)
client = ToolClient(open_pipe_tool(params))
telemetry = []
result = client.run_fastener(Mode.TORQUE_LIMIT, 2.0,
                             on_telemetry=telemetry.append)
client.close()

print(f"telemetry frames: {len(telemetry)} (decimated to <= 100 Hz)")
for t in telemetry[:5]:
    print(f"  t={t.t_ms:5d} ms  current={t.current_ma:5d} mA  "
          f"angle={t.angle_mdeg / 1000:8.1f} deg")
print("  ...")
print(f"result: final torque {result.final_torque_mnm} mNm, "
      f"status {result.status} (0 = Completed)")
