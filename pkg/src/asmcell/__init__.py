"""Assembly-cell control system: procedure execution, machine-vision placement
checks, torque-controlled fastening over a framed wire protocol, and an
append-only work log that rolls up into per-product digital passports.

Everything is simulatable on a desk: cameras are replaced by a deterministic
scene renderer, the fastening tool by a seeded joint/motor simulation, and the
wireless link by an in-process pipe or loopback TCP.
"""

__version__ = "0.1.0"
