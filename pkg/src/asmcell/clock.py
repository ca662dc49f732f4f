"""Time sources for the workcell.

Simulated sessions must produce byte-identical event logs across runs, so
every timestamp that ends up in a WorkEvent comes from a Clock. Live/replay
sessions use the wall clock; simulation uses a logical clock that starts at a
fixed epoch and advances only when the orchestrator says so.
"""

from __future__ import annotations

import time


class Clock:
    def now_ms(self) -> int:
        raise NotImplementedError

    def advance_ms(self, delta_ms: int) -> None:
        """Advance logical time. No-op on real clocks."""


class WallClock(Clock):
    def now_ms(self) -> int:
        return int(time.time() * 1000)


class SimClock(Clock):
    """Deterministic clock: starts at a fixed epoch, moves only via advance_ms."""

    # 2020-09-13T12:26:40Z; arbitrary but frozen so simulated logs are stable.
    DEFAULT_EPOCH_MS = 1_600_000_000_000

    def __init__(self, start_ms: int = DEFAULT_EPOCH_MS):
        self._now_ms = int(start_ms)

    def now_ms(self) -> int:
        return self._now_ms

    def advance_ms(self, delta_ms: int) -> None:
        if delta_ms < 0:
            raise ValueError("clock cannot move backwards")
        self._now_ms += int(delta_ms)
