"""Injectable clocks so rate control is testable without wall time."""

from __future__ import annotations

import time


class MonotonicClock:
    """Real monotonic time; the production default."""

    def now(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float):
        if seconds > 0:
            time.sleep(seconds)


class SimulatedClock:
    """Deterministic clock that only moves when told to.

    `sleep` advances time instead of blocking; `advance` lets test
    doubles model work taking time (a fake pipeline stage, for
    instance).
    """

    def __init__(self, start: float = 0.0):
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def sleep(self, seconds: float):
        if seconds > 0:
            self._now += seconds

    def advance(self, seconds: float):
        if seconds < 0:
            raise ValueError("time cannot move backwards")
        self._now += seconds
