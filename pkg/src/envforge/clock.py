"""Clocks for recorded timestamps and durations.

Deadlines and timeouts always use :func:`time.monotonic`; a clock only decides
what gets *written down*, so replayed sessions can serialize byte-identically.
"""

from __future__ import annotations

import datetime as dt


class SystemClock:
    def now(self) -> str:
        return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")

    def measure(self, seconds: float) -> float:
        return round(seconds, 3)


class FrozenClock:
    def __init__(self, stamp: str = "2000-01-01T00:00:00+00:00"):
        self.stamp = stamp

    def now(self) -> str:
        return self.stamp

    def measure(self, seconds: float) -> float:
        return 0.0
