"""Event queue with a virtual clock.

Events are ordered by ``(time, insertion sequence)``, so two events at the same
instant always run in the order they were scheduled and a run is a pure
function of its seeds.
"""

from __future__ import annotations

import enum
import heapq
from typing import Any, NamedTuple


class EventKind(str, enum.Enum):
    CHECK_IN = "check_in"
    DOWNLOAD_DONE = "download_done"
    TRAIN_DONE = "train_done"
    REPORT_DONE = "report_done"
    UPLOAD_DONE = "upload_done"
    HEARTBEAT = "heartbeat"
    CLIENT_DROP = "client_drop"
    AGGREGATOR_FAIL = "aggregator_fail"
    COORDINATOR_FAIL = "coordinator_fail"
    COORDINATOR_RECOVERED = "coordinator_recovered"


class Event(NamedTuple):
    timestamp: float
    seq: int
    kind: EventKind
    payload: Any = None


class CausalityError(RuntimeError):
    pass


class EventQueue:
    def __init__(self, start: float = 0.0):
        self._heap: list[Event] = []
        self._seq = 0
        self.now = start
        self.processed = 0

    def schedule(self, timestamp: float, kind: EventKind, payload=None) -> Event:
        if timestamp < self.now:
            raise CausalityError(f"cannot schedule {kind.value} at {timestamp} before now={self.now}")
        ev = Event(timestamp, self._seq, kind, payload)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def peek_time(self) -> float | None:
        return self._heap[0].timestamp if self._heap else None

    def pop(self) -> Event:
        ev = heapq.heappop(self._heap)
        if ev.timestamp < self.now:
            raise CausalityError(f"event at {ev.timestamp} popped after {self.now}")
        self.now = ev.timestamp
        self.processed += 1
        return ev

    def __len__(self) -> int:
        return len(self._heap)
