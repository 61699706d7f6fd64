"""Structured transition log shared by the orchestrator, simulator and metrics.

Each record is ``(t, entity, transition, task, version, data)``. On disk the
log is newline-delimited JSON, one object per record, with ``data`` keys
flattened next to the five fixed fields.
"""

from __future__ import annotations

import hashlib
import io
import json
from typing import Iterable, Iterator, NamedTuple

_FIXED = ("t", "entity", "transition", "task", "version")


class Record(NamedTuple):
    t: float
    entity: str
    transition: str
    task: str | None = None
    version: int | None = None
    data: dict | None = None

    def get(self, key, default=None):
        return default if self.data is None else self.data.get(key, default)

    def to_json(self) -> str:
        out = {"t": self.t, "entity": self.entity, "transition": self.transition,
               "task": self.task, "version": self.version}
        if self.data:
            out.update(self.data)
        return json.dumps(out, separators=(",", ":"), sort_keys=False)

    @classmethod
    def from_json(cls, line: str) -> "Record":
        obj = json.loads(line)
        fixed = [obj.pop(k, None) for k in _FIXED]
        return cls(*fixed, obj or None)


class EventLog:
    """Append-only list of records with JSONL persistence."""

    def __init__(self, records: Iterable[Record] = ()):
        self.records: list[Record] = list(records)

    def emit(self, t, entity, transition, task=None, version=None, **data) -> None:
        self.records.append(Record(float(t), entity, transition, task, version, data or None))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records)

    def select(self, transition=None, entity_prefix=None, task=None) -> list[Record]:
        return [
            r for r in self.records
            if (transition is None or r.transition == transition)
            and (entity_prefix is None or r.entity.startswith(entity_prefix))
            and (task is None or r.task == task)
        ]

    def write(self, stream: io.TextIOBase) -> None:
        for r in self.records:
            stream.write(r.to_json())
            stream.write("\n")

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            self.write(fh)

    @classmethod
    def load(cls, path) -> "EventLog":
        with open(path, encoding="utf-8") as fh:
            return cls(Record.from_json(line) for line in fh if line.strip())

    def digest(self) -> str:
        h = hashlib.sha256()
        for r in self.records:
            h.update(r.to_json().encode())
            h.update(b"\n")
        return h.hexdigest()
