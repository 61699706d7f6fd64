"""Sharded, generational accumulator for client updates.

Submitters take a ticket in the open generation, add into one of several
partial sums (picked by hashing the worker identity, so threads rarely share a
lock), then report completion. The submitter whose completion brings the
generation to its goal merges the partials and is the only one to receive
the finalized aggregate. Tickets past the goal roll over to the next
generation, so a generation is built from exactly ``goal`` updates.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from ..secagg.fixed_point import GroupConfig


class DuplicateUpdate(ValueError):
    pass


@dataclass
class Partial:
    weighted_sum: np.ndarray
    total_weight: float = 0.0
    count: int = 0


@dataclass(frozen=True, eq=False)
class FinalizedAggregate:
    generation: int
    weighted_sum: np.ndarray
    total_weight: float
    count: int
    keys: tuple = ()


@dataclass(frozen=True, eq=False)
class Submission:
    generation: int
    finalized: FinalizedAggregate | None = None

    @property
    def ready(self) -> bool:
        return self.finalized is not None


@dataclass(eq=False)
class _Generation:
    index: int
    partials: list[Partial]
    locks: list[threading.Lock]
    tickets: int = 0
    completed: int = 0
    keys: list = field(default_factory=list)


class AggregationBuffer:
    """Accumulates weighted deltas toward an aggregation goal.

    With ``group`` set, vectors are masked group elements: they are summed
    with wrapping addition and must arrive already weighted (the weight is
    still tracked in the clear for normalization).
    """

    def __init__(self, goal: int, length: int, shards: int = 1, group: GroupConfig | None = None):
        if goal < 1 or shards < 1:
            raise ValueError("goal and shards must be positive")
        self.goal = goal
        self.length = length
        self.shards = shards
        self.group = group
        self._lock = threading.Lock()
        self._seen: set = set()
        self._open = self._new_generation(0)
        self.finalized_count = 0

    def _new_generation(self, index: int) -> _Generation:
        dtype = np.uint64 if self.group is not None else np.float64
        return _Generation(
            index,
            [Partial(np.zeros(self.length, dtype=dtype)) for _ in range(self.shards)],
            [threading.Lock() for _ in range(self.shards)],
        )

    @property
    def generation(self) -> int:
        return self._open.index

    @property
    def count(self) -> int:
        """Updates ticketed into the open generation."""
        return self._open.tickets

    def partials(self) -> list[Partial]:
        return list(self._open.partials)

    def submit(self, vector: np.ndarray, weight: float, worker=0, key=None) -> Submission:
        if vector.shape != (self.length,):
            raise ValueError(f"update has shape {vector.shape}, buffer expects ({self.length},)")
        if not weight > 0:
            raise ValueError("update weight must be positive")
        with self._lock:
            if key is not None:
                if key in self._seen:
                    raise DuplicateUpdate(f"update {key} was already counted")
                self._seen.add(key)
            gen = self._open
            gen.tickets += 1
            gen.keys.append(key)
            if gen.tickets == self.goal:
                self._open = self._new_generation(gen.index + 1)
        shard = hash(worker) % self.shards
        with gen.locks[shard]:
            part = gen.partials[shard]
            if self.group is None:
                part.weighted_sum += weight * vector
            else:
                part.weighted_sum = (part.weighted_sum + vector.astype(np.uint64)) & self.group.mask
            part.total_weight += weight
            part.count += 1
        with self._lock:
            gen.completed += 1
            last = gen.completed == self.goal
        if not last:
            return Submission(gen.index)
        return Submission(gen.index, self._merge(gen))

    def _merge(self, gen: _Generation) -> FinalizedAggregate:
        total = gen.partials[0].weighted_sum.copy()
        weight = gen.partials[0].total_weight
        for part in gen.partials[1:]:
            if self.group is None:
                total += part.weighted_sum
            else:
                total = (total + part.weighted_sum) & self.group.mask
            weight += part.total_weight
        count = sum(p.count for p in gen.partials)
        assert count == self.goal
        with self._lock:
            self.finalized_count += 1
        return FinalizedAggregate(gen.index, total, weight, count, tuple(gen.keys))
