"""Coordinator and selectors: who trains what, and where uploads go.

The coordinator is the single writer of the task -> aggregator assignment map.
It hands clients to tasks that still have demand, keeps a pending count for
assignments the aggregator has not confirmed yet, and watches aggregator
heartbeats. Selectors route clients with a read-only snapshot of the map that
they refresh on their own schedule, so they can be briefly out of date.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .config import TaskConfig
from .eventlog import EventLog
from .regimes import Regime, make_regime


class NoLiveAggregator(RuntimeError):
    pass


def enforce_max_concurrency(active: int, pending: int, bound: int) -> bool:
    """Admit one more client only while active plus unconfirmed stays under ``bound``."""
    return active + pending < bound


@dataclass
class TaskLoad:
    active: int = 0
    completed: int = 0


@dataclass(frozen=True)
class Assignment:
    task_id: str
    aggregator_id: int
    seq: int


class Coordinator:
    def __init__(
        self,
        aggregator_ids,
        log: EventLog,
        rng: np.random.Generator,
        *,
        heartbeat_interval: float = 5.0,
        missed_beats: int = 3,
        recovery_period: float = 30.0,
    ):
        if missed_beats < 1:
            raise ValueError("missed_beats must be at least 1")
        self.log = log
        self.rng = rng
        self.heartbeat_interval = heartbeat_interval
        self.missed_beats = missed_beats
        self.recovery_period = recovery_period
        self.live: dict[int, bool] = {a: True for a in aggregator_ids}
        self.missed: dict[int, int] = {a: 0 for a in aggregator_ids}
        self.last_seq: dict[int, int] = {a: 0 for a in aggregator_ids}
        self.configs: dict[str, TaskConfig] = {}
        self.regimes: dict[str, Regime] = {}
        self.assignment: dict[str, Assignment] = {}
        self.loads: dict[str, TaskLoad] = {}
        self._pending: dict[str, deque] = {}
        self._beaten: set[int] = set()
        self._seq = 0
        self.up = True
        self.recovering_until = float("-inf")

    # placement

    def _workload(self, aggregator_id: int) -> float:
        total = 0.0
        for a in self.assignment.values():
            if a.aggregator_id == aggregator_id:
                cfg = self.configs[a.task_id]
                total += cfg.concurrency * (cfg.model_size_bytes or 1)
        return total

    def _place(self, task_id: str) -> int:
        live = [a for a, ok in sorted(self.live.items()) if ok]
        if not live:
            raise NoLiveAggregator(f"no live aggregator for {task_id}")
        return min(live, key=lambda a: (self._workload(a), a))

    def _map(self, task_id: str, aggregator_id: int) -> Assignment:
        self._seq += 1
        a = Assignment(task_id, aggregator_id, self._seq)
        self.assignment[task_id] = a
        return a

    def add_task(self, config: TaskConfig, now: float) -> Assignment:
        self.configs[config.task_id] = config
        self.regimes[config.task_id] = make_regime(config)
        self.loads[config.task_id] = TaskLoad()
        self._pending[config.task_id] = deque()
        a = self._map(config.task_id, self._place(config.task_id))
        self.log.emit(now, "coordinator", "task_assigned", config.task_id, None,
                      aggregator=a.aggregator_id, seq=a.seq)
        return a

    # demand

    def report_load(self, task_id: str, active: int, completed: int) -> None:
        load = self.loads[task_id]
        load.active, load.completed = active, completed

    def pending(self, task_id: str, now: float) -> int:
        q = self._pending[task_id]
        ttl = self.configs[task_id].client_timeout
        while q and q[0] + ttl <= now:
            q.popleft()
        return len(q)

    def demand(self, task_id: str, now: float) -> int:
        load = self.loads[task_id]
        pending = self.pending(task_id, now)
        if not enforce_max_concurrency(load.active, pending, self.configs[task_id].max_active):
            return 0
        return self.regimes[task_id].client_demand(load.active, load.completed, pending)

    def any_demand(self, now: float) -> bool:
        return any(self.demand(t, now) > 0 for t in self.configs)

    def accepting(self, now: float) -> bool:
        return self.up and now >= self.recovering_until

    def assign_client(self, capabilities, now: float) -> str | None:
        """Pick a task for a checking-in client, or ``None`` to send it away."""
        if not self.accepting(now):
            return None
        caps = frozenset(capabilities or ())
        eligible = [
            t for t, cfg in self.configs.items()
            if cfg.requirements <= caps and self.demand(t, now) > 0
        ]
        if not eligible:
            return None
        task_id = eligible[int(self.rng.integers(len(eligible)))] if len(eligible) > 1 else eligible[0]
        self._pending[task_id].append(now)
        return task_id

    def confirm(self, task_id: str) -> None:
        q = self._pending[task_id]
        if q:
            q.popleft()

    # liveness

    def heartbeat(self, aggregator_id: int, seq: int | None) -> None:
        if seq is None or seq <= self.last_seq[aggregator_id]:
            return  # nothing sent, or a reordered/replayed beat
        self.last_seq[aggregator_id] = seq
        self._beaten.add(aggregator_id)

    def tick(self, now: float) -> list[tuple[str, int, Assignment]]:
        """End of a heartbeat interval: count misses and move tasks off dead aggregators.

        An aggregator is declared dead after ``missed_beats`` consecutive
        intervals without a beat. Returns ``(task_id, old_aggregator,
        new_assignment)`` for each move.
        """
        moves = []
        if not self.up:
            return moves
        for a in sorted(self.live):
            if not self.live[a]:
                continue
            self.missed[a] = 0 if a in self._beaten else self.missed[a] + 1
            if self.missed[a] >= self.missed_beats:
                self.live[a] = False
                self.log.emit(now, f"aggregator/{a}", "declared_dead", None, None, missed=self.missed[a])
        self._beaten.clear()
        for task_id in sorted(self.assignment):
            old = self.assignment[task_id]
            if self.live[old.aggregator_id]:
                continue
            new = self._map(task_id, self._place(task_id))
            self._pending[task_id].clear()
            self.loads[task_id] = TaskLoad()
            self.log.emit(now, "coordinator", "task_reassigned", task_id, None,
                          source=old.aggregator_id, aggregator=new.aggregator_id, seq=new.seq)
            moves.append((task_id, old.aggregator_id, new))
        return moves

    # coordinator failure

    def fail(self, now: float) -> None:
        """Lose all soft state; a replacement starts right away but waits out the recovery period."""
        self.up = False
        self.log.emit(now, "coordinator", "failed")

    def restart(self, now: float, reports: dict[str, tuple[int, int, int]], live_ids) -> list:
        """Rebuild from aggregator reports ``task_id -> (aggregator_id, active, completed)``.

        Only aggregators in ``live_ids`` answered, so everything else is
        treated as dead and its tasks are placed again. Every mapping gets a
        fresh sequence number, which makes any map a selector took before the
        failure detectably stale. Returns moves in the same shape as :meth:`tick`.
        """
        self.up = True
        self.recovering_until = now + self.recovery_period
        live_ids = set(live_ids)
        for a in self.live:
            self.live[a] = a in live_ids
            self.missed[a] = 0
        self._beaten.clear()
        moves = []
        for task_id in sorted(self.configs):
            self._pending[task_id].clear()
            if task_id in reports:
                aggregator_id, active, completed = reports[task_id]
                self._map(task_id, aggregator_id)
                self.loads[task_id] = TaskLoad(active, completed)
            else:
                old = self.assignment[task_id].aggregator_id
                self.loads[task_id] = TaskLoad()
                moves.append((task_id, old, self._map(task_id, self._place(task_id))))
        self.log.emit(now, "coordinator", "restarted", None, None, until=self.recovering_until)
        return moves

    def snapshot(self) -> dict[str, Assignment]:
        return dict(self.assignment)


class Selector:
    """Routes clients to the aggregator owning their task, from a possibly stale map."""

    def __init__(self, selector_id: int, coordinator: Coordinator):
        self.selector_id = selector_id
        self.coordinator = coordinator
        self.map: dict[str, Assignment] = {}
        self.refresh()

    def refresh(self) -> None:
        self.map = self.coordinator.snapshot()

    def route(self, task_id: str) -> Assignment | None:
        return self.map.get(task_id)

    def is_stale(self) -> bool:
        current = self.coordinator.assignment
        return any(current.get(t) != a for t, a in self.map.items()) or len(current) != len(self.map)
