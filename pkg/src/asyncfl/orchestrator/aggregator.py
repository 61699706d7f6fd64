"""Aggregator side of a task: sessions, the update buffer and model steps.

A :class:`TaskRuntime` owns one task on one aggregator. It is written against
explicit timestamps rather than a clock so the simulator can drive it one event
at a time; the buffer underneath is safe for concurrent submitters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import model as mc
from ..secagg import fixed_point
from ..secagg.protocol import ClientSubmission
from ..secagg.trusted_party import Rejected, TrustedParty
from .buffer import AggregationBuffer, DuplicateUpdate, FinalizedAggregate
from .config import TaskConfig
from .eventlog import EventLog
from .regimes import make_regime
from .session import ClientSession, SessionState


class ModelStore:
    """Latest model and optimizer state per task.

    Stands in for the shared store a replacement aggregator reloads from; it
    only keeps the newest checkpoint.
    """

    def __init__(self):
        self._latest: dict[str, tuple[mc.ServerModel, mc.ServerOptimizerState]] = {}

    def save(self, task_id: str, model: mc.ServerModel, state: mc.ServerOptimizerState) -> None:
        prev = self._latest.get(task_id)
        if prev is not None and model.version < prev[0].version:
            raise ValueError(f"{task_id}: checkpoint version went backwards")
        self._latest[task_id] = (model, state)

    def load(self, task_id: str):
        return self._latest[task_id]

    def __contains__(self, task_id: str) -> bool:
        return task_id in self._latest


@dataclass(frozen=True)
class ReportReply:
    """Server answer to a client that finished training.

    ``weight`` is fixed here only for secure aggregation, where the client must
    scale its own update before masking. ``offer`` is the key-exchange frame of
    the reserved trusted-party slot.
    """

    weight: float | None = None
    offer: bytes | None = None
    verify_key: bytes | None = None
    sequence_number: int = 0


@dataclass(eq=False)
class _SecureGeneration:
    index: int
    tsa: TrustedParty
    offers: list
    buffer: AggregationBuffer
    next_slot: int = 0
    reserved: int = 0
    accepted: int = 0


class TaskRuntime:
    def __init__(
        self,
        config: TaskConfig,
        log: EventLog,
        store: ModelStore,
        *,
        owner: str = "aggregator/0",
        now: float = 0.0,
        incarnation: int = 0,
    ):
        self.config = config
        self.task_id = config.task_id
        self.regime = make_regime(config)
        self.log = log
        self.store = store
        self.owner = owner
        self.incarnation = incarnation
        self.model, self.opt_state = store.load(config.task_id)
        self.sessions: dict[int, ClientSession] = {}  # active only, in start order
        self.alive = True
        self.finalized = 0
        self.aggregated_updates = 0
        self.on_model_update: list[Callable[["TaskRuntime", float], None]] = []
        self.on_load_change: Callable[["TaskRuntime"], None] | None = None
        self._size = self.model.size
        self._secure = config.secagg_enabled
        if self._secure:
            self.group = config.with_group(self._size).secagg_group
            self._generations: dict[int, _SecureGeneration] = {}
            self._next_generation = 0
            self._sequence = 0
        else:
            self.group = None
            self.buffer = AggregationBuffer(config.aggregation_goal, self._size, config.shards)

    # demand inputs

    @property
    def active(self) -> int:
        return len(self.sessions)

    @property
    def completed(self) -> int:
        """Updates accepted toward the aggregate that has not finalized yet."""
        if self._secure:
            return sum(g.accepted for g in self._generations.values())
        return self.buffer.count

    def demand(self, pending: int = 0) -> int:
        return self.regime.client_demand(self.active, self.completed, pending)

    def _load_changed(self):
        if self.on_load_change is not None:
            self.on_load_change(self)

    # session lifecycle

    def admit(self, session_id: int, client_id: int, num_examples: int, now: float) -> ClientSession | None:
        if not self.alive or self.active >= self.config.max_active:
            return None
        s = ClientSession(
            session_id, client_id, self.task_id, self.model.version, now,
            num_examples=num_examples, last_heartbeat=now, params=self.model.params,
        )
        self.sessions[session_id] = s
        self.log.emit(now, f"session/{session_id}", "selected", self.task_id, s.initial_version,
                      client=client_id, n=num_examples)
        self._load_changed()
        return s

    def advance(self, session: ClientSession, to: SessionState, now: float) -> None:
        session.advance(to, now)
        self.log.emit(now, f"session/{session.session_id}", to.value, self.task_id, self.model.version)

    def end(self, session: ClientSession, to: SessionState, now: float, reason: str | None = None) -> None:
        if session.state.terminal:
            return
        if self._secure and session.generation is not None and to is not SessionState.DONE:
            gen = self._generations.get(session.generation)
            if gen is not None:
                gen.reserved -= 1
        session.advance(to, now, reason)
        self.sessions.pop(session.session_id, None)
        if reason is None:
            self.log.emit(now, f"session/{session.session_id}", to.value, self.task_id, self.model.version)
        else:
            self.log.emit(now, f"session/{session.session_id}", to.value, self.task_id, self.model.version,
                          reason=reason)
        self._load_changed()

    def report(self, session: ClientSession, now: float) -> ReportReply | None:
        """Client finished training. Returns ``None`` if the session was turned away."""
        self.advance(session, SessionState.REPORTING, now)
        session.report_version = self.model.version
        if not self._secure:
            return ReportReply()
        weight = self.regime.aggregation_weight(session.num_examples, session.initial_version, self.model.version)
        if weight is None:
            self.end(session, SessionState.ABORTED, now, "stale")
            return None
        gen = self._reserve()
        slot = gen.next_slot
        gen.next_slot += 1
        gen.reserved += 1
        session.generation = gen.index
        session.weight = weight
        self._sequence += 1
        return ReportReply(weight, gen.offers[slot], gen.tsa.verify_key, self._sequence)

    def _reserve(self) -> _SecureGeneration:
        goal = self.config.aggregation_goal
        for gen in self._generations.values():
            if gen.reserved + gen.accepted < goal and gen.next_slot < len(gen.offers):
                return gen
        index = self._next_generation
        self._next_generation += 1
        tsa = TrustedParty(self.group, 2 * goal, rng_seed=("tsa", self.task_id, self.incarnation, index))
        gen = _SecureGeneration(
            index, tsa, tsa.publish_offers(),
            AggregationBuffer(goal, self._size, self.config.shards, group=self.group),
        )
        self._generations[index] = gen
        return gen

    def upload(self, session: ClientSession, update, now: float, worker=None) -> bool:
        """Receive a finished upload; returns whether it was counted.

        ``update`` is a :class:`~asyncfl.model.ClientUpdate` or, with secure
        aggregation, a :class:`~asyncfl.secagg.protocol.ClientSubmission`.
        """
        version = self.model.version
        self.log.emit(now, f"task/{self.task_id}", "upload_received", self.task_id, version,
                      session=session.session_id)
        worker = session.client_id if worker is None else worker
        if self._secure:
            return self._upload_secure(session, update, now, worker)
        weight = self.regime.aggregation_weight(session.num_examples, session.initial_version, version)
        if weight is None:
            self._discard(session, now, "stale")
            return False
        try:
            sub = self.buffer.submit(update.delta, weight, worker=worker, key=session.key)
        except DuplicateUpdate:
            self._discard(session, now, "duplicate")
            return False
        self._accepted(session, now, version)
        if sub.ready:
            self._apply(sub.finalized, now)
        return True

    def _upload_secure(self, session: ClientSession, submission: ClientSubmission, now, worker) -> bool:
        gen = self._generations.get(session.generation)
        if gen is None:
            self._discard(session, now, "generation-closed")
            return False
        try:
            gen.tsa.process(submission.envelope_frame, submission.completing_frame)
        except Rejected as exc:
            gen.reserved -= 1
            session.generation = None
            self._discard(session, now, exc.reason.value)
            return False
        sub = gen.buffer.submit(submission.masked.masked_vector, session.weight, worker=worker, key=session.key)
        gen.reserved -= 1
        gen.accepted += 1
        self._accepted(session, now, session.report_version)
        if sub.ready:
            del self._generations[gen.index]
            unmasked = (sub.finalized.weighted_sum - gen.tsa.release()) & self.group.mask
            real = fixed_point.decode(unmasked, self.group)
            self._apply(FinalizedAggregate(gen.index, real, sub.finalized.total_weight,
                                           sub.finalized.count, sub.finalized.keys), now)
        return True

    def _accepted(self, session, now, version):
        self.log.emit(now, f"task/{self.task_id}", "update_accepted", self.task_id, version,
                      session=session.session_id, client=session.client_id, n=session.num_examples,
                      staleness=version - session.initial_version, selected_at=session.selected_at)
        self.end(session, SessionState.DONE, now)

    def _discard(self, session, now, reason):
        self.log.emit(now, f"task/{self.task_id}", "update_discarded", self.task_id, self.model.version,
                      session=session.session_id, reason=reason)
        self.end(session, SessionState.DONE, now, "discarded")

    def _apply(self, agg: FinalizedAggregate, now: float) -> None:
        delta = mc.finalize_aggregate(agg.weighted_sum, agg.total_weight)
        self.opt_state, self.model = mc.fedadam_step(self.opt_state, self.model, delta)
        self.store.save(self.task_id, self.model, self.opt_state)
        self.finalized += 1
        self.aggregated_updates += agg.count
        self.log.emit(now, f"task/{self.task_id}", "model_updated", self.task_id, self.model.version,
                      count=agg.count, generation=agg.generation)
        for s in self.regime.sessions_to_abort(list(self.sessions.values()), self.model.version):
            self.end(s, SessionState.ABORTED, now, "stale")
        for hook in self.on_model_update:
            hook(self, now)
        self._load_changed()

    # failure handling

    def fail(self) -> None:
        """The owning aggregator died: stop accepting anything. State is lost."""
        self.alive = False

    def drop_all(self, now: float, reason: str) -> int:
        """Mark every in-flight session dead (called once the loss is detected)."""
        lost = list(self.sessions.values())
        for s in lost:
            self.end(s, SessionState.DEAD, now, reason)
        buffered = self.completed
        self.log.emit(now, f"task/{self.task_id}", "buffer_lost", self.task_id, self.model.version,
                      count=buffered, sessions=len(lost))
        return buffered

    def shutdown(self, now: float) -> None:
        for s in list(self.sessions.values()):
            self.end(s, SessionState.ABORTED, now, "shutdown")


@dataclass(eq=False)
class Aggregator:
    """Hosts task runtimes and sends heartbeats while alive."""

    aggregator_id: int
    alive: bool = True
    tasks: dict = field(default_factory=dict)
    heartbeat_seq: int = 0

    @property
    def name(self) -> str:
        return f"aggregator/{self.aggregator_id}"

    def heartbeat(self) -> int | None:
        if not self.alive:
            return None
        self.heartbeat_seq += 1
        return self.heartbeat_seq

    def fail(self) -> None:
        self.alive = False
        for rt in self.tasks.values():
            rt.fail()

    def workload(self, model_sizes: dict[str, int] | None = None) -> float:
        total = 0.0
        for task_id, rt in self.tasks.items():
            size = (model_sizes or {}).get(task_id, rt.config.model_size_bytes or rt.model.size * 4)
            total += rt.config.concurrency * size
        return total


def new_task_state(config: TaskConfig, size: int, store: ModelStore, params: np.ndarray | None = None) -> None:
    """Seed the store with version 0 of a task."""
    model = mc.ServerModel(0, np.zeros(size) if params is None else np.asarray(params, dtype=np.float64))
    state = mc.ServerOptimizerState.fresh(size, learning_rate=config.server_lr, beta1=config.beta1,
                                          beta2=config.beta2, epsilon=config.epsilon)
    store.save(config.task_id, model, state)
