"""Drives the orchestrator with simulated clients on a virtual clock.

The client side of the participation protocol lives here: check in, download,
train, report, upload, with log-normal execution times, a session timeout and
Bernoulli mid-training dropout. Everything the server does goes through the
orchestrator objects, so the event log is what a real deployment would emit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .. import model as mc
from ..orchestrator.aggregator import Aggregator, ModelStore, ReportReply, TaskRuntime, new_task_state
from ..orchestrator.config import TaskConfig
from ..orchestrator.coordinator import Coordinator, Selector
from ..orchestrator.eventlog import EventLog
from ..orchestrator.session import ClientSession, SessionState
from ..secagg import fixed_point
from ..secagg.protocol import client_submit
from .engine import Event, EventKind, EventQueue
from .population import Population, check_spread, client_execution_model

STOP_KINDS = ("target-loss", "updates", "time", "versions")


@dataclass(frozen=True)
class StopRule:
    """When to end a run.

    ``target-loss`` stops once every task's held-out loss reaches the value,
    ``updates`` once that many client updates went into finalized aggregates,
    ``versions`` once every task reached that model version, ``time`` at that
    virtual second.
    """

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in STOP_KINDS:
            raise ValueError(f"unknown stop rule {self.kind!r}; expected one of {', '.join(STOP_KINDS)}")
        if not self.value >= 0:
            raise ValueError("stop rule value must be non-negative")

    @classmethod
    def parse(cls, text: str) -> "StopRule":
        kind, sep, value = text.partition("=")
        if not sep:
            raise ValueError(f"stop rule {text!r} is not of the form kind=value")
        return cls(kind.strip(), float(value))

    def __str__(self) -> str:
        v = int(self.value) if self.kind in ("updates", "versions") else self.value
        return f"{self.kind}={v}"


@dataclass(frozen=True)
class Failure:
    time: float
    target: str  # "coordinator" or "aggregator/<id>"


@dataclass(frozen=True)
class SimSettings:
    num_aggregators: int = 2
    num_selectors: int = 2
    check_in_rate: float = 5000.0
    heartbeat_interval: float = 5.0
    missed_beats: int = 3
    recovery_period: float = 30.0
    event_budget: int = 20_000_000
    eval_clients: int = 200
    eval_limit: int = 64
    stall_after: int = 10_000
    min_spread: float | None = None
    record_params: bool = False


class SimulationTimeout(RuntimeError):
    def __init__(self, message: str, log: EventLog):
        super().__init__(message)
        self.log = log


class HeldOut:
    """Fixed held-out set: split-1 data of clients drawn uniformly from the population."""

    def __init__(self, task: mc.SyntheticTask, population: Population, clients: int, limit: int, seed: int):
        rng = np.random.default_rng([seed & 0xFFFFFFFF, mc.label_seed("held-out")])
        ids = np.sort(rng.choice(len(population), size=min(clients, len(population)), replace=False))
        self.task = task
        self.client_ids = ids
        parts = [population.dataset(task, int(i), split=1, limit=limit) for i in ids]
        self.y = np.concatenate([p.y for p in parts])
        if task.features is not None:
            self.rows = np.concatenate([p.rows for p in parts])
            self.x = None
        else:
            self.rows = None
            self.x = np.concatenate([p.x for p in parts])

    def loss(self, params: np.ndarray) -> float:
        z = (self.task.features @ params)[self.rows] if self.rows is not None else self.x @ params
        return float(_pointwise_loss(self.task.kind, z, self.y).mean())


def _pointwise_loss(kind, z, y):
    if kind is mc.TaskKind.LINEAR_REGRESSION:
        return 0.5 * (z - y) ** 2
    return np.logaddexp(0.0, z) - y * z


@dataclass
class SimulationResult:
    log: EventLog
    models: dict
    stop_reason: str
    end_time: float
    events: int
    seed: int
    trajectories: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)


@dataclass(eq=False)
class _Ctx:
    session: ClientSession
    runtime: TaskRuntime
    train_s: float
    transfer_s: float
    deadline: float
    reply: ReportReply | None = None
    update: object = None


def inject_failure(queue: EventQueue, schedule) -> list[Event]:
    """Put failure events for ``(time, target)`` pairs on the queue."""
    events = []
    for item in schedule:
        f = item if isinstance(item, Failure) else Failure(float(item[0]), str(item[1]))
        if f.target == "coordinator":
            events.append(queue.schedule(f.time, EventKind.COORDINATOR_FAIL, f))
        elif f.target.startswith("aggregator/"):
            events.append(queue.schedule(f.time, EventKind.AGGREGATOR_FAIL, f))
        else:
            raise ValueError(f"unknown failure target {f.target!r}")
    return events


class Simulation:
    def __init__(
        self,
        tasks,
        population: Population,
        problems,
        stop: StopRule,
        *,
        seed: int = 0,
        failures=(),
        settings: SimSettings = SimSettings(),
    ):
        self.configs: list[TaskConfig] = [tasks] if isinstance(tasks, TaskConfig) else list(tasks)
        if len({c.task_id for c in self.configs}) != len(self.configs):
            raise ValueError("task ids must be unique")
        if isinstance(problems, mc.SyntheticTask):
            problems = {c.task_id: problems for c in self.configs}
        self.problems: dict[str, mc.SyntheticTask] = dict(problems)
        self.population = population
        self.stop = stop
        self.seed = int(seed)
        self.settings = settings
        self.failures = [f if isinstance(f, Failure) else Failure(float(f[0]), str(f[1])) for f in failures]
        for f in self.failures:
            if f.target.startswith("aggregator/"):
                i = int(f.target.split("/", 1)[1])
                if not 0 <= i < settings.num_aggregators:
                    raise ValueError(f"failure target {f.target} does not exist")
        sizes = {}
        for i, cfg in enumerate(self.configs):
            m = self.problems[cfg.task_id].size
            if cfg.model_size_bytes is None:
                cfg = replace(cfg, model_size_bytes=4 * m)
            cfg = cfg.with_group(m).validate(len(population))
            self.configs[i] = cfg
            sizes[cfg.task_id] = m
            if settings.min_spread is not None:
                check_spread(population, cfg.model_size_bytes, settings.min_spread)
        self._sizes = sizes

    # helpers

    def _rng(self, label) -> np.random.Generator:
        return np.random.default_rng([self.seed & 0xFFFFFFFF, mc.label_seed(label)])

    def run(self) -> SimulationResult:
        s = self.settings
        self.log = log = EventLog()
        self.queue = q = EventQueue()
        self.store = ModelStore()
        self.aggregators = [Aggregator(i) for i in range(s.num_aggregators)]
        self.coordinator = Coordinator(
            range(s.num_aggregators), log, self._rng("coordinator"),
            heartbeat_interval=s.heartbeat_interval, missed_beats=s.missed_beats,
            recovery_period=s.recovery_period,
        )
        self._arrivals = self._rng("check-in-times")
        self._picks = self._rng("check-in-clients")
        self._routes = self._rng("selector-choice")
        self.runtimes: dict[str, TaskRuntime] = {}
        self._all_runtimes: list[TaskRuntime] = []
        self._held_out = {
            c.task_id: HeldOut(self.problems[c.task_id], self.population, s.eval_clients, s.eval_limit,
                               self.seed)
            for c in self.configs
        }
        self._busy: dict[int, ClientSession] = {}
        self._next_session = 0
        self._check_in_scheduled = False
        self._failed_check_ins = 0
        self._stalled = False
        self._stop_reason: str | None = None
        self._last_loss: dict[str, float] = {}
        self.trajectories: dict[str, list] = {c.task_id: [] for c in self.configs}
        self.counters = {"check_ins": 0, "busy_rejections": 0, "no_task": 0, "route_retries": 0,
                         "unroutable": 0}
        self._tick = 0

        log.emit(0.0, "run", "started", None, None, seed=self.seed, stop=str(self.stop),
                 population=self.population.digest()[:16])
        for cfg in self.configs:
            new_task_state(cfg, self._sizes[cfg.task_id], self.store)
            a = self.coordinator.add_task(cfg, 0.0)
            self._start_runtime(cfg, a.aggregator_id, 0.0, incarnation=0)
        self.selectors = [Selector(i, self.coordinator) for i in range(s.num_selectors)]
        inject_failure(q, self.failures)
        q.schedule(s.heartbeat_interval, EventKind.HEARTBEAT)
        self._maybe_check_in()

        handlers = {
            EventKind.CHECK_IN: self._on_check_in,
            EventKind.DOWNLOAD_DONE: self._on_download_done,
            EventKind.TRAIN_DONE: self._on_train_done,
            EventKind.REPORT_DONE: self._on_report_done,
            EventKind.UPLOAD_DONE: self._on_upload_done,
            EventKind.CLIENT_DROP: self._on_drop,
            EventKind.HEARTBEAT: self._on_heartbeat,
            EventKind.AGGREGATOR_FAIL: self._on_aggregator_fail,
            EventKind.COORDINATOR_FAIL: self._on_coordinator_fail,
            EventKind.COORDINATOR_RECOVERED: self._on_coordinator_recovered,
        }
        limit = self.stop.value if self.stop.kind == "time" else math.inf
        end = 0.0
        while self._stop_reason is None:
            t = q.peek_time()
            if t is None:
                self._stop_reason = "queue-empty"
                end = q.now
                break
            if t > limit:
                self._stop_reason = "time"
                end = limit
                break
            if q.processed >= s.event_budget:
                self._finish(q.now)
                raise SimulationTimeout(
                    f"stop rule {self.stop} not met within {s.event_budget} events (t={q.now:.1f}s)", log)
            ev = q.pop()
            handlers[ev.kind](ev)
            end = q.now
            if ev.kind is not EventKind.HEARTBEAT and ev.kind is not EventKind.CHECK_IN:
                self._maybe_check_in()
        self._finish(end)
        return SimulationResult(
            log, {t: rt.model for t, rt in self.runtimes.items()}, self._stop_reason, end,
            q.processed, self.seed, self.trajectories, dict(self.counters),
        )

    def _finish(self, now: float) -> None:
        for rt in self._all_runtimes:
            rt.shutdown(now)
        self.log.emit(now, "run", "finished", None, None, reason=self._stop_reason or "timeout")

    # runtimes

    def _start_runtime(self, cfg: TaskConfig, aggregator_id: int, now: float, incarnation: int) -> TaskRuntime:
        agg = self.aggregators[aggregator_id]
        rt = TaskRuntime(cfg, self.log, self.store, owner=agg.name, now=now, incarnation=incarnation)
        rt.on_model_update.append(self._on_model_update)
        rt.on_load_change = self._report_load
        agg.tasks[cfg.task_id] = rt
        self.runtimes[cfg.task_id] = rt
        self._all_runtimes.append(rt)
        if incarnation == 0 or rt.model.version == 0:
            self._evaluate(rt, now)
        return rt

    def _report_load(self, rt: TaskRuntime) -> None:
        if rt.alive:
            self.coordinator.report_load(rt.task_id, rt.active, rt.completed)

    def _evaluate(self, rt: TaskRuntime, now: float) -> None:
        loss = self._held_out[rt.task_id].loss(rt.model.params)
        self._last_loss[rt.task_id] = loss
        self.log.emit(now, f"task/{rt.task_id}", "eval", rt.task_id, rt.model.version, loss=loss)

    def _on_model_update(self, rt: TaskRuntime, now: float) -> None:
        if self.settings.record_params:
            self.trajectories[rt.task_id].append((rt.model.version, rt.model.params.copy()))
        if rt.model.version % rt.config.eval_every == 0:
            self._evaluate(rt, now)
        kind, value = self.stop.kind, self.stop.value
        if kind == "target-loss":
            if all(self._last_loss.get(c.task_id, math.inf) <= value for c in self.configs):
                self._stop_reason = "target-loss"
        elif kind == "versions":
            if all(self.runtimes[c.task_id].model.version >= value for c in self.configs):
                self._stop_reason = "versions"
        elif kind == "updates":
            if sum(r.aggregated_updates for r in self._all_runtimes) >= value:
                self._stop_reason = "updates"

    # check-ins

    def _maybe_check_in(self) -> None:
        if self._check_in_scheduled:
            return
        now = self.queue.now
        if not self.coordinator.any_demand(now):
            return
        wait = self._arrivals.exponential(1.0 / self.settings.check_in_rate)
        start = now
        if not self.coordinator.accepting(now):
            # arrivals are memoryless: skip straight past the pause
            start = max(now, self.coordinator.recovering_until)
        self.queue.schedule(start + wait, EventKind.CHECK_IN)
        self._check_in_scheduled = True

    def _on_check_in(self, ev: Event) -> None:
        self._check_in_scheduled = False
        now = ev.timestamp
        self.counters["check_ins"] += 1
        cid = int(self._picks.integers(len(self.population)))
        prior = self._busy.get(cid)
        if prior is not None and prior.active:
            self.counters["busy_rejections"] += 1
            self._note_failed_check_in(now)
        else:
            task_id = self.coordinator.assign_client((), now)
            if task_id is None:
                self.counters["no_task"] += 1
            elif self._route_and_admit(task_id, cid, now):
                self._failed_check_ins = 0
            else:
                self._note_failed_check_in(now)
        self._maybe_check_in()

    def _note_failed_check_in(self, now: float) -> None:
        self._failed_check_ins += 1
        if self._failed_check_ins == self.settings.stall_after and not self._stalled:
            self._stalled = True
            for cfg in self.configs:
                self.log.emit(now, f"task/{cfg.task_id}", "round_stall", cfg.task_id,
                              self.runtimes[cfg.task_id].model.version, failed=self._failed_check_ins)

    def _route_and_admit(self, task_id: str, cid: int, now: float) -> bool:
        n = len(self.selectors)
        first = int(self._routes.integers(n)) if n > 1 else 0
        for k in range(n):
            sel = self.selectors[(first + k) % n]
            a = sel.route(task_id)
            agg = self.aggregators[a.aggregator_id] if a is not None else None
            rt = agg.tasks.get(task_id) if agg is not None and agg.alive else None
            if rt is None or not rt.alive:
                self.counters["route_retries"] += 1
                continue
            self.coordinator.confirm(task_id)
            sid = self._next_session
            self._next_session += 1
            session = rt.admit(sid, cid, int(self.population.num_examples[cid]), now)
            if session is None:
                return False
            self._busy[cid] = session
            self._start(session, rt, now)
            return True
        self.counters["unroutable"] += 1
        return False

    # client side of a session

    def _start(self, session: ClientSession, rt: TaskRuntime, now: float) -> None:
        profile = self.population.profile(session.client_id)
        down, train, up = client_execution_model(profile, rt.config.model_size_bytes)
        ctx = _Ctx(session, rt, train, up, now + rt.config.client_timeout)
        rt.advance(session, SessionState.DOWNLOADING, now)
        self._after(ctx, now + down, EventKind.DOWNLOAD_DONE)

    def _after(self, ctx: _Ctx, t: float, kind: EventKind) -> None:
        if t > ctx.deadline:
            self.queue.schedule(ctx.deadline, EventKind.CLIENT_DROP, (ctx, "timeout"))
        else:
            self.queue.schedule(t, kind, ctx)

    def _on_download_done(self, ev: Event) -> None:
        ctx = ev.payload
        s = ctx.session
        if s.state.terminal:
            return
        now = ev.timestamp
        ctx.runtime.advance(s, SessionState.TRAINING, now)
        rng = np.random.default_rng([self.seed & 0xFFFFFFFF, 0xD209, s.session_id])
        u, at = rng.random(2)
        if u < self.population.dropout_prob[s.client_id]:
            drop_t = now + at * ctx.train_s
            if drop_t > ctx.deadline:
                self.queue.schedule(ctx.deadline, EventKind.CLIENT_DROP, (ctx, "timeout"))
            else:
                self.queue.schedule(drop_t, EventKind.CLIENT_DROP, (ctx, "dropout"))
        else:
            self._after(ctx, now + ctx.train_s, EventKind.TRAIN_DONE)

    def _reachable(self, ctx: _Ctx, now: float) -> bool:
        if ctx.runtime.alive:
            return True
        ctx.runtime.end(ctx.session, SessionState.DEAD, now, "aggregator-unreachable")
        return False

    def _on_train_done(self, ev: Event) -> None:
        ctx = ev.payload
        if ctx.session.state.terminal or not self._reachable(ctx, ev.timestamp):
            return
        ctx.reply = ctx.runtime.report(ctx.session, ev.timestamp)
        if ctx.reply is None:
            return
        self._after(ctx, ev.timestamp + self.population.spec.report_latency, EventKind.REPORT_DONE)

    def _on_report_done(self, ev: Event) -> None:
        ctx = ev.payload
        s = ctx.session
        now = ev.timestamp
        if s.state.terminal or not self._reachable(ctx, now):
            return
        rt = ctx.runtime
        rt.advance(s, SessionState.UPLOADING, now)
        ctx.update = self._train(ctx)
        self._after(ctx, now + ctx.transfer_s, EventKind.UPLOAD_DONE)

    def _train(self, ctx: _Ctx):
        s, rt = ctx.session, ctx.runtime
        task = self.problems[rt.task_id]
        data = self.population.dataset(task, s.client_id)
        update = mc.local_train(s.params, task, data, rt.config.client_lr, rt.config.batch_size,
                                client_id=s.client_id, initial_version=s.initial_version, seed=self.seed)
        if not rt.config.secagg_enabled:
            return update
        group = rt.group
        bound = rt.config.secagg_bound
        scaled = np.clip(ctx.reply.weight * update.delta, -bound, bound)
        return client_submit(
            fixed_point.encode(scaled, group), ctx.reply.offer, ctx.reply.verify_key, group,
            num_examples=s.num_examples, initial_version=s.initial_version,
            sequence_number=ctx.reply.sequence_number, rng_seed=("client", self.seed, s.session_id),
        )

    def _on_upload_done(self, ev: Event) -> None:
        ctx = ev.payload
        if ctx.session.state.terminal or not self._reachable(ctx, ev.timestamp):
            return
        ctx.runtime.upload(ctx.session, ctx.update, ev.timestamp)
        ctx.update = None

    def _on_drop(self, ev: Event) -> None:
        ctx, reason = ev.payload
        if ctx.session.state.terminal:
            return
        ctx.runtime.end(ctx.session, SessionState.DEAD, ev.timestamp, reason)

    # infrastructure

    def _on_heartbeat(self, ev: Event) -> None:
        now = ev.timestamp
        for agg in self.aggregators:
            self.coordinator.heartbeat(agg.aggregator_id, agg.heartbeat())
        self._apply_moves(self.coordinator.tick(now), now)
        n = len(self.selectors)
        self.selectors[self._tick % n].refresh()
        self._tick += 1
        self.queue.schedule(now + self.settings.heartbeat_interval, EventKind.HEARTBEAT)
        self._maybe_check_in()

    def _apply_moves(self, moves, now: float) -> None:
        for task_id, _old, assignment in moves:
            old_rt = self.runtimes[task_id]
            old_rt.drop_all(now, "aggregator-lost")
            rt = self._start_runtime(old_rt.config, assignment.aggregator_id, now, old_rt.incarnation + 1)
            self._report_load(rt)

    def _on_aggregator_fail(self, ev: Event) -> None:
        i = int(ev.payload.target.split("/", 1)[1])
        agg = self.aggregators[i]
        if agg.alive:
            agg.fail()
            self.log.emit(ev.timestamp, agg.name, "failed")

    def _on_coordinator_fail(self, ev: Event) -> None:
        now = ev.timestamp
        self.coordinator.fail(now)
        reports = {}
        live = []
        for agg in self.aggregators:
            if not agg.alive:
                continue
            live.append(agg.aggregator_id)
            for task_id, rt in agg.tasks.items():
                if rt.alive and self.runtimes.get(task_id) is rt:
                    reports[task_id] = (agg.aggregator_id, rt.active, rt.completed)
        moves = self.coordinator.restart(now, reports, live)
        self._apply_moves(moves, now)
        self.queue.schedule(self.coordinator.recovering_until, EventKind.COORDINATOR_RECOVERED)

    def _on_coordinator_recovered(self, ev: Event) -> None:
        self.log.emit(ev.timestamp, "coordinator", "recovered")


def run_simulation(tasks, population, problems, stop, **kwargs) -> SimulationResult:
    return Simulation(tasks, population, problems, stop, **kwargs).run()
