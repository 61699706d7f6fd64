"""The acceptance criteria as runnable checks.

Each ``criterion_<n>`` returns a :class:`CriterionResult`. Simulation runs are
cached by ``(scenario, seed)`` so criteria sharing runs (speedup,
communication, utilization) pay for them once, and the determinism check can
repeat every run that was made.
"""

from __future__ import annotations

import decimal
import time
from dataclasses import dataclass

import numpy as np

from . import experiments
from .model import staleness_weight, update_weight
from .orchestrator.config import TaskConfig
from .scenario import ModelSpec, Scenario
from .secagg import fixed_point
from .secagg.bench import measure_boundary
from .secagg.fixed_point import GroupConfig
from .secagg.protocol import SecureAggregationServer, client_submit
from .secagg.trusted_party import Rejected, ThresholdNotMet, TrustedParty
from .sim.population import PopulationSpec
from .sim.runner import Failure, SimSettings, Simulation, StopRule

SEEDS = (0, 1, 2)
TARGET_LOSS = 5.0
SERVER_LR = 0.02
ASYNC_GOAL = 16
OVER_SELECTION = 0.3
BIAS_BUDGET = 20_000


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] #{self.number:<2} {self.name}: {self.detail} ({self.seconds:.1f}s)"


# scenarios and the run cache

def task(mode: str, concurrency: int, goal: int | None = None, **kw) -> TaskConfig:
    if mode == "sync":
        kw.setdefault("over_selection", OVER_SELECTION)
    else:
        kw.setdefault("aggregation_goal", goal or ASYNC_GOAL)
    kw.setdefault("server_lr", SERVER_LR)
    kw.setdefault("eval_every", 1)
    return TaskConfig("lm", mode=mode, concurrency=concurrency, **kw)


def scenario(cfg: TaskConfig, stop: str, failures=(), name: str | None = None, **settings) -> Scenario:
    label = name or f"{cfg.mode.value}-C{cfg.concurrency}-K{cfg.aggregation_goal}"
    return Scenario(label, PopulationSpec(), ModelSpec(), (cfg,), StopRule.parse(stop), target_loss=TARGET_LOSS,
                    settings=SimSettings(**settings), failures=tuple(failures)).validate()


_CACHE: dict = {}


def summary(sc: Scenario, seed: int) -> dict:
    key = (sc, seed)
    if key not in _CACHE:
        result = experiments.simulate(sc, seed)
        _CACHE[key] = experiments.summarize(sc, result)
    return _CACHE[key]


def lm(sc: Scenario, seed: int) -> dict:
    return summary(sc, seed)["tasks"]["lm"]


def clear_cache() -> None:
    _CACHE.clear()


# criteria

def criterion_1() -> tuple[bool, str]:
    """SecAgg unmasked sum equals the plaintext modular sum; decoded reals within K/(2c)."""
    m, trials = 1000, 100
    worst = 0.0
    for k in (1, 5, 50):
        group = GroupConfig(vector_length=m, modulus_bits=32, scaling_factor=2.0**16, threshold=k)
        bound = 1.0
        fixed_point.check_overflow(group, bound, k)
        for trial in range(trials):
            rng = np.random.default_rng([k, trial])
            reals = rng.uniform(-bound, bound, size=(k, m))
            encoded = [fixed_point.encode(v, group) for v in reals]
            tsa = TrustedParty(group, 2 * k, rng_seed=("accept-1", k, trial))
            offers = tsa.publish_offers()
            server = SecureAggregationServer(tsa)
            for i, e in enumerate(encoded):
                server.receive(client_submit(e, offers[i], tsa.verify_key, group, rng_seed=("c1", k, trial, i)))
            unmasked = server.finish()
            # arbitrary-precision integers, no wrapping arithmetic involved
            oracle = np.array(encoded, dtype=object).sum(axis=0) % group.modulus
            if not np.array_equal(unmasked.astype(object), oracle):
                return False, f"K={k} trial {trial}: unmasked sum differs from the plaintext modular sum"
            err = np.max(np.abs(fixed_point.decode(unmasked, group) - reals.sum(axis=0)))
            worst = max(worst, err * 2 * group.scaling_factor / k)
            if err > k / (2 * group.scaling_factor):
                return False, f"K={k} trial {trial}: decode error {err:.3g} exceeds K/(2c)"
    return True, f"{3 * trials} trials bit-exact; worst decode error {worst:.3f} of the K/(2c) bound"


def criterion_2() -> tuple[bool, str]:
    """Release refuses below threshold; replayed envelopes never change the accumulator."""
    m = 64
    checks = 0
    for t in range(1, 9):
        group = GroupConfig(vector_length=m, modulus_bits=32, scaling_factor=2.0**8, threshold=t)
        tsa = TrustedParty(group, t + 2, rng_seed=("accept-2", t))
        offers = tsa.publish_offers()
        frames = []
        for i in range(t + 1):
            plain = np.full(m, i, dtype=np.uint64)
            sub = client_submit(plain, offers[i], tsa.verify_key, group, rng_seed=("c2", t, i))
            frames.append((sub.envelope_frame, sub.completing_frame))
        for count in range(t + 1):
            if count < t:
                try:
                    tsa.release()
                    return False, f"t={t}: released after only {count} clients"
                except ThresholdNotMet:
                    checks += 1
            if count == t:
                break
            tsa.process(*frames[count])
            before = tsa.mask_accumulator
            for j in range(count + 1):
                try:
                    tsa.process(*frames[j])
                    return False, f"t={t}: replayed slot {j} was accepted"
                except Rejected:
                    checks += 1
                if not np.array_equal(tsa.mask_accumulator, before):
                    return False, f"t={t}: replay of slot {j} altered the accumulator"
        released = tsa.release()
        if not np.array_equal(released, before):
            return False, f"t={t}: released mask sum differs from the accumulator"
        for frame in frames:
            try:
                tsa.process(*frame)
                return False, f"t={t}: envelope accepted after release"
            except Rejected:
                checks += 1
        try:
            tsa.release()
            return False, f"t={t}: released twice"
        except Rejected:
            checks += 1
    return True, f"{checks} refusals checked across thresholds 1..8"


def criterion_3() -> tuple[bool, str]:
    """Per-client bytes at the trusted boundary do not depend on m; aggregator bytes grow with K*m."""
    lengths = (1000, 10_000, 100_000)
    rows = {(k, m): measure_boundary(k, m) for k in (8, 16) for m in lengths}
    per_client = [rows[16, m].tsa_bytes_per_client for m in lengths]
    spread = (max(per_client) - min(per_client)) / min(per_client)
    ratios = [r.aggregator_bytes / (r.clients * r.vector_length) for r in rows.values()]
    scale_dev = (max(ratios) - min(ratios)) / min(ratios)
    ok = spread < 0.01 and scale_dev < 0.05
    return ok, (f"per-client TSA bytes {per_client[0]:.0f}..{max(per_client):.0f} (variation {spread:.2%}); "
                f"aggregator bytes/(K*m) within {scale_dev:.2%}")


def criterion_4() -> tuple[bool, str]:
    """1/sqrt(1+s) to machine precision and n*w products, checked against a decimal oracle."""
    ctx = decimal.Context(prec=50)
    worst = 0.0
    points = list(range(0, 10_001)) + [0.5, 1.5, 9999.5]
    for s in points:
        exact = ctx.divide(1, ctx.sqrt(decimal.Decimal(1 + s)))
        got = staleness_weight(s)
        rel = abs(float((decimal.Decimal(got) - exact) / exact))
        worst = max(worst, rel)
    if worst > np.finfo(float).eps:
        return False, f"relative error {worst:.3g} exceeds machine epsilon"
    rng = np.random.default_rng(4)
    for n, s in zip(rng.integers(1, 5000, 2000), rng.integers(0, 10_001, 2000)):
        if update_weight(int(n), int(s)) != int(n) * staleness_weight(int(s)):
            return False, f"update_weight({n}, {s}) is not n * w(s)"
    return True, f"max relative error {worst:.2e} over {len(points)} staleness values; 2000 n*w products exact"


def criterion_5() -> tuple[bool, str]:
    """Async with K = C and a completion barrier reproduces sync without over-selection."""
    c, versions = 8, 50
    population = experiments.population_for(PopulationSpec())
    problem = experiments.problem_for(ModelSpec())
    settings = SimSettings(record_params=True)
    stop = StopRule("versions", versions)
    sync = task("sync", c, over_selection=0.0)
    barrier = task("async", c, goal=c, barrier=True, max_staleness=10**9)
    runs = [Simulation([cfg], population, problem, stop, seed=5, settings=settings).run() for cfg in (sync, barrier)]
    a, b = (r.trajectories["lm"] for r in runs)
    if len(a) < versions or len(a) != len(b):
        return False, f"trajectory lengths {len(a)} and {len(b)}"
    for (va, pa), (vb, pb) in zip(a, b):
        if va != vb or pa.tobytes() != pb.tobytes():
            return False, f"trajectories diverge at version {va}"
    return True, f"{len(a)} versions bit-identical at C={c}"


def _paired(c: int) -> tuple[list, list]:
    a = [lm(scenario(task("async", c), f"target-loss={TARGET_LOSS}"), s) for s in SEEDS]
    b = [lm(scenario(task("sync", c), f"target-loss={TARGET_LOSS}"), s) for s in SEEDS]
    return a, b


CONCURRENCIES = (32, 128, 512)


def criterion_6() -> tuple[bool, str]:
    """Async reaches the target loss at least 2x faster at C=128; the gap widens with C."""
    speedups = []
    for c in CONCURRENCIES:
        a, b = _paired(c)
        if any(r["time_to_target_loss"] is None for r in a + b):
            return False, f"C={c}: a run did not reach the target loss"
        speedups.append(float(np.mean([y["time_to_target_loss"] / x["time_to_target_loss"] for x, y in zip(a, b)])))
    at128 = speedups[CONCURRENCIES.index(128)]
    monotone = all(x <= y for x, y in zip(speedups, speedups[1:]))
    detail = ", ".join(f"C={c}: {s:.2f}x" for c, s in zip(CONCURRENCIES, speedups))
    return at128 >= 2.0 and monotone, f"speedup {detail}"


def criterion_7() -> tuple[bool, str]:
    """Sync needs at least 2x the communication trips to target at C=512, increasing in C."""
    ratios = []
    for c in CONCURRENCIES:
        a, b = _paired(c)
        ratios.append(float(np.mean([y["trips_to_target"] / x["trips_to_target"] for x, y in zip(a, b)])))
    monotone = all(x < y for x, y in zip(ratios, ratios[1:]))
    detail = ", ".join(f"C={c}: {r:.2f}x" for c, r in zip(CONCURRENCIES, ratios))
    return ratios[-1] >= 2.0 and monotone, f"sync/async trips {detail}"


def criterion_8() -> tuple[bool, str]:
    """Async keeps ~C clients busy; sync drains to at most 0.6C within each round."""
    c = 128
    a, b = _paired(c)
    util = min(r["mean_utilization"] for r in a)
    trough = max(r["utilization_trough_max"] for r in b)
    ok = util >= 0.95 * c and trough <= 0.6 * c
    return ok, f"async mean utilization {util:.2f}/{c}; worst sync round trough {trough:.0f} (limit {0.6 * c:.0f})"


def criterion_9() -> tuple[bool, str]:
    """Async update rate grows linearly in C at fixed K; async/sync rate ratio at C=128 >= 8."""
    horizon = "time=900"
    cs = (32, 64, 128, 256)
    rates = [float(np.mean([lm(scenario(task("async", c), horizon), s)["updates_per_hour"] for s in SEEDS]))
             for c in cs]
    slope, intercept = np.polyfit(cs, rates, 1)
    fit = slope * np.asarray(cs) + intercept
    r2 = 1.0 - np.sum((np.asarray(rates) - fit) ** 2) / np.sum((np.asarray(rates) - np.mean(rates)) ** 2)
    sync = float(np.mean([lm(scenario(task("sync", 128), horizon), s)["updates_per_hour"] for s in SEEDS]))
    ratio = rates[cs.index(128)] / sync
    ok = r2 >= 0.98 and ratio >= 8.0
    return ok, f"R^2 {r2:.4f} over C={list(cs)}; async/sync rate at C=128 {ratio:.2f}x"


def criterion_10() -> tuple[bool, str]:
    """At C=128, larger K means fewer updates per hour and a later time to target."""
    goals = (16, 32, 64, 128)
    rates, times = [], []
    for k in goals:
        runs = [lm(scenario(task("async", 128, goal=k), f"target-loss={TARGET_LOSS}"), s) for s in SEEDS]
        if any(r["time_to_target_loss"] is None for r in runs):
            return False, f"K={k}: a run did not reach the target loss"
        rates.append(float(np.mean([r["updates_per_hour"] for r in runs])))
        times.append(float(np.mean([r["time_to_target_loss"] for r in runs])))
    ok = all(x > y for x, y in zip(rates, rates[1:])) and all(x < y for x, y in zip(times, times[1:]))
    detail = "; ".join(f"K={k}: {r:.0f}/h, {t:.0f}s" for k, r, t in zip(goals, rates, times))
    return ok, detail


def criterion_11() -> tuple[bool, str]:
    """Sync over-selection biases participants toward small-data clients; async does not."""
    stop = f"updates={BIAS_BUDGET}"
    a = [lm(scenario(task("async", 128, eval_every=10), stop), s) for s in SEEDS]
    b = [lm(scenario(task("sync", 128, eval_every=10), stop), s) for s in SEEDS]
    d_async = float(np.mean([r["ks_vs_population"]["d"] for r in a]))
    d_sync = float(np.mean([r["ks_vs_population"]["d"] for r in b]))
    p99_async = float(np.mean([r["percentile_loss"]["p99"] for r in a]))
    p99_sync = float(np.mean([r["percentile_loss"]["p99"] for r in b]))
    ok = d_sync > 10 * d_async and p99_sync > p99_async
    return ok, (f"KS D sync {d_sync:.4f} vs async {d_async:.4f} ({d_sync / d_async:.1f}x); "
                f"p99-client loss sync {p99_sync:.3f} vs async {p99_async:.3f}")


def finalization_at_most_once(log) -> str | None:
    """Problem description if any version or update was finalized twice, else ``None``."""
    versions = [r.version for r in log.select("model_updated", task="lm")]
    if versions != list(range(1, len(versions) + 1)):
        return "model versions are not 1, 2, 3, ... without repeats"
    accepted = [r.get("session") for r in log.select("update_accepted", task="lm")]
    if len(accepted) != len(set(accepted)):
        return "a session's update was accepted twice"
    return None


def selection_gap(log, at: float) -> float:
    selected = [r.t for r in log.select("selected", task="lm")]
    before = max(t for t in selected if t <= at)
    after = min(t for t in selected if t > at)
    return after - before


def criterion_12() -> tuple[bool, str]:
    """Losing an aggregator or the coordinator mid-run still reaches the target loss."""
    period = 30.0
    details = []
    for target in ("aggregator/0", "coordinator"):
        cfg = task("async", 128)
        sc = scenario(cfg, f"target-loss={TARGET_LOSS}", failures=(Failure(60.0, target),), name=f"fail-{target}",
                      recovery_period=period)
        result = experiments.simulate(sc, 0)
        _CACHE[(sc, 0)] = experiments.summarize(sc, result)
        if result.stop_reason != "target-loss":
            return False, f"{target} failure: stopped with {result.stop_reason}"
        problem = finalization_at_most_once(result.log)
        if problem:
            return False, f"{target} failure: {problem}"
        if target == "coordinator":
            gap = selection_gap(result.log, 60.0)
            if not period <= gap <= period + 1.0:
                return False, f"selection gap {gap:.3f}s, expected the {period:.0f}s recovery period"
            details.append(f"coordinator: gap {gap:.2f}s")
        else:
            moved = result.log.select("task_reassigned", task="lm")
            if not moved:
                return False, "task was never reassigned after the aggregator failed"
            details.append(f"aggregator: moved at t={moved[0].t:.0f}s")
        details[-1] += f", target at {result.end_time:.0f}s"
    return True, "; ".join(details)


def criterion_13() -> tuple[bool, str]:
    """Every cached acceptance run, repeated with the same seed, gives a byte-identical summary."""
    if not _CACHE:
        for c in (32, 128):
            for mode in ("async", "sync"):
                summary(scenario(task(mode, c), f"target-loss={TARGET_LOSS}"), 0)
    mismatched = []
    for (sc, seed), doc in list(_CACHE.items()):
        again = experiments.summarize(sc, experiments.simulate(sc, seed))
        if experiments.canonical_json(again) != experiments.canonical_json(doc):
            mismatched.append(f"{sc.name}/seed{seed}")
    if mismatched:
        return False, f"{len(mismatched)} runs differ: {', '.join(mismatched[:5])}"
    return True, f"{len(_CACHE)} runs repeated, all summaries byte-identical"


CRITERIA = {
    1: ("SecAgg end-to-end exactness", criterion_1),
    2: ("threshold and replay", criterion_2),
    3: ("boundary cost O(K+m)", criterion_3),
    4: ("staleness math", criterion_4),
    5: ("async barrier equals sync", criterion_5),
    6: ("speedup", criterion_6),
    7: ("communication efficiency", criterion_7),
    8: ("utilization", criterion_8),
    9: ("update-rate scaling", criterion_9),
    10: ("aggregation-goal tradeoff", criterion_10),
    11: ("sampling bias", criterion_11),
    12: ("failure recovery", criterion_12),
    13: ("determinism", criterion_13),
}


def run_criterion(number: int) -> CriterionResult:
    name, fn = CRITERIA[number]
    start = time.perf_counter()
    passed, detail = fn()
    return CriterionResult(number, name, bool(passed), detail, time.perf_counter() - start)


def run_all(only=None) -> list[CriterionResult]:
    return [run_criterion(n) for n in (only or sorted(CRITERIA))]
