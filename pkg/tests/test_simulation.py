import numpy as np
import pytest

from asyncfl import metrics
from asyncfl.model import SyntheticTask
from asyncfl.orchestrator.config import TaskConfig
from asyncfl.orchestrator.eventlog import EventLog
from asyncfl.sim.population import Population, PopulationSpec
from asyncfl.sim.runner import Failure, SimSettings, Simulation, SimulationTimeout, StopRule


@pytest.fixture(scope="module")
def world():
    return Population(PopulationSpec(population_size=20_000)), SyntheticTask(input_dim=50, bank_size=512)


def _run(world, cfg, stop="versions=15", seed=0, **kw):
    pop, task = world
    return Simulation([cfg], pop, task, StopRule.parse(stop), seed=seed, **kw).run()


def test_stop_rule_parsing():
    assert StopRule.parse("target-loss=2.5") == StopRule("target-loss", 2.5)
    assert str(StopRule.parse("updates=100")) == "updates=100"
    with pytest.raises(ValueError):
        StopRule.parse("loss=1")
    with pytest.raises(ValueError):
        StopRule.parse("versions")


def test_same_seed_same_log(world):
    cfg = TaskConfig("t", concurrency=16, aggregation_goal=4, server_lr=0.05)
    a, b = _run(world, cfg), _run(world, cfg)
    assert a.log.digest() == b.log.digest()
    c = _run(world, cfg, seed=1)
    assert c.log.digest() != a.log.digest()


def test_async_keeps_concurrency_busy(world):
    cfg = TaskConfig("t", concurrency=32, aggregation_goal=4)
    r = _run(world, cfg, stop="versions=60")
    util = metrics.utilization_series(r.log, "t")["t"]
    assert util.value.max() <= 32
    first = metrics.model_update_times(r.log, "t")[0]
    assert metrics.time_average(util, first, r.end_time) > 0.95 * 32


def test_versions_strictly_increase_and_counts_match_goal(world):
    cfg = TaskConfig("t", concurrency=16, aggregation_goal=5)
    r = _run(world, cfg)
    updates = r.log.select("model_updated", task="t")
    assert [u.version for u in updates] == list(range(1, 16))
    assert all(u.get("count") == 5 for u in updates)
    assert len(r.log.select("update_accepted", task="t")) >= 75


def test_sync_selects_over_and_aggregates_exactly_c(world):
    cfg = TaskConfig("t", mode="sync", concurrency=10, over_selection=0.3)
    r = _run(world, cfg, stop="versions=5")
    assert all(u.get("count") == 10 for u in r.log.select("model_updated", task="t"))
    first_round = [x for x in r.log.select("selected", task="t") if x.version == 0]
    assert len(first_round) >= 13
    troughs = metrics.round_troughs(metrics.utilization_series(r.log, "t")["t"],
                                    metrics.model_update_times(r.log, "t"))
    assert troughs.max() <= 0.6 * 10


def test_staleness_is_bounded_in_log(world):
    cfg = TaskConfig("t", concurrency=32, aggregation_goal=2, max_staleness=4)
    r = _run(world, cfg, stop="versions=40")
    assert max(x.get("staleness") for x in r.log.select("update_accepted")) <= 4


def test_target_loss_stop(world):
    cfg = TaskConfig("t", concurrency=32, aggregation_goal=4, server_lr=0.05, eval_every=1)
    first = _run(world, cfg, stop="versions=1")
    start = metrics.eval_stream(first.log, "t")[0][2]
    r = _run(world, cfg, stop=f"target-loss={start / 4}")
    assert r.stop_reason == "target-loss"
    assert metrics.eval_stream(r.log, "t")[-1][2] <= start / 4


def test_event_budget_timeout(world):
    cfg = TaskConfig("t", concurrency=8, aggregation_goal=2)
    with pytest.raises(SimulationTimeout) as exc:
        _run(world, cfg, stop="versions=1000", settings=SimSettings(event_budget=500))
    assert len(exc.value.log) > 0


def test_metrics_replay_from_saved_log(world, tmp_path):
    cfg = TaskConfig("t", concurrency=16, aggregation_goal=4, eval_every=1)
    r = _run(world, cfg)
    r.log.save(tmp_path / "events.jsonl")
    back = EventLog.load(tmp_path / "events.jsonl")
    pop = world[0].num_examples
    assert metrics.task_summary(back, "t", cfg, 1.0, pop) == metrics.task_summary(r.log, "t", cfg, 1.0, pop)


def test_aggregator_failure_moves_task_and_keeps_versions(world):
    cfg = TaskConfig("t", concurrency=32, aggregation_goal=4)
    r = _run(world, cfg, stop="versions=40", failures=[Failure(5.0, "aggregator/0")])
    moved = r.log.select("task_reassigned", task="t")
    assert len(moved) == 1 and moved[0].get("aggregator") == 1
    assert moved[0].t == pytest.approx(15.0)  # beats missed at 5, 10, 15
    versions = [u.version for u in r.log.select("model_updated", task="t")]
    assert versions == list(range(1, 41))
    assert r.log.select("buffer_lost", task="t")


def test_failing_the_idle_aggregator_changes_nothing_for_the_task(world):
    cfg = TaskConfig("t", concurrency=16, aggregation_goal=4)
    r = _run(world, cfg, failures=[Failure(5.0, "aggregator/1")])
    assert not r.log.select("task_reassigned")
    assert r.log.select("declared_dead")


def test_coordinator_failure_pauses_selection(world):
    cfg = TaskConfig("t", concurrency=16, aggregation_goal=4)
    r = _run(world, cfg, stop="versions=30", failures=[Failure(3.0, "coordinator")],
             settings=SimSettings(recovery_period=20.0))
    sel = [x.t for x in r.log.select("selected", task="t")]
    assert not [t for t in sel if 3.0 < t < 23.0]
    assert min(t for t in sel if t > 3.0) == pytest.approx(23.0, abs=0.01)


def test_secure_aggregation_in_the_loop(world):
    pop, _ = world
    task = SyntheticTask(input_dim=12, bank_size=128)
    plain = TaskConfig("t", concurrency=16, aggregation_goal=4, server_lr=0.05)
    secure = TaskConfig("t", concurrency=16, aggregation_goal=4, server_lr=0.05, secagg_enabled=True,
                        secagg_bound=100.0)
    runs = [Simulation([c], pop, task, StopRule("versions", 8), seed=2).run() for c in (plain, secure)]
    assert [r.stop_reason for r in runs] == ["versions", "versions"]
    assert runs[1].log.select("model_updated")
    a, b = (r.models["t"].params for r in runs)
    assert np.linalg.norm(a - b) < 0.05 * np.linalg.norm(a)


def test_min_spread_enforced():
    from asyncfl.sim.population import SpreadTooNarrow

    pop = Population(PopulationSpec(population_size=100, speed_lognormal_sigma=0, examples_lognormal_sigma=0,
                                    bandwidth_lognormal_sigma=0))
    with pytest.raises(SpreadTooNarrow):
        Simulation([TaskConfig("t", concurrency=4)], pop, SyntheticTask(input_dim=4), StopRule("versions", 1),
                   settings=SimSettings(min_spread=100.0))
