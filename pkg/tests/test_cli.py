import dataclasses
import json

import pytest

from asyncfl import experiments
from asyncfl.cli import main
from asyncfl.scenario import Scenario, ScenarioError, bundled, bundled_names, resolve
from asyncfl.sim.population import PopulationSpec

SMALL = """
name = "tiny"
seed = 3
stop = "versions=6"
target_loss = 1e9

[population]
population_size = 5000

[model]
input_dim = 20
bank_size = 256

[simulation]
eval_clients = 20

[[task]]
task_id = "lm"
mode = "{mode}"
concurrency = 16
{extra}
eval_every = 1
"""


def _write(tmp_path, name="tiny.toml", mode="async", extra="aggregation_goal = 4"):
    p = tmp_path / name
    p.write_text(SMALL.format(mode=mode, extra=extra))
    return p


def test_every_bundled_scenario_validates():
    names = bundled_names()
    assert {"async_basic", "sync_basic", "speedup_async", "speedup_sync"} <= set(names)
    for name in names:
        sc = bundled(name)
        assert sc.tasks and sc.stop


def test_unknown_key_is_named(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text(SMALL.format(mode="async", extra="aggregation_gaol = 4"))
    with pytest.raises(ScenarioError, match=r"task\[0\]\.aggregation_gaol"):
        Scenario.load(p)


def test_invalid_config_rejected(tmp_path):
    p = _write(tmp_path, mode="sync", extra="over_selection = 0.3\naggregation_goal = 3")
    with pytest.raises(ScenarioError):
        resolve(str(p))


def test_run_writes_artifacts_and_is_deterministic(tmp_path, capsys):
    p = _write(tmp_path)
    hashes = []
    for out in ("a", "b"):
        assert main(["run", str(p), "--seed", "7", "--out", str(tmp_path / out)]) == 0
        hashes.append(json.loads(capsys.readouterr().out)["sha256"])
    assert hashes[0] == hashes[1]
    a = (tmp_path / "a" / "summary.json").read_bytes()
    assert a == (tmp_path / "b" / "summary.json").read_bytes()
    doc = json.loads(a)
    assert doc["schema"] == "asyncfl.summary/1" and doc["seed"] == 7
    assert "time_to_target_loss" in doc["tasks"]["lm"]
    for name in ("events.jsonl", "eval_lm.csv", "utilization_lm.csv", "updates_per_hour_lm.csv"):
        assert (tmp_path / "a" / name).exists()


def test_malformed_scenario_exits_nonzero(tmp_path, capsys):
    p = tmp_path / "broken.toml"
    p.write_text("stop = 'versions=3'\n[[task]]\ntask_id = 'x'\nbogus = 1\n")
    assert main(["run", str(p)]) == 2
    assert "bogus" in capsys.readouterr().err
    p.write_text("this is = = not toml")
    assert main(["run", str(p)]) == 2


def test_event_budget_timeout_exits_nonzero(tmp_path, capsys):
    p = tmp_path / "slow.toml"
    p.write_text(SMALL.format(mode="async", extra="aggregation_goal = 4").replace(
        "eval_clients = 20", "eval_clients = 20\nevent_budget = 100"))
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 3
    assert "not met" in capsys.readouterr().err


def test_compare_same_scenario_gives_unit_ratios(tmp_path):
    sc = resolve(str(_write(tmp_path)))
    report = experiments.compare(sc, sc, seeds=(0, 1))
    assert report["mean_time_ratio"] == 1.0
    assert report["mean_trip_ratio"] == 1.0
    assert report["mean_update_rate_ratio"] == 1.0
    assert len(report["runs"]) == 2


def test_compare_rejects_population_mismatch(tmp_path):
    a = resolve(str(_write(tmp_path)))
    b = dataclasses.replace(a, population=PopulationSpec(population_size=6000))
    with pytest.raises(ScenarioError):
        experiments.compare(a, b)


def test_singleton_sweep_equals_run(tmp_path):
    sc = resolve(str(_write(tmp_path)))
    table = experiments.sweep(sc, "aggregation_goal", [4], seeds=(3,))
    _, summary = experiments.run(sc, 3)
    row = table["rows"][0]
    assert row["aggregation_goal"] == 4
    assert row["updates_per_hour"] == summary["tasks"]["lm"]["updates_per_hour"]


def test_sweep_validates_all_points_first(tmp_path):
    sc = resolve(str(_write(tmp_path)))
    with pytest.raises(ScenarioError):
        experiments.sweep(sc, "aggregation_goal", [4, 64])
    with pytest.raises(ScenarioError):
        experiments.sweep(sc, "learning_rate", [1])


def test_sweep_cli(tmp_path, capsys):
    p = _write(tmp_path)
    assert main(["sweep", str(p), "--axis", "concurrency", "--values", "8,16", "--seed", "0"]) == 0
    rows = json.loads(capsys.readouterr().out)["rows"]
    assert [r["concurrency"] for r in rows] == [8, 16]
    assert rows[1]["updates_per_hour"] > rows[0]["updates_per_hour"]


def test_secagg_bench_cli(tmp_path, capsys):
    assert main(["secagg-bench", "--clients", "1,2", "--lengths", "100,200", "--out", str(tmp_path)]) == 0
    rows = json.loads(capsys.readouterr().out)["rows"]
    assert len(rows) == 4
    per_client = {r["clients"]: set() for r in rows}
    for r in rows:
        per_client[r["clients"]].add(r["tsa_bytes_per_client"])
    assert all(len(v) == 1 for v in per_client.values())
    assert (tmp_path / "secagg_bench.json").exists()


def test_list_cli(capsys):
    assert main(["list"]) == 0
    assert "async_basic" in capsys.readouterr().out


def test_bundled_async_basic_reports_time_to_target(tmp_path, capsys):
    assert main(["run", "async_basic", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert doc["tasks"]["lm"]["time_to_target_loss"] is not None
