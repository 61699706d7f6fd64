"""Running scenarios: single runs, paired comparisons and parameter sweeps."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import metrics
from .model import SyntheticTask
from .orchestrator.config import Mode
from .scenario import ModelSpec, Scenario, ScenarioError
from .sim.population import Population, PopulationSpec
from .sim.runner import SimulationResult, Simulation


@lru_cache(maxsize=4)
def population_for(spec: PopulationSpec) -> Population:
    return Population(spec)


@lru_cache(maxsize=4)
def problem_for(spec: ModelSpec) -> SyntheticTask:
    return spec.build()


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False)


def document_hash(doc) -> str:
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()


def simulate(scenario: Scenario, seed: int | None = None) -> SimulationResult:
    seed = scenario.seed if seed is None else seed
    sim = Simulation(list(scenario.tasks), population_for(scenario.population), problem_for(scenario.model),
                     scenario.stop, seed=seed, failures=scenario.failures, settings=scenario.settings)
    return sim.run()


def summarize(scenario: Scenario, result: SimulationResult, percentiles: bool = True) -> dict:
    """The machine-readable summary document of one run."""
    population = population_for(scenario.population)
    problem = problem_for(scenario.model)
    size = scenario.model.input_dim
    tasks = {}
    for cfg in scenario.tasks:
        s = metrics.task_summary(result.log, cfg.task_id, cfg, scenario.report_target, population.num_examples)
        if percentiles:
            s["percentile_loss"] = metrics.percentile_eval(result.models[cfg.task_id].params, problem, population,
                                                           seed=result.seed)
        tasks[cfg.task_id] = _clean(s)
    return {
        "schema": metrics.SUMMARY_SCHEMA,
        "scenario": scenario.name,
        "seed": result.seed,
        "stop_rule": str(scenario.stop),
        "stop_reason": result.stop_reason,
        "end_time": result.end_time,
        "events": result.events,
        "log_records": len(result.log),
        "log_sha256": result.log.digest(),
        "population": {
            "size": len(population),
            "spread_p99_p1": population.spread(4 * size),
            "digest": population.digest(),
        },
        "tasks": tasks,
    }


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_artifacts(scenario: Scenario, result: SimulationResult, summary: dict, outdir) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    result.log.save(outdir / "events.jsonl")
    (outdir / "summary.json").write_text(canonical_json(summary) + "\n", encoding="utf-8")
    metrics.write_series_csvs(result.log, outdir, [c.task_id for c in scenario.tasks])
    return outdir


def run(scenario: Scenario, seed: int | None = None, outdir=None):
    result = simulate(scenario, seed)
    summary = summarize(scenario, result)
    if outdir is not None:
        write_artifacts(scenario, result, summary, outdir)
    return result, summary


def _single_task(summary: dict) -> dict:
    tasks = summary["tasks"]
    if len(tasks) != 1:
        raise ScenarioError("comparisons need single-task scenarios")
    return next(iter(tasks.values()))


def _ratio(b, a):
    if a is None or b is None:
        return None
    if a == b:
        return 1.0
    return b / a if a else None


def compare(a: Scenario, b: Scenario, seeds=(0,), threads: int = 1) -> dict:
    """Run ``a`` and ``b`` on the same population with shared seeds.

    Ratios are ``b / a``: with ``a`` async and ``b`` sync, the time ratio is
    the async speedup.
    """
    if a.population != b.population:
        raise ScenarioError("compared scenarios must share the population spec")
    jobs = [(sc, s) for s in seeds for sc in (a, b)]
    summaries = _map(_run_summary, jobs, threads)
    per_seed = []
    for i, seed in enumerate(seeds):
        sa, sb = _single_task(summaries[2 * i]), _single_task(summaries[2 * i + 1])
        per_seed.append({
            "seed": seed,
            "a": sa,
            "b": sb,
            "time_ratio": _ratio(sb.get("time_to_target_loss"), sa.get("time_to_target_loss")),
            "trip_ratio": _ratio(sb.get("trips_to_target"), sa.get("trips_to_target")),
            "update_rate_ratio": _ratio(sa.get("updates_per_hour"), sb.get("updates_per_hour")),
        })
    report = {"schema": "asyncfl.compare/1", "a": a.name, "b": b.name, "seeds": list(seeds), "runs": per_seed}
    for key in ("time_ratio", "trip_ratio", "update_rate_ratio"):
        vals = [r[key] for r in per_seed]
        report[f"mean_{key}"] = None if any(v is None for v in vals) else float(np.mean(vals))
    for side in ("a", "b"):
        for key in ("time_to_target_loss", "trips_to_target", "updates_per_hour"):
            vals = [r[side].get(key) for r in per_seed]
            report[f"mean_{side}_{key}"] = None if any(v is None for v in vals) else float(np.mean(vals))
        ks = [r[side].get("ks_vs_population", {}).get("d") for r in per_seed]
        report[f"mean_{side}_ks_d"] = None if any(v is None for v in ks) else float(np.mean(ks))
        pct = [r[side].get("percentile_loss") for r in per_seed]
        if all(pct):
            report[f"mean_{side}_percentile_loss"] = {k: float(np.mean([p[k] for p in pct])) for k in pct[0]}
    return _clean(report)


SWEEP_AXES = ("concurrency", "aggregation_goal")


def sweep_points(scenario: Scenario, axis: str, values) -> list[Scenario]:
    """One scenario per axis value; every point is validated before any runs."""
    if axis not in SWEEP_AXES:
        raise ScenarioError(f"axis must be one of {', '.join(SWEEP_AXES)}")
    points = []
    for v in values:
        v = int(v)
        tasks = []
        for cfg in scenario.tasks:
            if axis == "concurrency":
                goal = v if cfg.mode is Mode.SYNC else cfg.aggregation_goal
                tasks.append(dataclasses.replace(cfg, concurrency=v, aggregation_goal=goal))
            else:
                if cfg.mode is Mode.SYNC:
                    raise ScenarioError(f"task.{cfg.task_id}: sync tasks aggregate exactly C updates")
                tasks.append(dataclasses.replace(cfg, aggregation_goal=v))
        points.append(dataclasses.replace(scenario, name=f"{scenario.name}[{axis}={v}]", tasks=tuple(tasks)).validate())
    return points


def sweep(scenario: Scenario, axis: str, values, seeds=(0,), threads: int = 1) -> dict:
    points = sweep_points(scenario, axis, values)
    jobs = [(p, s) for p in points for s in seeds]
    summaries = _map(_run_summary, jobs, threads)
    rows = []
    for i, v in enumerate(values):
        runs = [_single_task(summaries[i * len(seeds) + j]) for j in range(len(seeds))]
        row = {axis: int(v)}
        for key in ("updates_per_hour", "time_to_target_loss", "trips_to_target", "communication_trips",
                    "mean_utilization", "final_loss"):
            vals = [r.get(key) for r in runs]
            row[key] = None if any(x is None for x in vals) else float(np.mean(vals))
        rows.append(row)
    return _clean({"schema": "asyncfl.sweep/1", "scenario": scenario.name, "axis": axis, "seeds": list(seeds),
                   "rows": rows})


def _run_summary(job) -> dict:
    scenario, seed = job
    result = simulate(scenario, seed)
    return summarize(scenario, result)


def _map(fn, jobs, threads: int):
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))
