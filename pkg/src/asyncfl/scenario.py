"""Scenario files: population, synthetic model, tasks, seeds, stop rule, failures.

Scenarios are TOML. Unknown keys are errors, reported with their dotted path,
so a typo cannot silently fall back to a default. See ``docs/scenario.md`` for
the full format.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .model import SyntheticTask
from .orchestrator.config import ConfigError, TaskConfig
from .secagg.fixed_point import FixedPointOverflow, GroupConfig
from .sim.population import PopulationSpec
from .sim.runner import Failure, SimSettings, StopRule

_TOP_KEYS = {"name", "seed", "seeds", "stop", "target_loss", "output", "population", "model", "simulation",
             "task", "failure"}


class ScenarioError(ValueError):
    pass


def _build(cls, table: dict, where: str, **extra):
    if not isinstance(table, dict):
        raise ScenarioError(f"{where}: expected a table")
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    for key in table:
        if key not in names:
            raise ScenarioError(f"{where}.{key}: unknown key")
    try:
        return cls(**table, **extra)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "linear-regression"
    input_dim: int = 1000
    noise_scale: float = 0.1
    shift_scale: float = 0.5
    client_noise: float = 0.2
    seed: int = 0
    bank_size: int = 4096

    def build(self) -> SyntheticTask:
        return SyntheticTask(self.kind, self.input_dim, self.noise_scale, self.shift_scale, self.client_noise,
                             self.seed, self.bank_size)


@dataclass(frozen=True)
class Scenario:
    name: str
    population: PopulationSpec
    model: ModelSpec
    tasks: tuple
    stop: StopRule
    seed: int = 0
    seeds: tuple = (0,)
    target_loss: float | None = None
    settings: SimSettings = SimSettings()
    failures: tuple = ()
    output: str | None = None
    source: str | None = field(default=None, compare=False)

    @property
    def report_target(self) -> float | None:
        if self.target_loss is not None:
            return self.target_loss
        return self.stop.value if self.stop.kind == "target-loss" else None

    def validate(self) -> "Scenario":
        for cfg in self.tasks:
            try:
                cfg.with_group(self.model.input_dim).validate(self.population.population_size)
            except (ConfigError, FixedPointOverflow) as exc:
                raise ScenarioError(f"task.{cfg.task_id}: {exc}") from exc
        for f in self.failures:
            if f.target != "coordinator":
                idx = f.target.removeprefix("aggregator/")
                if not idx.isdigit() or int(idx) >= self.settings.num_aggregators:
                    raise ScenarioError(f"failure.target: no such component {f.target!r}")
        return self

    def with_tasks(self, tasks) -> "Scenario":
        return dataclasses.replace(self, tasks=tuple(tasks))

    def override(self, *, seed=None, stop=None, output=None) -> "Scenario":
        out = self
        if seed is not None:
            out = dataclasses.replace(out, seed=int(seed), seeds=(int(seed),))
        if stop is not None:
            out = dataclasses.replace(out, stop=StopRule.parse(stop) if isinstance(stop, str) else stop)
        if output is not None:
            out = dataclasses.replace(out, output=str(output))
        return out

    @classmethod
    def from_dict(cls, data: dict, source: str | None = None) -> "Scenario":
        for key in data:
            if key not in _TOP_KEYS:
                raise ScenarioError(f"{key}: unknown key")
        name = data.get("name") or (Path(source).stem if source else "scenario")
        if "stop" not in data:
            raise ScenarioError("stop: missing (e.g. stop = \"target-loss=5.0\")")
        try:
            stop = StopRule.parse(str(data["stop"]))
        except ValueError as exc:
            raise ScenarioError(f"stop: {exc}") from exc
        population = _build(PopulationSpec, data.get("population", {}), "population")
        model = _build(ModelSpec, data.get("model", {}), "model")
        settings = _build(SimSettings, data.get("simulation", {}), "simulation")
        raw_tasks = data.get("task")
        if not raw_tasks:
            raise ScenarioError("task: at least one [[task]] table is required")
        if isinstance(raw_tasks, dict):
            raw_tasks = [raw_tasks]
        tasks = []
        for i, t in enumerate(raw_tasks):
            t = dict(t)
            where = f"task[{i}]"
            group = t.pop("secagg_group", None)
            if group is not None:
                g = dict(group)
                g.setdefault("vector_length", model.input_dim)
                t["secagg_group"] = _build(GroupConfig, g, f"{where}.secagg_group")
            if "requirements" in t:
                t["requirements"] = frozenset(t["requirements"])
            tasks.append(_build(TaskConfig, t, where))
        failures = tuple(_build(Failure, f, f"failure[{i}]") for i, f in enumerate(data.get("failure", [])))
        seed = data.get("seed", 0)
        seeds = tuple(data.get("seeds", [seed]))
        target = data.get("target_loss")
        if target is not None and not (isinstance(target, (int, float)) and math.isfinite(target)):
            raise ScenarioError("target_loss: must be a number")
        if not isinstance(seed, int) or not all(isinstance(s, int) for s in seeds):
            raise ScenarioError("seed: seeds must be integers")
        return cls(name, population, model, tuple(tasks), stop, seed, seeds, target, settings, failures,
                   data.get("output"), source).validate()

    @classmethod
    def load(cls, path) -> "Scenario":
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioError(f"{path}: {exc}") from exc
        return cls.from_dict(data, str(path))


def bundled_names() -> list[str]:
    root = resources.files("asyncfl") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def bundled(name: str) -> Scenario:
    root = resources.files("asyncfl") / "scenarios"
    target = root / f"{name}.toml"
    if not target.is_file():
        raise ScenarioError(f"no bundled scenario {name!r}; available: {', '.join(bundled_names())}")
    data = tomllib.loads(target.read_text(encoding="utf-8"))
    return Scenario.from_dict(data, f"{name}.toml")


def resolve(ref: str) -> Scenario:
    """A scenario file path, or the name of a bundled scenario."""
    p = Path(ref)
    if p.suffix == ".toml" or p.exists():
        return Scenario.load(p)
    return bundled(ref)
