from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

from ..secagg.fixed_point import GroupConfig, check_overflow


class ConfigError(ValueError):
    pass


class Mode(str, enum.Enum):
    SYNC = "sync"
    ASYNC = "async"


@dataclass(frozen=True)
class TaskConfig:
    """Per-task training configuration.

    In sync mode the aggregation goal is the concurrency and
    ``concurrency * (1 + over_selection)`` clients are selected per round.
    In async mode the goal is independent of concurrency (10-30% of it works
    well); ``barrier`` holds back replacements until the buffer finalizes,
    which turns async into sync without over-selection.
    """

    task_id: str
    mode: Mode = Mode.ASYNC
    concurrency: int = 128
    aggregation_goal: int | None = None
    over_selection: float = 0.0
    max_staleness: int = 1000
    client_timeout: float = 240.0
    barrier: bool = False
    secagg_enabled: bool = False
    secagg_group: GroupConfig | None = None
    secagg_bound: float = 10_000.0
    client_lr: float = 0.05
    batch_size: int = 32
    server_lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    eval_every: int = 10
    model_size_bytes: int | None = None
    shards: int = 4
    requirements: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "requirements", frozenset(self.requirements))
        if self.aggregation_goal is None:
            goal = self.concurrency if self.mode is Mode.SYNC else max(1, self.concurrency // 8)
            object.__setattr__(self, "aggregation_goal", goal)

    @property
    def round_size(self) -> int:
        """Clients selected per sync round, ``C * (1 + o)``."""
        return math.floor(self.concurrency * (1.0 + self.over_selection) + 1e-9)

    @property
    def max_active(self) -> int:
        return self.round_size if self.mode is Mode.SYNC else self.concurrency

    def with_group(self, vector_length: int) -> "TaskConfig":
        if not self.secagg_enabled:
            return self
        group = self.secagg_group or GroupConfig(vector_length=vector_length, scaling_factor=2.0**10,
                                                 threshold=self.aggregation_goal)
        if group.vector_length != vector_length:
            group = replace(group, vector_length=vector_length)
        return replace(self, secagg_group=group)

    def validate(self, population_size: int | None = None) -> "TaskConfig":
        if self.concurrency < 1:
            raise ConfigError(f"{self.task_id}: concurrency must be positive")
        if self.aggregation_goal < 1:
            raise ConfigError(f"{self.task_id}: aggregation_goal must be positive")
        if self.max_staleness < 1:
            raise ConfigError(f"{self.task_id}: max_staleness must be positive")
        if self.client_timeout <= 0:
            raise ConfigError(f"{self.task_id}: client_timeout must be positive")
        if self.over_selection < 0:
            raise ConfigError(f"{self.task_id}: over_selection must be non-negative")
        if self.shards < 1 or self.eval_every < 1 or self.batch_size < 1:
            raise ConfigError(f"{self.task_id}: shards, eval_every and batch_size must be positive")
        if self.mode is Mode.SYNC:
            if self.aggregation_goal != self.concurrency:
                raise ConfigError(f"{self.task_id}: sync rounds aggregate exactly C updates (K = C)")
            if self.barrier:
                raise ConfigError(f"{self.task_id}: barrier applies to async tasks only")
        else:
            if self.over_selection:
                raise ConfigError(f"{self.task_id}: over_selection applies to sync tasks only")
            if self.aggregation_goal > self.concurrency:
                raise ConfigError(f"{self.task_id}: async aggregation_goal cannot exceed concurrency")
        if population_size is not None and population_size < self.max_active:
            raise ConfigError(
                f"{self.task_id}: population of {population_size} cannot fill "
                f"{self.max_active} concurrent sessions"
            )
        if self.secagg_enabled and self.secagg_group is not None:
            if self.secagg_group.threshold > self.aggregation_goal:
                raise ConfigError(f"{self.task_id}: secagg threshold exceeds the aggregation goal")
            check_overflow(self.secagg_group, self.secagg_bound, self.aggregation_goal)
        return self
