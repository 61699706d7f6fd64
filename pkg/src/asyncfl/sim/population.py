"""Heterogeneous client population.

Speed (seconds per example) and example count are independent log-normal
draws; training time is their product, so clients with more data tend to be
the slow ones. Profiles are stored column-wise for speed, with
:class:`ClientProfile` as the per-client view.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from ..model import ClientDataset, SyntheticTask, label_seed


@dataclass(frozen=True)
class PopulationSpec:
    population_size: int = 100_000
    speed_lognormal_mu: float = math.log(0.1)
    speed_lognormal_sigma: float = 0.6
    examples_lognormal_mu: float = math.log(40.0)
    examples_lognormal_sigma: float = 1.1
    dropout_rate: float = 0.05
    bandwidth_lognormal_mu: float = math.log(250_000.0)  # bytes per second
    bandwidth_lognormal_sigma: float = 0.5
    report_latency: float = 0.05
    max_examples: int = 5000
    rng_seed: int = 0

    def __post_init__(self):
        if self.population_size < 1:
            raise ValueError("population_size must be at least 1")
        for name in ("speed_lognormal_sigma", "examples_lognormal_sigma", "bandwidth_lognormal_sigma"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite non-negative number")
        for name in ("speed_lognormal_mu", "examples_lognormal_mu", "bandwidth_lognormal_mu"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ValueError("dropout_rate must be in [0, 1]")
        if self.report_latency < 0 or self.max_examples < 1:
            raise ValueError("report_latency must be >= 0 and max_examples >= 1")


@dataclass(frozen=True)
class ClientProfile:
    client_id: int
    speed_factor: float
    num_examples: int
    dropout_prob: float
    bandwidth: float
    volume_score: float

    def execution_time(self, model_size_bytes: int, report_latency: float = 0.0) -> float:
        down, train, up = client_execution_model(self, model_size_bytes)
        return down + train + report_latency + up


class Population:
    def __init__(self, spec: PopulationSpec):
        self.spec = spec
        rng = np.random.default_rng([spec.rng_seed & 0xFFFFFFFF, label_seed("population")])
        n = spec.population_size
        self.speed = rng.lognormal(spec.speed_lognormal_mu, spec.speed_lognormal_sigma, n)
        raw = rng.lognormal(spec.examples_lognormal_mu, spec.examples_lognormal_sigma, n)
        self.num_examples = np.clip(np.rint(raw), 1, spec.max_examples).astype(np.int64)
        self.bandwidth = rng.lognormal(spec.bandwidth_lognormal_mu, spec.bandwidth_lognormal_sigma, n)
        self.dropout_prob = np.full(n, spec.dropout_rate)
        sigma = spec.examples_lognormal_sigma or 1.0
        self.volume_score = (np.log(self.num_examples) - spec.examples_lognormal_mu) / sigma

    def __len__(self) -> int:
        return self.speed.shape[0]

    def profile(self, client_id: int) -> ClientProfile:
        i = int(client_id)
        return ClientProfile(i, float(self.speed[i]), int(self.num_examples[i]), float(self.dropout_prob[i]),
                             float(self.bandwidth[i]), float(self.volume_score[i]))

    def profiles(self):
        return [self.profile(i) for i in range(len(self))]

    def execution_times(self, model_size_bytes: int) -> np.ndarray:
        transfer = 2.0 * model_size_bytes / self.bandwidth
        return transfer + self.speed * self.num_examples + self.spec.report_latency

    def spread(self, model_size_bytes: int) -> float:
        """p99 / p1 ratio of execution times."""
        p1, p99 = np.percentile(self.execution_times(model_size_bytes), [1, 99])
        return float(p99 / p1)

    def dataset(self, task: SyntheticTask, client_id: int, split: int = 0, limit: int | None = None) -> ClientDataset:
        n = int(self.num_examples[client_id])
        if limit is not None:
            n = min(n, limit)
        return task.client_dataset(int(client_id), n, float(self.volume_score[client_id]), split)

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.speed, self.num_examples, self.bandwidth, self.dropout_prob):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def generate_population(spec: PopulationSpec) -> list[ClientProfile]:
    return Population(spec).profiles()


class SpreadTooNarrow(ValueError):
    pass


def check_spread(population: Population, model_size_bytes: int, minimum: float = 100.0) -> float:
    """Refuse populations whose execution times do not span ``minimum``x between p1 and p99."""
    ratio = population.spread(model_size_bytes)
    if ratio < minimum:
        raise SpreadTooNarrow(f"p99/p1 execution-time ratio {ratio:.1f} is below {minimum}")
    return ratio


def client_execution_model(profile: ClientProfile, model_size_bytes: int) -> tuple[float, float, float]:
    """``(download_s, train_s, upload_s)``; the caller applies the session timeout."""
    transfer = model_size_bytes / profile.bandwidth if model_size_bytes else 0.0
    return transfer, profile.speed_factor * profile.num_examples, transfer
