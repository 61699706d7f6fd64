"""Parameter vectors, local client training and the server optimizer.

Everything here is a pure function over immutable values. Accumulating updates
into a buffer is the orchestrator's job; this module only supplies the weights
and the arithmetic.
"""

from __future__ import annotations

import enum
import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np


class ModelError(ValueError):
    """Raised on malformed model-core inputs (length mismatch, bad counts)."""


def staleness_weight(staleness: int) -> float:
    """Down-weighting factor ``1 / sqrt(1 + s)`` for an update of staleness ``s``."""
    if staleness < 0:
        raise ModelError(f"staleness must be non-negative, got {staleness}")
    return 1.0 / math.sqrt(1.0 + staleness)


def compute_staleness(initial_version: int, current_version: int) -> int:
    """Number of server versions produced while a client was training.

    A current version below the initial one can only come from a corrupted
    version counter, so it raises rather than clamping.
    """
    if initial_version < 0 or current_version < 0:
        raise ModelError("model versions are non-negative")
    if current_version < initial_version:
        raise ModelError(
            f"current version {current_version} precedes initial version {initial_version}"
        )
    return current_version - initial_version


def update_weight(num_examples: int, staleness: int) -> float:
    """Aggregation weight of one client update: example count times staleness factor."""
    if num_examples < 1:
        raise ModelError(f"num_examples must be positive, got {num_examples}")
    return num_examples * staleness_weight(staleness)


def finalize_aggregate(buffer_sum: np.ndarray, total_weight: float) -> np.ndarray:
    """Turn a weighted sum of deltas into their weighted mean."""
    if not total_weight > 0:
        raise ModelError(f"total weight must be positive, got {total_weight}")
    return np.asarray(buffer_sum, dtype=np.float64) / total_weight


@dataclass(frozen=True, eq=False)
class ServerModel:
    version: int
    params: np.ndarray

    @classmethod
    def initial(cls, size: int) -> "ServerModel":
        return cls(version=0, params=np.zeros(size))

    @property
    def size(self) -> int:
        return self.params.shape[0]


@dataclass(frozen=True, eq=False)
class ClientUpdate:
    """A model delta tagged with the version it was trained from.

    ``delta`` holds float64 reals, or uint64 group elements when ``masked``.
    """

    client_id: int
    initial_version: int
    delta: np.ndarray
    num_examples: int
    masked: bool = False

    def __post_init__(self):
        if self.num_examples < 1:
            raise ModelError("a client update needs at least one example")
        if self.initial_version < 0:
            raise ModelError("initial_version must be non-negative")


@dataclass(frozen=True, eq=False)
class ServerOptimizerState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, size: int, **hyper) -> "ServerOptimizerState":
        return cls(first_moment=np.zeros(size), second_moment=np.zeros(size), **hyper)


def fedadam_step(
    state: ServerOptimizerState, model: ServerModel, aggregated_delta: np.ndarray
) -> tuple[ServerOptimizerState, ServerModel]:
    """Apply one Adam step using the negated aggregated delta as pseudo-gradient.

    Returns the new optimizer state and the next model version; inputs are not
    modified.
    """
    delta = np.asarray(aggregated_delta, dtype=np.float64)
    if delta.shape != model.params.shape or delta.shape != state.first_moment.shape:
        raise ModelError(
            f"aggregated delta has shape {delta.shape}, model has {model.params.shape}"
        )
    grad = -delta
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    params = model.params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = replace(state, first_moment=m, second_moment=v, step_count=t)
    return new_state, ServerModel(version=model.version + 1, params=params)


class TaskKind(str, enum.Enum):
    LINEAR_REGRESSION = "linear-regression"
    LOGISTIC_CLASSIFICATION = "logistic-classification"


@dataclass(frozen=True, eq=False)
class ClientDataset:
    """Local examples. ``rows`` indexes the task's feature bank when the
    features came from it, which lets evaluation skip materializing ``x``."""

    x: np.ndarray
    y: np.ndarray
    rows: np.ndarray | None = None

    def __len__(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True, eq=False)
class SyntheticTask:
    """A convex stand-in for a production model.

    Client ``i`` draws features ``x ~ N(0, I)`` and labels from its own optimum
    ``true_params + shift_scale * (volume_score * shift_direction + noise)``.
    ``volume_score`` is the client's standardized log data volume, which ties the
    data distribution of heavy clients to their (slow) execution time.

    Features are rows of a fixed Gaussian bank of ``bank_size`` vectors rather
    than fresh draws, so building a client's dataset costs an index draw instead
    of ``n * input_dim`` normals. Set ``bank_size=0`` for fresh draws.
    """

    kind: TaskKind = TaskKind.LINEAR_REGRESSION
    input_dim: int = 32
    noise_scale: float = 0.1
    shift_scale: float = 0.5
    client_noise: float = 0.2
    seed: int = 0
    bank_size: int = 4096
    true_params: np.ndarray = field(default=None, repr=False)
    shift_direction: np.ndarray = field(default=None, repr=False)
    features: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.input_dim < 1:
            raise ModelError("input_dim must be positive")
        if self.noise_scale < 0:
            raise ModelError("noise_scale must be non-negative")
        kind = TaskKind(self.kind)
        object.__setattr__(self, "kind", kind)
        rng = np.random.default_rng([self.seed, 0x7A5C])
        if self.true_params is None:
            object.__setattr__(self, "true_params", rng.normal(size=self.input_dim))
        if self.shift_direction is None:
            u = rng.normal(size=self.input_dim)
            object.__setattr__(self, "shift_direction", u / np.linalg.norm(u))
        if self.bank_size < 0:
            raise ModelError("bank_size must be non-negative")
        if self.features is None and self.bank_size:
            bank = np.random.default_rng([self.seed, 0xBA4C]).normal(size=(self.bank_size, self.input_dim))
            object.__setattr__(self, "features", bank)

    @property
    def size(self) -> int:
        return self.input_dim

    def client_params(self, volume_score: float, client_rng: np.random.Generator) -> np.ndarray:
        jitter = client_rng.normal(size=self.input_dim) * (self.client_noise / math.sqrt(self.input_dim))
        return self.true_params + self.shift_scale * (volume_score * self.shift_direction + jitter)

    def sample(self, params: np.ndarray, n: int, rng: np.random.Generator) -> ClientDataset:
        rows = None
        if self.features is None:
            x = rng.normal(size=(n, self.input_dim))
        else:
            rows = rng.integers(self.features.shape[0], size=n)
            x = self.features[rows]
        logits = x @ params
        if self.kind is TaskKind.LINEAR_REGRESSION:
            y = logits + self.noise_scale * rng.normal(size=n)
        else:
            p = 1.0 / (1.0 + np.exp(-logits))
            y = (rng.random(n) < p).astype(np.float64)
        return ClientDataset(x, y, rows)

    def client_dataset(
        self, client_seed: int, num_examples: int, volume_score: float, split: int = 0
    ) -> ClientDataset:
        """Deterministic local dataset of one client.

        ``split`` selects an independent sample (0 = train, 1 = held-out) drawn
        around the same client optimum.
        """
        params = self.client_params(volume_score, np.random.default_rng([self.seed, client_seed, 0xDA7A]))
        rng = np.random.default_rng([self.seed, client_seed, 0xDA7A, split])
        return self.sample(params, num_examples, rng)

    def loss(self, params: np.ndarray, data: ClientDataset) -> float:
        return float(_loss(self.kind, params, data.x, data.y))

    def gradient(self, params: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return _gradient(self.kind, params, x, y)


def _loss(kind: TaskKind, params, x, y):
    z = x @ params
    if kind is TaskKind.LINEAR_REGRESSION:
        r = z - y
        return 0.5 * np.mean(r * r)
    # log(1 + e^z) - y z, written to stay finite for large |z|
    return np.mean(np.logaddexp(0.0, z) - y * z)


def _gradient(kind: TaskKind, params, x, y):
    z = x @ params
    if kind is TaskKind.LINEAR_REGRESSION:
        r = z - y
    else:
        r = 1.0 / (1.0 + np.exp(-z)) - y
    return x.T @ r / x.shape[0]


def shuffle_seed(client_id: int, initial_version: int, base_seed: int = 0) -> np.random.Generator:
    return np.random.default_rng([base_seed & 0xFFFFFFFF, client_id, initial_version, 0x5EED])


def local_train(
    model_params: np.ndarray,
    task: SyntheticTask,
    client_data: ClientDataset,
    lr: float,
    batch_size: int = 32,
    *,
    client_id: int = 0,
    initial_version: int = 0,
    seed: int = 0,
) -> ClientUpdate:
    """One epoch of mini-batch SGD; returns the trained-minus-initial delta.

    The shuffle order is a function of ``(seed, client_id, initial_version)``
    only, so retraining from the same version reproduces the same delta.
    """
    n = len(client_data)
    if n == 0:
        raise ModelError("cannot train on an empty dataset")
    if not lr > 0:
        raise ModelError("learning rate must be positive")
    if batch_size < 1:
        raise ModelError("batch_size must be positive")
    start = np.asarray(model_params, dtype=np.float64)
    if start.shape != (task.input_dim,):
        raise ModelError(f"model has shape {start.shape}, task expects ({task.input_dim},)")
    order = shuffle_seed(client_id, initial_version, seed).permutation(n)
    x, y = client_data.x[order], client_data.y[order]
    w = start.copy()
    for lo in range(0, n, batch_size):
        w -= lr * _gradient(task.kind, w, x[lo : lo + batch_size], y[lo : lo + batch_size])
    return ClientUpdate(
        client_id=client_id,
        initial_version=initial_version,
        delta=w - start,
        num_examples=n,
    )


def label_seed(*parts) -> int:
    """Stable 32-bit integer from a sequence of labels, for seed fan-out."""
    return zlib.crc32("/".join(str(p) for p in parts).encode())
