"""The only three places where sync and async training differ.

Switching regimes is a configuration change: demand computation, which
in-flight sessions to abort after a model update, and how an arriving update
is weighted. Everything else in the orchestrator is shared.
"""

from __future__ import annotations

import abc
from typing import Iterable

from ..model import update_weight
from .config import Mode, TaskConfig
from .session import ClientSession, SessionState

REGIME_BEHAVIORS = ("client_demand", "sessions_to_abort", "aggregation_weight")


class Regime(abc.ABC):
    def __init__(self, config: TaskConfig):
        self.config = config

    @abc.abstractmethod
    def client_demand(self, active: int, completed: int, pending: int = 0) -> int:
        """Clients still wanted; ``completed`` counts uploads in the open buffer generation."""

    @abc.abstractmethod
    def sessions_to_abort(self, sessions: Iterable[ClientSession], version: int) -> list[ClientSession]:
        """Sessions to abort right after the model moved to ``version``.

        ``sessions`` arrive in start order, so initial versions never decrease.
        """

    @abc.abstractmethod
    def aggregation_weight(self, num_examples: int, initial_version: int, version: int) -> float | None:
        """Weight of an arriving update, or ``None`` to discard it."""


class AsyncRegime(Regime):
    def client_demand(self, active, completed, pending=0):
        demand = self.config.concurrency - active - pending
        if self.config.barrier:
            demand -= completed
        return demand

    def sessions_to_abort(self, sessions, version):
        limit = version - self.config.max_staleness
        stale = []
        for s in sessions:
            if s.initial_version >= limit:
                break
            stale.append(s)
        return stale

    def aggregation_weight(self, num_examples, initial_version, version):
        staleness = version - initial_version
        if staleness > self.config.max_staleness:
            return None
        return update_weight(num_examples, staleness)


class SyncRegime(Regime):
    def client_demand(self, active, completed, pending=0):
        return self.config.round_size - completed - active - pending

    def sessions_to_abort(self, sessions, version):
        # uploads already in flight finish and are discarded on arrival
        return [s for s in sessions if s.state is not SessionState.UPLOADING]

    def aggregation_weight(self, num_examples, initial_version, version):
        if initial_version != version:
            return None
        return update_weight(num_examples, 0)


def make_regime(config: TaskConfig) -> Regime:
    return SyncRegime(config) if config.mode is Mode.SYNC else AsyncRegime(config)
