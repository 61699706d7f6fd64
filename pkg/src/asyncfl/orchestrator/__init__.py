"""Server-side state machines: coordinator, selectors and aggregators."""

from .aggregator import Aggregator, ModelStore, ReportReply, TaskRuntime, new_task_state
from .buffer import AggregationBuffer, DuplicateUpdate, FinalizedAggregate, Partial, Submission
from .config import ConfigError, Mode, TaskConfig
from .coordinator import Assignment, Coordinator, NoLiveAggregator, Selector, TaskLoad, enforce_max_concurrency
from .eventlog import EventLog, Record
from .regimes import REGIME_BEHAVIORS, AsyncRegime, Regime, SyncRegime, make_regime
from .session import ClientSession, InvalidTransition, SessionState

__all__ = [
    "AggregationBuffer",
    "Aggregator",
    "Assignment",
    "AsyncRegime",
    "ClientSession",
    "ConfigError",
    "Coordinator",
    "DuplicateUpdate",
    "EventLog",
    "FinalizedAggregate",
    "InvalidTransition",
    "Mode",
    "ModelStore",
    "NoLiveAggregator",
    "Partial",
    "REGIME_BEHAVIORS",
    "Record",
    "Regime",
    "ReportReply",
    "Selector",
    "SessionState",
    "Submission",
    "SyncRegime",
    "TaskConfig",
    "TaskLoad",
    "TaskRuntime",
    "enforce_max_concurrency",
    "make_regime",
    "new_task_state",
]
