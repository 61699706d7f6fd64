"""Discrete-event simulation of a client population training against the orchestrator."""

from .engine import CausalityError, Event, EventKind, EventQueue
from .population import (
    ClientProfile,
    Population,
    PopulationSpec,
    SpreadTooNarrow,
    check_spread,
    client_execution_model,
    generate_population,
)
from .runner import (
    Failure,
    HeldOut,
    SimSettings,
    Simulation,
    SimulationResult,
    SimulationTimeout,
    StopRule,
    inject_failure,
    run_simulation,
)

__all__ = [
    "CausalityError",
    "ClientProfile",
    "Event",
    "EventKind",
    "EventQueue",
    "Failure",
    "HeldOut",
    "Population",
    "PopulationSpec",
    "SimSettings",
    "Simulation",
    "SimulationResult",
    "SimulationTimeout",
    "SpreadTooNarrow",
    "StopRule",
    "check_spread",
    "client_execution_model",
    "generate_population",
    "inject_failure",
    "run_simulation",
]
