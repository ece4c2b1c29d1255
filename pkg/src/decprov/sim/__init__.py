"""Smart-city scenario simulator and the investigation threads built on it."""

from .engine import EventTrace, SimEvent, SimResult, Simulation, run_scenario
from .spec import (
    FAULT_KINDS,
    Dependency,
    FaultInjection,
    ScenarioSpec,
    bundled_path,
    format_duration,
    inject,
    load_bundled,
    parse_duration,
    remove_fault,
    resolve_scenario,
)

__all__ = [
    "FAULT_KINDS", "Dependency", "EventTrace", "FaultInjection", "ScenarioSpec", "SimEvent",
    "SimResult", "Simulation", "bundled_path", "format_duration", "inject", "load_bundled",
    "parse_duration", "remove_fault", "resolve_scenario", "run_scenario",
]
