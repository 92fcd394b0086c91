"""Desk-scale emulation of a lightweight 5G core (AMF, SMF, UPF) hosted on a LEO satellite."""

from .scenario import ConfigError, ScenarioConfig, load_scenario, parse_scenario
from .sim import MalformedTrace
from .testbed import RunResult, Testbed, run_scenario

__all__ = [
    "ConfigError", "MalformedTrace", "RunResult", "ScenarioConfig", "Testbed",
    "load_scenario", "parse_scenario", "run_scenario",
]
__version__ = "0.1.0"
