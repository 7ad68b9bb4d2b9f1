"""resvsim: discrete-event comparison of monolithic vs. microservices
travel-reservation architectures with forecast-driven autoscaling."""

from .config import DEFAULTS, apply_override, load_config_file, merge_defaults, resolve
from .engine import (
    ConfigError,
    Engine,
    Event,
    EventKind,
    RngStream,
    SimulationError,
    Station,
    StationConfig,
)
from .experiment import (
    ExperimentResult,
    Simulation,
    calibrate,
    compare_experiments,
    find_load_capacity,
    run_experiment,
    run_single,
    sweep,
)
from .metrics import KpiReport, assemble_report
from .scenarios import get_scenario, scenario_names, write_scenario_files
from .trace import RunTrace

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DEFAULTS", "Engine", "Event", "EventKind", "ExperimentResult",
    "KpiReport", "RngStream", "RunTrace", "SimulationError", "Simulation",
    "Station", "StationConfig", "apply_override", "assemble_report", "calibrate",
    "compare_experiments", "find_load_capacity", "get_scenario", "load_config_file",
    "merge_defaults", "resolve", "run_experiment", "run_single", "scenario_names",
    "sweep", "write_scenario_files",
]
