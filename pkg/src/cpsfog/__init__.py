"""Deterministic discrete-event simulator of a cellular-fog security architecture for CPS."""

from .config import ScenarioConfig, emit_config, load_config, parse_scenario
from .engine import DAY, HOUR, MINUTE, SECOND, Engine, RngFactory, RngStream
from .metrics import MetricsReport, summarize_metrics
from .runner import RunSummary, compare_baselines, run_scenario
from .simulation import Simulation

__all__ = [
    "DAY", "HOUR", "MINUTE", "SECOND", "Engine", "MetricsReport", "RngFactory", "RngStream", "RunSummary",
    "ScenarioConfig", "Simulation", "compare_baselines", "emit_config", "load_config", "parse_scenario",
    "run_scenario", "summarize_metrics",
]
__version__ = "0.1.0"
