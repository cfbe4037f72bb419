"""Scenario configuration, execution, persistence and reporting."""

from .checkpoint import checkpoint_load, checkpoint_save
from .config import ScenarioConfig, load_config, parse_config, parse_number
from .report import report_table
from .runner import ScenarioReport, load_reports, run_scenario, run_sweep

__all__ = [
    "ScenarioConfig", "ScenarioReport", "checkpoint_load", "checkpoint_save", "load_config",
    "load_reports", "parse_config", "parse_number", "report_table", "run_scenario", "run_sweep",
]
