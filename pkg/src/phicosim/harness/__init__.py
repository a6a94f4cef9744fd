"""Scenario loading, experiment execution, metrics, sweeps and file output."""

from .experiment import RunResult, run_experiment
from .metrics import Metrics, detect_instability, phasor_errors, rms_error
from .output import emit_csv, emit_report
from .scenario import Scenario, load_scenario, loads_scenario
from .sweep import derive_seed, sweep

__all__ = [
    "Metrics", "RunResult", "Scenario", "derive_seed", "detect_instability", "emit_csv", "emit_report",
    "load_scenario", "loads_scenario", "phasor_errors", "rms_error", "run_experiment", "sweep",
]
