"""Experiment harness: configuration, orchestration, persistence and plotting."""

from .config import ExperimentConfig, load_config, load_schema
from .experiment import CSV_HEADER, ExperimentResult, RunRecord, run_experiment, run_lowerbound_study, verify_dist
from .main import main
from .plot import emit_plot

__all__ = [
    "CSV_HEADER", "ExperimentConfig", "ExperimentResult", "RunRecord", "emit_plot", "load_config",
    "load_schema", "main", "run_experiment", "run_lowerbound_study", "verify_dist",
]
