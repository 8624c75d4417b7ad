"""Config-driven experiments: run seeds, write metrics, compare, plot."""

from ..ssl import ConfigError
from .compare import Comparison, PairStats, compare_runs
from .config import (DatasetSpec, ExperimentConfig, LabeledOnlySpec, Method, ModelSpec, PiModelSpec,
                     PretextSpec, load_config, parse_config)
from .metrics import (CSV_HEADER, MetricRow, RunSummary, emit_metrics_csv, load_metrics_csv, mean_std,
                      quantize, read_metric_rows)
from .plot import plot_decision_boundary, read_ppm, render_boundary, write_ppm
from .runner import load_data, obtain_pretext, run_experiment, run_seed

__all__ = [
    "CSV_HEADER", "Comparison", "ConfigError", "DatasetSpec", "ExperimentConfig", "LabeledOnlySpec",
    "MetricRow", "Method", "ModelSpec", "PairStats", "PiModelSpec", "PretextSpec", "RunSummary",
    "compare_runs", "emit_metrics_csv", "load_config", "load_data", "load_metrics_csv", "mean_std",
    "obtain_pretext", "parse_config", "plot_decision_boundary", "quantize", "read_metric_rows",
    "read_ppm", "render_boundary", "run_experiment", "run_seed", "write_ppm",
]
