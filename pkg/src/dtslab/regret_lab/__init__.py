"""Experiment runner, regret accounting and bound checkers."""
from .bounds import (
    check_confidence_set,
    check_episode_bounds,
    check_martingale,
    fit_regret_slope,
    martingale_increments,
)
from .decomposition import RegretTrace, compute_decomposition
from .experiment import ExperimentConfig, load_config, parse_config, run_experiment
from .runner import TRACE_COLUMNS, RunRecord, simulate, trace_csv

__all__ = [
    "ExperimentConfig",
    "RegretTrace",
    "RunRecord",
    "TRACE_COLUMNS",
    "check_confidence_set",
    "check_episode_bounds",
    "check_martingale",
    "compute_decomposition",
    "fit_regret_slope",
    "load_config",
    "martingale_increments",
    "parse_config",
    "run_experiment",
    "simulate",
    "trace_csv",
]
