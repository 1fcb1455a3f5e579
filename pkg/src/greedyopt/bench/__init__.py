"""Experiment runner: instance generators, solver dispatch, trace emission."""

from .experiments import (EXPERIMENTS, ExperimentConfig, default_config,
                          load_config, run_experiment)
from .generators import generate_blobs, generate_lowrank
from .io import read_trace_csv, write_trace_csv

__all__ = [
    "EXPERIMENTS",
    "ExperimentConfig",
    "default_config",
    "load_config",
    "run_experiment",
    "generate_blobs",
    "generate_lowrank",
    "read_trace_csv",
    "write_trace_csv",
]
