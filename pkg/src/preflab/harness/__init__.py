"""Experiment orchestration: config, metrics, the main loop, the
labeling service, and the command-line interface."""

from .config import ExperimentConfig, default_config  # noqa: F401
from .loop import ExperimentResult, noise_sweep, run_experiment  # noqa: F401
