"""Diverse policy ensembles from one training run via cyclic learning rates."""
from .config import ExperimentConfig, load_config, parse_config
from .envs import make_env
from .schedule import ScheduleSpec, lr_at, snapshot_due

__all__ = ["ExperimentConfig", "ScheduleSpec", "load_config", "lr_at", "make_env", "parse_config", "snapshot_due"]
__version__ = "0.1.0"
