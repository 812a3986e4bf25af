from .config import EXPERIMENTS, ConfigError, ExperimentConfig, config_from_dict, load_config
from .emit import SweepResult, Table, emit
from .runners import RUNNERS, run

__all__ = [
    "EXPERIMENTS",
    "ConfigError",
    "ExperimentConfig",
    "config_from_dict",
    "load_config",
    "SweepResult",
    "Table",
    "emit",
    "RUNNERS",
    "run",
]
