"""Federated learning simulator for heterogeneous devices with adaptive
width-based subnetwork scheduling."""

from .nn import Arch, Batch, Gradients, Model, NumericError
from .subnet import LevelSpec, Mask
from .fisher import FisherHistory, FisherMode
from .scheduler import SchedulerParams, Selection
from .sysmodel import DeviceProfile, DynamicsConfig, DynamicsTrace, FleetConfig
from .data import Dataset, Partition
from .harness import ConfigError, DataConfig, ExperimentConfig, MetricsLog, Seeds, Strategy

__version__ = "0.1.0"

__all__ = [
    "Arch",
    "Batch",
    "ConfigError",
    "DataConfig",
    "Dataset",
    "DeviceProfile",
    "DynamicsConfig",
    "DynamicsTrace",
    "ExperimentConfig",
    "FisherHistory",
    "FisherMode",
    "FleetConfig",
    "Gradients",
    "LevelSpec",
    "Mask",
    "MetricsLog",
    "Model",
    "NumericError",
    "Partition",
    "SchedulerParams",
    "Seeds",
    "Selection",
    "Strategy",
    "__version__",
]
