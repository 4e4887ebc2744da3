"""MDMLP (multi-dimensional MLP) and its attention tool on a small numpy autodiff stack."""
from .errors import CheckpointError, ConfigError, DataError, NumericError, ShapeError, UsageError
from .model import ModelConfig, build_model, count_macs, count_params, forward, predict
from .tensor import PatchGeometry
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataError",
    "ModelConfig",
    "NumericError",
    "PatchGeometry",
    "ShapeError",
    "TrainConfig",
    "UsageError",
    "build_model",
    "count_macs",
    "count_params",
    "forward",
    "predict",
    "train",
]
