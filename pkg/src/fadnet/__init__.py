"""From-scratch two-stage stereo disparity networks on a small numpy autodiff engine."""

from .data import StereoSample, generate_dataset, generate_synthetic_pair
from .estimator import FADNetRegressor
from .exceptions import (ConfigError, ContractError, DegenerateError, DivergenceError, FADNetError,
                         FormatError, NumericalProbeError, ShapeError)
from .metrics import DisparityMap, disparity_histogram, epe, threshold_metrics
from .network import NetworkConfig, build_fadnet, count_parameters, forward_fadnet, variant
from .tensor import Tensor, backward, no_grad
from .training import LossSchedule, OptimizerConfig, TrainingLog, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "DegenerateError", "DisparityMap", "DivergenceError",
    "FADNetError", "FADNetRegressor", "FormatError", "LossSchedule", "NetworkConfig",
    "NumericalProbeError", "OptimizerConfig", "ShapeError", "StereoSample", "Tensor", "TrainingLog",
    "backward", "build_fadnet", "count_parameters", "disparity_histogram", "epe", "forward_fadnet",
    "generate_dataset", "generate_synthetic_pair", "no_grad", "threshold_metrics", "train", "variant",
]
