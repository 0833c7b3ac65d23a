"""Post-training quantization simulation toolkit.

Uniform fake quantization with min-max/percentile/MSE calibration,
closed-form per-channel equivalent scaling, static token-wise quantization
plans, Mahalanobis-guided calibration-set selection, and a numerical
analysis harness with brute-force oracles for every closed-form result.
"""

from .errors import ConfigError, NumericError, PtqkitError, TensorFormatError
from .kernels import BACKEND
from .quantcore import GroupAxis, QuantParams
from .tensorio import load_tensor, matmul, save_tensor

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigError",
    "GroupAxis",
    "NumericError",
    "PtqkitError",
    "QuantParams",
    "TensorFormatError",
    "__version__",
    "load_tensor",
    "matmul",
    "save_tensor",
]
