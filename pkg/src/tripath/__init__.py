"""Three-pathway 3D convolutional networks for early video classification.

The package is self-contained: a small reverse-mode autodiff engine on
numpy (`tripath.tensor`), layers and backbones (`tripath.layers`), the
multi-pathway model (`tripath.model`), losses, a synthetic data pipeline,
a training loop, and evaluation/reporting tools, all tied together by the
``tripath`` command line interface.
"""

from .errors import (
    ConfigError,
    ContractError,
    DomainError,
    InputError,
    NumericError,
    ParamError,
    ShapeError,
    TrainingAbort,
)
from .tensor import Tensor, no_grad, zero_grads

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "no_grad",
    "zero_grads",
    "ConfigError",
    "ContractError",
    "DomainError",
    "InputError",
    "NumericError",
    "ParamError",
    "ShapeError",
    "TrainingAbort",
    "__version__",
]
