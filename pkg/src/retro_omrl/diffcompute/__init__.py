from .autodiff import Tensor, as_tensor, concat, minimum, stack
from .checkpoint import load_checkpoint, save_checkpoint
from .nets import ApproximatorSpec, ParameterVector, forward, init_params, mlp
from .optim import (
    NonFiniteError,
    OptimizerState,
    adam_step,
    central_difference,
    finite_diff_check,
    grad,
)

__all__ = [
    "ApproximatorSpec",
    "NonFiniteError",
    "OptimizerState",
    "ParameterVector",
    "Tensor",
    "adam_step",
    "as_tensor",
    "central_difference",
    "concat",
    "finite_diff_check",
    "forward",
    "grad",
    "init_params",
    "load_checkpoint",
    "minimum",
    "mlp",
    "save_checkpoint",
    "stack",
]
