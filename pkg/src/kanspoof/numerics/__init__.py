"""Dense float64 tensors with reverse-mode automatic differentiation."""

from . import ops
from .gradcheck import finite_diff_check
from .ops import (
    BatchNormState,
    ConfigurationError,
    DegenerateBatchError,
    batch_norm,
    concat,
    contract_cheby,
    conv1d,
    cross_entropy,
    dropout,
    elementwise,
    glu,
    layer_norm,
    matmul,
    selu,
    sigmoid,
    silu,
    softmax,
    swish,
    tanh,
)
from .tensor import ContractError, DimensionError, Parameter, Tape, Tensor, backward, no_grad

__all__ = [
    "BatchNormState",
    "ConfigurationError",
    "ContractError",
    "DegenerateBatchError",
    "DimensionError",
    "Parameter",
    "Tape",
    "Tensor",
    "backward",
    "batch_norm",
    "concat",
    "contract_cheby",
    "conv1d",
    "cross_entropy",
    "dropout",
    "elementwise",
    "finite_diff_check",
    "glu",
    "layer_norm",
    "matmul",
    "no_grad",
    "ops",
    "selu",
    "sigmoid",
    "silu",
    "softmax",
    "swish",
    "tanh",
]
