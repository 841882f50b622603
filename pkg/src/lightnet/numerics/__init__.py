from lightnet.numerics import ops
from lightnet.numerics.gradcheck import analytic_gradient, grad_check, numerical_gradient
from lightnet.numerics.ops import (
    concat,
    cross_entropy,
    elementwise,
    exp,
    log_softmax,
    matmul,
    mean,
    rms_norm,
    sigmoid,
    softmax,
    softmax_over_axis,
    swish,
)
from lightnet.numerics.rng import Rng
from lightnet.numerics.scan_ops import (
    COUNTERS,
    decay_matrix,
    decay_products,
    linear_scan,
    prefix_softmax,
    running_softmax,
    state_scan,
)
from lightnet.numerics.tensor import DTYPES, Tape, Tensor, as_dtype, parameter, tensor

__all__ = [
    "COUNTERS",
    "DTYPES",
    "Rng",
    "Tape",
    "Tensor",
    "analytic_gradient",
    "as_dtype",
    "concat",
    "cross_entropy",
    "decay_matrix",
    "decay_products",
    "elementwise",
    "exp",
    "grad_check",
    "linear_scan",
    "log_softmax",
    "matmul",
    "mean",
    "numerical_gradient",
    "ops",
    "parameter",
    "prefix_softmax",
    "rms_norm",
    "running_softmax",
    "sigmoid",
    "softmax",
    "softmax_over_axis",
    "state_scan",
    "swish",
    "tensor",
]
