from .core import (
    MASK_OFF, BatchNormState, NonFiniteError, Tape, Tensor, add, as_tensor, batch_norm,
    check_finite, clamp_max, clamp_min, concat, default_dtype, div, exp, getitem, leaky_relu,
    linear, log, mask_from_bool, matmul, mean, mul, neg, precision, reshape, segment_sum,
    set_default_dtype, sigmoid, softmax, sqrt, square, sub, sum_, take, tanh, transpose,
)
from .optim import Adam
from .nn import MLP, BatchNorm, Linear, ParamStore
