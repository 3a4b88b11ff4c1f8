from .adam import AdamState, adam_step
from .autodiff import (
    ContractError,
    NumericError,
    Parameter,
    ShapeError,
    Tape,
    Tensor,
    add,
    add_rowvec,
    as_tensor,
    backward,
    elu_plus_one,
    gather_rows,
    matmul,
    mean,
    mul,
    reciprocal,
    relu,
    reshape,
    scale_rows,
    segment_sum,
    sigmoid,
    softmax_rows,
    softplus,
    spmm,
    sub,
    total,
    transpose,
)
from .linalg import SpectralEstimate, spectral_norm

__all__ = [
    "AdamState", "adam_step", "ContractError", "NumericError", "Parameter",
    "ShapeError", "Tape", "Tensor", "add", "add_rowvec", "as_tensor", "backward",
    "elu_plus_one", "gather_rows", "matmul", "mean", "mul", "reciprocal", "relu",
    "reshape", "scale_rows", "segment_sum", "sigmoid", "softmax_rows", "softplus",
    "spmm", "sub", "total", "transpose", "SpectralEstimate", "spectral_norm",
]
