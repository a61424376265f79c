from .gradcheck import GradCheckReport, grad_check, numeric_gradient
from .io import dumps_tensor, load_tensor, loads_tensor, save_tensor
from .tensor import (
    NORM_EPS,
    Graph,
    NonFiniteError,
    Tensor,
    ZeroNormError,
    add,
    as_tensor,
    backward,
    concat,
    conv2d,
    cosine_similarity,
    div,
    exp,
    getitem,
    l2_normalize,
    log,
    log_softmax,
    logsumexp,
    matmul,
    mean,
    mul,
    neg,
    relu,
    reshape,
    sigmoid,
    sub,
    sum_,
    transpose,
    zero_grad,
)

__all__ = [
    "NORM_EPS",
    "GradCheckReport",
    "Graph",
    "NonFiniteError",
    "Tensor",
    "ZeroNormError",
    "add",
    "as_tensor",
    "backward",
    "concat",
    "conv2d",
    "cosine_similarity",
    "div",
    "dumps_tensor",
    "exp",
    "getitem",
    "grad_check",
    "l2_normalize",
    "load_tensor",
    "loads_tensor",
    "log",
    "log_softmax",
    "logsumexp",
    "matmul",
    "mean",
    "mul",
    "neg",
    "numeric_gradient",
    "relu",
    "reshape",
    "save_tensor",
    "sigmoid",
    "sub",
    "sum_",
    "transpose",
    "zero_grad",
]
