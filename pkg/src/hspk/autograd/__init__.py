from hspk.autograd.functional import (
    avg_pool2x2,
    batch_norm,
    bce_with_logits,
    conv2d,
    pad2d,
    upsample_bilinear,
    upsample_bilinear_x2,
)
from hspk.autograd.gradcheck import GradCheckReport, grad_check
from hspk.autograd.optim import Adam, AdamState, adam_step
from hspk.autograd.tensor import (
    Tensor,
    abs_,
    clamp,
    concat,
    exp,
    flatten,
    leaky_relu,
    log,
    log2,
    matmul,
    mean,
    no_grad,
    relu,
    sigmoid,
    softplus,
    sum_,
    swapaxes,
    tanh,
)

__all__ = [
    "Adam",
    "AdamState",
    "GradCheckReport",
    "Tensor",
    "abs_",
    "adam_step",
    "avg_pool2x2",
    "batch_norm",
    "bce_with_logits",
    "clamp",
    "concat",
    "conv2d",
    "exp",
    "flatten",
    "grad_check",
    "leaky_relu",
    "log",
    "log2",
    "matmul",
    "mean",
    "no_grad",
    "pad2d",
    "relu",
    "sigmoid",
    "softplus",
    "sum_",
    "swapaxes",
    "tanh",
    "upsample_bilinear",
    "upsample_bilinear_x2",
]
