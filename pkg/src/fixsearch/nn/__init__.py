"""Minimal float64 reverse-mode autodiff with the layer set the search model needs."""

from fixsearch.nn.tensor import (
    Tensor,
    add,
    amax,
    amin,
    backward,
    broadcast_to,
    concat,
    div,
    log,
    mean,
    mul,
    relu,
    reshape,
    sub,
    tsum,
)
from fixsearch.nn.functional import (
    bilinear_upsample2d,
    conv2d,
    depthwise_conv2d,
    global_mean,
    max_pool2d,
)
from fixsearch.nn.layers import Conv2d, kaiming_uniform
from fixsearch.nn.optim import Adam, AdamState, adam_step
from fixsearch.nn.gradcheck import GradCheckReport, grad_check
from fixsearch.nn.checkpoint import dump_params, load_params

__all__ = [
    "Tensor", "add", "sub", "mul", "div", "log", "relu", "tsum", "mean", "reshape",
    "broadcast_to", "concat", "amax", "amin", "backward",
    "conv2d", "depthwise_conv2d", "max_pool2d", "bilinear_upsample2d", "global_mean",
    "Conv2d", "kaiming_uniform", "Adam", "AdamState", "adam_step",
    "GradCheckReport", "grad_check", "dump_params", "load_params",
]
