"""Dense float64 tensors with reverse-mode autodiff, optimizers, schedules,
gradient checking and checkpoint I/O."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .optim import OptimState, adamw_step, finetune_lr, pretrain_lr, sgd_momentum_step
from .params import ParamStore
from .tensor import (
    NumericsError,
    ShapeError,
    Tensor,
    add,
    backward,
    concat,
    exp,
    gelu,
    l2_normalize,
    layer_norm,
    linear,
    log,
    matmul,
    mean,
    mul,
    powc,
    relu,
    reshape,
    scatter_rows,
    slice_,
    softmax,
    sub,
    sum_,
    take_rows,
    transpose,
)

__all__ = [
    "NumericsError",
    "OptimState",
    "ParamStore",
    "ShapeError",
    "Tensor",
    "adamw_step",
    "add",
    "backward",
    "concat",
    "exp",
    "finetune_lr",
    "gelu",
    "grad_check",
    "l2_normalize",
    "layer_norm",
    "linear",
    "load_checkpoint",
    "log",
    "matmul",
    "mean",
    "mul",
    "powc",
    "pretrain_lr",
    "relu",
    "reshape",
    "save_checkpoint",
    "scatter_rows",
    "sgd_momentum_step",
    "slice_",
    "softmax",
    "sub",
    "sum_",
    "take_rows",
    "transpose",
]
