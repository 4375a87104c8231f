from .ops import (
    RunningStats,
    batch_norm,
    conv2d,
    global_avg_pool,
    linear,
    relu,
    softmax_cross_entropy,
    weighted_sum,
)
from .optim import AdamW, OptimizerState, adamw_step, lr_schedule
from .tensor import Parameter, Tape, Tensor

__all__ = [
    "AdamW",
    "OptimizerState",
    "Parameter",
    "RunningStats",
    "Tape",
    "Tensor",
    "adamw_step",
    "batch_norm",
    "conv2d",
    "global_avg_pool",
    "linear",
    "lr_schedule",
    "relu",
    "softmax_cross_entropy",
    "weighted_sum",
]
