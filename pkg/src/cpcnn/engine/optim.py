"""AdamW and the warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError, ShapeError


@dataclass
class OptimizerState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    step: int = 0
    exp_avg: list = field(default_factory=list)
    exp_avg_sq: list = field(default_factory=list)


def adamw_step(params, grads, state: OptimizerState, masks=None) -> OptimizerState:
    """One decoupled-weight-decay Adam update, in place on ``params``.

    ``params`` and ``grads`` are sequences of arrays.  ``masks`` (optional,
    one bool array or ``None`` per parameter) excludes entries from the
    weight decay; their gradient is expected to be zero already, so Adam
    leaves them untouched as well.
    """
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    if not state.exp_avg:
        state.exp_avg = [np.zeros_like(p) for p in params]
        state.exp_avg_sq = [np.zeros_like(p) for p in params]
    if len(state.exp_avg) != len(params):
        raise ShapeError("optimizer state does not match parameter list")
    if masks is None:
        masks = [None] * len(params)

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1 - b1**t
    bc2 = 1 - b2**t
    lr = state.lr
    for p, g, m, v, keep in zip(params, grads, state.exp_avg, state.exp_avg_sq, masks):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
        if state.weight_decay:
            if keep is None:
                p *= 1 - lr * state.weight_decay
            else:
                np.copyto(p, p * (1 - lr * state.weight_decay), where=keep)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        denom = np.sqrt(v / bc2) + state.eps
        p -= (lr / bc1) * m / denom
    return state


class AdamW:
    """Applies :func:`adamw_step` to a list of ``Parameter`` objects."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.05):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None):
        if lr is not None:
            self.state.lr = lr
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adamw_step([p.data for p in self.params], grads, self.state, [p.mask for p in self.params])


def lr_schedule(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup from 0 to ``base_lr``, then half-cosine decay to 0 at ``total_steps``."""
    if warmup_steps >= total_steps or warmup_steps < 0:
        raise ParameterError(f"need 0 <= warmup_steps < total_steps, got {warmup_steps}, {total_steps}")
    if not 0 <= step <= total_steps:
        raise ParameterError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
