"""Central finite-difference checks for every differentiable operator."""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tape, Tensor

FD_EPS = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def numeric_grad(f, arr: np.ndarray, eps: float = FD_EPS) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + eps
        hi = f()
        flat[idx] = orig - eps
        lo = f()
        flat[idx] = orig
        gflat[idx] = (hi - lo) / (2 * eps)
    return grad


def check(fn, inputs: list[Tensor], weight: np.ndarray | None = None, eps: float = FD_EPS) -> float:
    """Max relative error between tape gradients and finite differences.

    ``fn(*inputs)`` returns a tensor; the checked scalar is
    ``sum(fn(...) * weight)`` with a fixed random ``weight``.
    """

    def scalar(out):
        return float(np.sum(out.data * weight)) if weight is not None else float(np.sum(out.data))

    for t in inputs:
        t.grad = None
    with Tape() as tape:
        out = fn(*inputs)
        if weight is None:
            weight = np.ones_like(out.data)
    tape.backward(out, np.asarray(weight, dtype=out.data.dtype).reshape(out.shape))

    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_grad(lambda: scalar(fn(*inputs)), t.data, eps)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)


def trial_conv(rng) -> float:
    groups = int(rng.choice([1, 2, 4]))
    c_in = groups * int(rng.integers(1, 3))
    c_out = groups * int(rng.integers(1, 3))
    stride = int(rng.choice([1, 2]))
    x = _t(rng, int(rng.integers(1, 3)), c_in, int(rng.integers(3, 6)), int(rng.integers(3, 6)))
    w = _t(rng, c_out, c_in, 3, 3)
    b = _t(rng, c_out)
    allowed = rng.random((groups, groups)) < 0.5
    allowed |= np.eye(groups, dtype=bool)
    mask = allowed[np.ix_(np.repeat(np.arange(groups), c_out // groups), np.repeat(np.arange(groups), c_in // groups))]
    out_shape = ops.conv2d(x, w, b, mask, stride, 1).shape
    return check(lambda x, w, b: ops.conv2d(x, w, b, mask, stride, 1), [x, w, b], rng.standard_normal(out_shape))


def trial_batch_norm(rng) -> float:
    training = bool(rng.integers(2))
    c = int(rng.integers(1, 4))
    x = _t(rng, int(rng.integers(2, 4)), c, int(rng.integers(1, 4)), int(rng.integers(2, 4)), scale=2.0)
    gamma = _t(rng, c)
    beta = _t(rng, c)
    mean = rng.standard_normal(c)
    var = rng.random(c) + 0.5

    def fn(x, gamma, beta):
        stats = ops.RunningStats(mean.copy(), var.copy())
        return ops.batch_norm(x, gamma, beta, stats, training)

    return check(fn, [x, gamma, beta], rng.standard_normal(x.shape))


def trial_relu(rng) -> float:
    data = rng.standard_normal((3, 4))
    # keep samples away from the kink so the finite difference is meaningful
    data = np.where(np.abs(data) < 0.05, 0.5, data)
    x = Tensor(data, requires_grad=True, dtype=np.float64)
    return check(ops.relu, [x], rng.standard_normal(x.shape))


def trial_weighted_sum(rng) -> float:
    k = int(rng.integers(1, 5))
    shape = (2, 3, int(rng.integers(1, 4)), 2)
    xs = [_t(rng, *shape) for _ in range(k)]
    w = _t(rng, k)
    return check(lambda *args: ops.weighted_sum(list(args[:-1]), args[-1]), [*xs, w], rng.standard_normal(shape))


def trial_pool(rng) -> float:
    x = _t(rng, int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 5)))
    return check(ops.global_avg_pool, [x], rng.standard_normal(x.shape[:2]))


def trial_linear(rng) -> float:
    n, c, k = (int(v) for v in rng.integers(1, 6, size=3))
    x, w, b = _t(rng, n, c), _t(rng, k, c), _t(rng, k)
    return check(ops.linear, [x, w, b], rng.standard_normal((n, k)))


def trial_loss(rng) -> float:
    n, k = int(rng.integers(1, 6)), int(rng.integers(2, 6))
    logits = _t(rng, n, k, scale=3.0)
    labels = rng.integers(0, k, size=n)
    return check(lambda z: ops.softmax_cross_entropy(z, labels), [logits])


TRIALS = {
    "conv2d": trial_conv,
    "batch_norm": trial_batch_norm,
    "relu": trial_relu,
    "weighted_sum": trial_weighted_sum,
    "global_avg_pool": trial_pool,
    "linear": trial_linear,
    "softmax_cross_entropy": trial_loss,
}


def run_suite(trials: int = 20, seed: int = 0) -> dict[str, float]:
    """Worst relative error per operator over ``trials`` random cases."""
    rng = np.random.default_rng(seed)
    return {name: max(fn(rng) for _ in range(trials)) for name, fn in TRIALS.items()}
