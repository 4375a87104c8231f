"""Differentiable operators used by the CP-CNN.

Each operator takes and returns :class:`Tensor` objects and, when a tape is
active, records a closure mapping the output gradient to input gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError, ShapeError
from .tensor import Tensor, make_output


def _mask_array(mask, w_shape):
    if mask is None:
        return None
    m = getattr(mask, "mask", mask)
    m = np.asarray(m, dtype=bool)
    if m.shape != tuple(w_shape[:2]):
        raise ShapeError(f"mask shape {m.shape} does not match weight {tuple(w_shape[:2])}")
    return m


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, mask=None, stride: int = 1, padding: int = 1) -> Tensor:
    """2-D cross-correlation, NCHW input and OIkk weights.

    ``mask`` is an O x I boolean pattern (or a ChannelMask); the weight is
    multiplied by it in the forward pass and the weight gradient is
    multiplied by it again, so masked entries never receive gradient.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    o, i, kh, kw = w.shape
    if i != c:
        raise ShapeError(f"input has {c} channels, weight expects {i}")
    if b is not None and b.shape != (o,):
        raise ShapeError(f"bias shape {b.shape} does not match {o} output channels")
    m = _mask_array(mask, w.shape)
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"input {h}x{wd} too small for kernel {kh}x{kw}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = np.empty((n, ho, wo, c, kh, kw), dtype=x.data.dtype)
    for a in range(kh):
        for bb in range(kw):
            cols[..., a, bb] = xp[:, :, a : a + stride * ho : stride, bb : bb + stride * wo : stride].transpose(0, 2, 3, 1)
    cols = cols.reshape(n * ho * wo, c * kh * kw)

    w_eff = w.data if m is None else w.data * m[:, :, None, None]
    wmat = w_eff.reshape(o, -1)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        go = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (go.T @ cols).reshape(w.shape)
        if m is not None:
            gw *= m[:, :, None, None]
        gb = go.sum(axis=0) if b is not None else None
        gx = None
        if x.requires_grad:
            gcols = (go @ wmat).reshape(n, ho, wo, c, kh, kw)
            gxp = np.zeros_like(xp)
            for a in range(kh):
                for bb in range(kw):
                    gxp[:, :, a : a + stride * ho : stride, bb : bb + stride * wo : stride] += gcols[..., a, bb].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding : padding + h, padding : padding + wd] if padding else gxp
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return make_output(out, inputs, backward)


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32) -> "RunningStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, stats: RunningStats, training: bool,
               eps: float = BN_EPS, momentum: float = BN_MOMENTUM) -> Tensor:
    """Per-channel normalization of an NCHW tensor.

    Training mode normalizes with the biased batch variance and folds the
    unbiased variance into the running estimate.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm expects NCHW input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,) or stats.mean.shape != (c,):
        raise ShapeError(f"batch_norm parameters must have shape ({c},)")
    axes = (0, 2, 3)
    g4 = gamma.data.reshape(1, c, 1, 1)
    if training:
        count = x.data.size // c
        mean = x.data.mean(axis=axes)
        centered = x.data - mean.reshape(1, c, 1, 1)
        var = (centered * centered).mean(axis=axes)
        unbiased = var * (count / (count - 1)) if count > 1 else var
        stats.mean[...] = (1 - momentum) * stats.mean + momentum * mean
        stats.var[...] = (1 - momentum) * stats.var + momentum * unbiased
    else:
        count = None
        centered = x.data - stats.mean.reshape(1, c, 1, 1).astype(x.data.dtype)
        var = stats.var.astype(x.data.dtype)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.data.dtype)
    xhat = centered * inv_std.reshape(1, c, 1, 1)
    out = xhat * g4 + beta.data.reshape(1, c, 1, 1)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        dxhat = g * g4
        if training:
            s1 = dxhat.sum(axis=axes).reshape(1, c, 1, 1)
            s2 = (dxhat * xhat).sum(axis=axes).reshape(1, c, 1, 1)
            gx = (inv_std.reshape(1, c, 1, 1) / count) * (count * dxhat - s1 - xhat * s2)
        else:
            gx = dxhat * inv_std.reshape(1, c, 1, 1)
        return gx, ggamma, gbeta

    return make_output(out, (x, gamma, beta), backward)


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    # maximum (unlike where) lets NaN through so divergence stays visible
    out = np.maximum(x.data, x.data.dtype.type(0))

    def backward(g):
        return (g * pos,)

    return make_output(out, (x,), backward)


def sigmoid_np(w: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-w))


def weighted_sum(inputs: list[Tensor], weights: Tensor) -> Tensor:
    """``sum_k sigmoid(w_k) * x_k`` over same-shaped inputs."""
    if not inputs:
        raise ShapeError("weighted_sum needs at least one input")
    if weights.shape != (len(inputs),):
        raise ShapeError(f"{len(inputs)} inputs but weights of shape {weights.shape}")
    shape = inputs[0].shape
    for t in inputs[1:]:
        if t.shape != shape:
            raise ShapeError(f"weighted_sum inputs differ in shape: {shape} vs {t.shape}")
    s = sigmoid_np(weights.data)
    out = s[0] * inputs[0].data
    for k in range(1, len(inputs)):
        out = out + s[k] * inputs[k].data

    def backward(g):
        gw = np.array([np.sum(g * t.data) for t in inputs], dtype=weights.data.dtype) * s * (1 - s)
        return (*(s[k] * g for k in range(len(inputs))), gw)

    return make_output(out, (*inputs, weights), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).astype(x.data.dtype),)

    return make_output(out, (x,), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: cannot apply weight {w.shape} to input {x.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} does not match weight {w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def backward(g):
        return g @ w.data, g.T @ x.data, (g.sum(axis=0) if b is not None else None)

    inputs = (x, w) if b is None else (x, w, b)
    return make_output(out, inputs, backward)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} are incompatible")
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ParameterError(f"labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sum_ez = ez.sum(axis=1)
    rows = np.arange(n)
    loss = np.mean(np.log(sum_ez) - z[rows, labels])
    probs = ez / sum_ez[:, None]

    def backward(g):
        d = probs.copy()
        d[rows, labels] -= 1
        return (d * (g / n),)

    return make_output(np.asarray(loss, dtype=logits.data.dtype), (logits,), backward)
