"""Dense tensors and the reverse-mode tape."""

from __future__ import annotations

import threading

import numpy as np

_local = threading.local()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr if arr.flags.c_contiguous else arr.copy()
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable tensor.

    ``mask`` (bool, broadcastable to ``data``) marks the entries that take
    part in the computation; the optimizer leaves the other entries alone.
    """

    __slots__ = ("mask",)

    def __init__(self, data, mask=None, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.mask = None if mask is None else np.broadcast_to(np.asarray(mask, dtype=bool), self.data.shape)


class Tape:
    """Ordered log of executed operations.

    Operations record ``(inputs, output, backward)`` while the tape is
    active; :meth:`backward` replays them in exact reverse order.  Tapes are
    per-thread, so separate model instances can train on separate threads.
    """

    def __init__(self):
        self.records: list[tuple[tuple[Tensor, ...], Tensor, object]] = []

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def record(self, inputs, output, backward) -> None:
        self.records.append((tuple(inputs), output, backward))

    def backward(self, loss: Tensor, grad=None) -> None:
        if grad is None:
            if loss.data.size != 1:
                raise ValueError("backward without an explicit gradient needs a scalar output")
            grad = np.ones_like(loss.data)
        loss.accumulate(grad)
        for inputs, output, fn in reversed(self.records):
            if output.grad is None:
                continue
            grads = fn(output.grad)
            for t, g in zip(inputs, grads):
                if g is not None and t.requires_grad:
                    t.accumulate(g)
        self.records.clear()


def active_tape() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def make_output(data: np.ndarray, inputs, backward) -> Tensor:
    """Wrap ``data`` and record it on the active tape when any input needs a gradient."""
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape = active_tape()
        if tape is not None:
            tape.record(inputs, out, backward)
    return out
