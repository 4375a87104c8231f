"""Named-tensor checkpoint container.

Layout (ASCII header, then one binary payload)::

    CPCNN-CHECKPOINT 1
    meta <key> <value>                    one line per key, sorted by key
    tensor <name> <shape> <offset> <nbytes>   one line per tensor, sorted by name
    end
    <payload: little-endian float32 tensors, concatenated in manifest order>

``<shape>`` is the dimensions joined by ``x`` (``scalar`` for 0-d tensors).
Offsets are relative to the start of the payload.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = "CPCNN-CHECKPOINT 1"


def _shape_str(shape) -> str:
    return "x".join(str(d) for d in shape) if shape else "scalar"


def _parse_shape(s: str) -> tuple[int, ...]:
    return () if s == "scalar" else tuple(int(d) for d in s.split("x"))


def to_bytes(tensors: dict[str, np.ndarray], meta: dict[str, str] | None = None) -> bytes:
    meta = meta or {}
    header = [MAGIC]
    for key in sorted(meta):
        value = str(meta[key])
        if any(ch.isspace() for ch in key) or "\n" in value:
            raise FormatError(f"meta key {key!r} or its value contains forbidden whitespace")
        header.append(f"meta {key} {value}")
    payload = []
    offset = 0
    for name in sorted(tensors):
        if any(ch.isspace() for ch in name):
            raise FormatError(f"tensor name {name!r} contains whitespace")
        arr = np.asarray(tensors[name], dtype="<f4")
        raw = arr.tobytes(order="C")
        header.append(f"tensor {name} {_shape_str(arr.shape)} {offset} {len(raw)}")
        payload.append(raw)
        offset += len(raw)
    header.append("end")
    return ("\n".join(header) + "\n").encode("ascii") + b"".join(payload)


def from_bytes(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    tensors, meta = {}, {}
    pos = 0
    lines = []
    while True:
        nl = blob.find(b"\n", pos)
        if nl < 0:
            raise FormatError("checkpoint header is not terminated by 'end'")
        try:
            line = blob[pos:nl].decode("ascii")
        except UnicodeDecodeError:
            raise FormatError("checkpoint header is not ASCII") from None
        pos = nl + 1
        if line == "end":
            break
        lines.append(line)
    if not lines or lines[0] != MAGIC:
        raise FormatError("not a CPCNN checkpoint")
    payload = blob[pos:]
    for line in lines[1:]:
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            key, _, value = rest.partition(" ")
            meta[key] = value
        elif kind == "tensor":
            try:
                name, shape, off, nbytes = rest.split(" ")
                off, nbytes, shape = int(off), int(nbytes), _parse_shape(shape)
            except ValueError:
                raise FormatError(f"malformed tensor line {line!r}") from None
            if off < 0 or off + nbytes > len(payload):
                raise FormatError(f"tensor {name} runs past the end of the payload")
            if nbytes != 4 * int(np.prod(shape, dtype=np.int64)):
                raise FormatError(f"tensor {name}: {nbytes} bytes do not match shape {shape}")
            arr = np.frombuffer(payload[off : off + nbytes], dtype="<f4").reshape(shape)
            tensors[name] = arr.astype(np.float32)
        else:
            raise FormatError(f"unknown header line {line!r}")
    return tensors, meta


def save_checkpoint(path, tensors, meta=None) -> None:
    Path(path).write_bytes(to_bytes(tensors, meta))


def load_checkpoint(path):
    return from_bytes(Path(path).read_bytes())
