"""Channel-level sparsity masks derived from a graph."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError
from .graph_gen import Graph


@dataclass(frozen=True, eq=False)
class BipartiteConstraint:
    n_groups: int
    allowed: np.ndarray  # bool, [out_group, in_group]

    def density(self) -> float:
        return float(self.allowed.mean())


@dataclass(frozen=True, eq=False)
class ChannelMask:
    out_channels: int
    in_channels: int
    mask: np.ndarray  # bool, [out, in]

    def __eq__(self, other):
        return isinstance(other, ChannelMask) and np.array_equal(self.mask, other.mask)

    def to_text(self) -> str:
        return "".join("".join("1" if v else "0" for v in row) + "\n" for row in self.mask)

    @classmethod
    def from_text(cls, text: str) -> "ChannelMask":
        rows = text.splitlines()
        if not rows or any(len(r) != len(rows[0]) or set(r) - {"0", "1"} for r in rows):
            raise FormatError("mask dump rows must be equal-length strings of 0/1")
        mask = np.array([[c == "1" for c in r] for r in rows], dtype=bool)
        return cls(mask.shape[0], mask.shape[1], mask)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def relational_bipartite(g: Graph) -> BipartiteConstraint:
    """Each group reads itself plus its graph neighbours."""
    if g.n < 1:
        raise ParameterError("graph must have at least one node")
    allowed = np.eye(g.n, dtype=bool)
    for i, j in g.edges:
        allowed[i, j] = allowed[j, i] = True
    return BipartiteConstraint(g.n, allowed)


def channel_groups(channels: int, n_groups: int) -> np.ndarray:
    """Group index of each channel; contiguous, the first ``channels % n_groups`` groups one larger."""
    if channels < n_groups:
        raise ParameterError(f"{channels} channels cannot be split into {n_groups} groups")
    base, extra = divmod(channels, n_groups)
    sizes = [base + 1] * extra + [base] * (n_groups - extra)
    return np.repeat(np.arange(n_groups), sizes)


def build_channel_mask(bc: BipartiteConstraint, in_channels: int, out_channels: int) -> ChannelMask:
    gi = channel_groups(in_channels, bc.n_groups)
    go = channel_groups(out_channels, bc.n_groups)
    mask = bc.allowed[np.ix_(go, gi)]
    return ChannelMask(out_channels, in_channels, mask)


def mask_density(m: ChannelMask) -> float:
    return float(np.count_nonzero(m.mask)) / (m.out_channels * m.in_channels)
