"""Compile an undirected graph into the DAG executed by one network block.

Node ids in a :class:`BlockGraph`: compute nodes keep their graph index
``0..n-1``; the input pseudo-node is ``n`` (label 0) and the output
pseudo-node is ``n + 1`` (label ``n + 1``), so ordering by label always
puts the input first and the output last.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from pathlib import Path

from . import seeding
from .errors import CycleError, FormatError, ParameterError
from .graph_gen import Graph


@dataclass(frozen=True)
class LabeledGraph:
    base: Graph
    label: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.label) != list(range(1, self.base.n + 1)):
            raise ParameterError("labels must be a permutation of 1..n")


@dataclass(frozen=True)
class BlockGraph:
    n: int
    labels: tuple[int, ...]
    arcs: tuple[tuple[int, int], ...]

    @property
    def input_node(self) -> int:
        return self.n

    @property
    def output_node(self) -> int:
        return self.n + 1

    @property
    def compute_nodes(self) -> range:
        return range(self.n)

    def kind(self, v: int) -> str:
        if v == self.input_node:
            return "input"
        if v == self.output_node:
            return "output"
        return "compute"

    def label_of(self, v: int) -> int:
        if v == self.input_node:
            return 0
        if v == self.output_node:
            return self.n + 1
        return self.labels[v]

    def predecessors(self, v: int) -> list[int]:
        """Incoming neighbours of ``v``; this order fixes the aggregation-weight slots."""
        return sorted((s for s, d in self.arcs if d == v), key=self.label_of)

    def successors(self, v: int) -> list[int]:
        return sorted((d for s, d in self.arcs if s == v), key=self.label_of)

    def topo_order(self) -> list[int]:
        return topo_order(self)

    def to_text(self) -> str:
        nodes = [self.input_node, *self.compute_nodes, self.output_node]
        lines = [f"node {v} {self.kind(v)} {self.label_of(v)}" for v in nodes]
        lines += [f"arc {s} {d}" for s, d in self.arcs]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "BlockGraph":
        nodes, arcs = [], []
        for lineno, line in enumerate(text.splitlines(), start=1):
            parts = line.split()
            try:
                if parts[0] == "node" and len(parts) == 4:
                    nodes.append((int(parts[1]), parts[2], int(parts[3])))
                elif parts[0] == "arc" and len(parts) == 3:
                    arcs.append((int(parts[1]), int(parts[2])))
                else:
                    raise ValueError
            except (ValueError, IndexError):
                raise FormatError(f"line {lineno}: cannot parse {line!r}") from None
        if len(nodes) < 2:
            raise FormatError("block graph needs input and output nodes")
        n = len(nodes) - 2
        kinds = {v: k for v, k, _ in nodes}
        if kinds.get(n) != "input" or kinds.get(n + 1) != "output":
            raise FormatError("input/output pseudo-nodes must have ids n and n+1")
        labels = [0] * n
        for v, kind, label in nodes:
            if kind == "compute":
                if not 0 <= v < n:
                    raise FormatError(f"compute node id {v} out of range")
                labels[v] = label
        bg = cls(n, tuple(labels), tuple(arcs))
        if bg.to_text() != text:
            raise FormatError("block graph text is not in canonical form")
        return bg

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "BlockGraph":
        return cls.from_text(Path(path).read_text())


def assign_labels(g: Graph, seed: int) -> LabeledGraph:
    """Uniformly random labels 1..n via a Fisher-Yates shuffle."""
    rng = seeding.stream(seed, seeding.LABELS)
    perm = list(range(1, g.n + 1))
    for i in range(g.n - 1, 0, -1):
        j = int(rng.integers(i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return LabeledGraph(g, tuple(perm))


def orient_edges(lg: LabeledGraph) -> list[tuple[int, int]]:
    out = []
    for i, j in lg.base.sorted_edges():
        if lg.label[i] < lg.label[j]:
            out.append((i, j))
        else:
            out.append((j, i))
    return sorted(out)


def augment_io(lg: LabeledGraph, arcs: list[tuple[int, int]]) -> BlockGraph:
    """Add the input and output pseudo-nodes.

    Sources get an arc from the input node and sinks an arc to the output
    node; isolated nodes are both, so they end up wired input -> v -> output.
    """
    n = lg.base.n
    has_in = {d for _, d in arcs}
    has_out = {s for s, _ in arcs}
    full = list(arcs)
    full += [(n, v) for v in range(n) if v not in has_in]
    full += [(v, n + 1) for v in range(n) if v not in has_out]
    return BlockGraph(n, lg.label, tuple(sorted(full)))


def topo_order(bg: BlockGraph) -> list[int]:
    """Kahn's algorithm, smallest label first among ready nodes."""
    nodes = [bg.input_node, *bg.compute_nodes, bg.output_node]
    indeg = {v: 0 for v in nodes}
    succ = {v: [] for v in nodes}
    for s, d in bg.arcs:
        indeg[d] += 1
        succ[s].append(d)
    ready = [(bg.label_of(v), v) for v in nodes if indeg[v] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        _, v = heapq.heappop(ready)
        order.append(v)
        for d in succ[v]:
            indeg[d] -= 1
            if indeg[d] == 0:
                heapq.heappush(ready, (bg.label_of(d), d))
    if len(order) != len(nodes):
        raise CycleError("block graph contains a cycle")
    return order


def compile_block(g: Graph, seed: int) -> BlockGraph:
    lg = assign_labels(g, seed)
    return augment_io(lg, orient_edges(lg))
