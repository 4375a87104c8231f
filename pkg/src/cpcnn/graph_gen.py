"""Core-periphery, Erdos-Renyi and Watts-Strogatz graph generators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from . import seeding
from .errors import FormatError, ParameterError


@dataclass(frozen=True)
class CPGraphParams:
    n: int
    n_c: int
    p_cc: float
    p_cp: float
    p_pp: float

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError(f"n must be positive, got {self.n}")
        # n_c = 0 and n_c = n are accepted: the graph collapses to one block.
        if not 0 <= self.n_c <= self.n:
            raise ParameterError(f"n_c must lie in [0, n={self.n}], got {self.n_c}")
        for name in ("p_cc", "p_cp", "p_pp"):
            _check_prob(name, getattr(self, name))


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes ``0..n-1``.

    ``edges`` holds pairs ``(i, j)`` with ``i < j``.  ``n_core`` is carried
    along for serialization and block statistics; it is 0 for graphs that
    have no core/periphery split.
    """

    n: int
    edges: frozenset = field(default_factory=frozenset)
    n_core: int = 0

    def __post_init__(self):
        norm = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ParameterError(f"self-loop on node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ParameterError(f"edge ({i}, {j}) out of range for n={self.n}")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))
        if not 0 <= self.n_core <= self.n:
            raise ParameterError(f"n_core {self.n_core} out of range")

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def degree(self) -> list[int]:
        deg = [0] * self.n
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    def to_text(self) -> str:
        lines = [f"n {self.n}", f"core {self.n_core}"]
        lines += [f"e {i} {j}" for i, j in self.sorted_edges()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Graph":
        lines = text.splitlines()
        if len(lines) < 2:
            raise FormatError("graph text needs 'n' and 'core' header lines")
        try:
            tag, n = lines[0].split()
            tag2, n_core = lines[1].split()
            if tag != "n" or tag2 != "core":
                raise ValueError
            edges = []
            for lineno, line in enumerate(lines[2:], start=3):
                parts = line.split()
                if len(parts) != 3 or parts[0] != "e":
                    raise FormatError(f"line {lineno}: expected 'e <i> <j>', got {line!r}")
                i, j = int(parts[1]), int(parts[2])
                if i >= j:
                    raise FormatError(f"line {lineno}: edge endpoints must satisfy i < j")
                edges.append((i, j))
        except ValueError as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"malformed graph text: {exc}") from exc
        if edges != sorted(set(edges)):
            raise FormatError("edge lines must be unique and sorted")
        return cls(int(n), frozenset(edges), int(n_core))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "Graph":
        return cls.from_text(Path(path).read_text())


@dataclass(frozen=True)
class BlockDensityStats:
    d_cc: float
    d_cp: float
    d_pp: float
    overall: float


def _check_prob(name, p):
    if not (0.0 <= p <= 1.0):
        raise ParameterError(f"{name} must lie in [0, 1], got {p}")


def generate_cp_graph(params: CPGraphParams, seed: int) -> Graph:
    """Sample a core-periphery graph.

    Nodes ``[0, n_c)`` are core, ``[n_c, n)`` periphery.  Each block of
    unordered pairs is visited in row-major order and draws from its own
    stream, so e.g. changing ``p_pp`` never perturbs the core-core edges.
    """
    n, n_c = params.n, params.n_c
    edges = []

    rng = seeding.stream(seed, seeding.CP_BLOCK_CC)
    for i in range(n_c):
        for j in range(i + 1, n_c):
            if rng.random() < params.p_cc:
                edges.append((i, j))

    rng = seeding.stream(seed, seeding.CP_BLOCK_CP)
    for i in range(n_c):
        for j in range(n_c, n):
            if rng.random() < params.p_cp:
                edges.append((i, j))

    rng = seeding.stream(seed, seeding.CP_BLOCK_PP)
    for i in range(n_c, n):
        for j in range(i + 1, n):
            if rng.random() < params.p_pp:
                edges.append((i, j))

    return Graph(n, frozenset(edges), n_c)


def generate_er_graph(n: int, p: float, seed: int) -> Graph:
    if n < 1:
        raise ParameterError(f"n must be positive, got {n}")
    _check_prob("p", p)
    rng = seeding.stream(seed, seeding.ER_PAIRS)
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return Graph(n, frozenset(edges))


def generate_ws_graph(n: int, k: int, p_rewire: float, seed: int) -> Graph:
    """Watts-Strogatz small-world graph.

    Lattice edges ``(u, u+d mod n)`` are visited for ``d = 1..k/2`` and
    ``u = 0..n-1``; each is rewired with probability ``p_rewire`` by moving
    its far endpoint to a uniformly chosen node that is neither ``u`` nor
    already adjacent to ``u``.  Nodes already adjacent to everything keep
    the edge.
    """
    if k % 2 or not 0 < k < n:
        raise ParameterError(f"k must be even with 0 < k < n, got k={k}, n={n}")
    _check_prob("p_rewire", p_rewire)
    adj = [set() for _ in range(n)]
    for u in range(n):
        for d in range(1, k // 2 + 1):
            v = (u + d) % n
            adj[u].add(v)
            adj[v].add(u)

    rng = seeding.stream(seed, seeding.WS_REWIRE)
    for d in range(1, k // 2 + 1):
        for u in range(n):
            v = (u + d) % n
            if rng.random() >= p_rewire:
                continue
            if v not in adj[u] or len(adj[u]) >= n - 1:
                continue
            candidates = [w for w in range(n) if w != u and w not in adj[u]]
            w = candidates[int(rng.integers(len(candidates)))]
            adj[u].discard(v)
            adj[v].discard(u)
            adj[u].add(w)
            adj[w].add(u)

    edges = {(min(u, v), max(u, v)) for u in range(n) for v in adj[u]}
    return Graph(n, frozenset(edges))


def block_density_stats(g: Graph, n_c: int) -> BlockDensityStats:
    if not 0 <= n_c <= g.n:
        raise ParameterError(f"n_c must lie in [0, {g.n}], got {n_c}")
    n_p = g.n - n_c
    counts = {"cc": 0, "cp": 0, "pp": 0}
    for i, j in g.edges:
        core_i, core_j = i < n_c, j < n_c
        if core_i and core_j:
            counts["cc"] += 1
        elif core_i or core_j:
            counts["cp"] += 1
        else:
            counts["pp"] += 1
    pairs = {"cc": math.comb(n_c, 2), "cp": n_c * n_p, "pp": math.comb(n_p, 2)}

    def ratio(e, p):
        return e / p if p else 0.0

    total_pairs = math.comb(g.n, 2)
    return BlockDensityStats(
        d_cc=ratio(counts["cc"], pairs["cc"]),
        d_cp=ratio(counts["cp"], pairs["cp"]),
        d_pp=ratio(counts["pp"], pairs["pp"]),
        overall=ratio(len(g.edges), total_pairs),
    )


def expected_cp_density(params: CPGraphParams) -> float:
    n, n_c = params.n, params.n_c
    total = math.comb(n, 2)
    if total == 0:
        return 0.0
    expected_edges = (
        math.comb(n_c, 2) * params.p_cc
        + n_c * (n - n_c) * params.p_cp
        + math.comb(n - n_c, 2) * params.p_pp
    )
    return expected_edges / total


def matched_density_params(params: CPGraphParams) -> tuple[float, int]:
    """ER probability and WS neighbour count with the CP graph's expected density."""
    er_p = expected_cp_density(params)
    er_p = min(1.0, max(0.0, er_p))
    raw_k = er_p * (params.n - 1)
    ws_k = 2 * round(raw_k / 2)
    ws_k = max(2, min(ws_k, params.n - 2))
    if ws_k % 2:
        ws_k -= 1
    return er_p, max(2, ws_k)


def generate_graph(family: str, params: CPGraphParams, seed: int, ws_rewire: float = 0.5) -> Graph:
    """Generate a graph of ``family`` whose density matches ``params``."""
    if family == "cp":
        return generate_cp_graph(params, seed)
    er_p, ws_k = matched_density_params(params)
    if family == "er":
        return generate_er_graph(params.n, er_p, seed)
    if family == "ws":
        return generate_ws_graph(params.n, ws_k, ws_rewire, seed)
    raise ParameterError(f"unknown graph family {family!r}")
