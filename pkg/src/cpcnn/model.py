"""CP-CNN assembly: stem, four graph-wired blocks, classification head."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import seeding
from .channel_mask import BipartiteConstraint, build_channel_mask, relational_bipartite
from .dag_compile import BlockGraph, compile_block, topo_order
from .engine import ops
from .engine.tensor import Parameter, Tensor
from .errors import ConfigError, ShapeError
from .graph_gen import CPGraphParams, Graph, generate_graph

# sub-stream keys under the model seed
_GRAPH_KEY = 10
_LABEL_KEY = 11
_INIT_KEY = 12


@dataclass
class ModelConfig:
    graph_params: CPGraphParams = field(default_factory=lambda: CPGraphParams(16, 8, 0.9, 0.5, 0.1))
    graph_family: str = "cp"
    stem_width: int = 32
    block_widths: tuple = (64, 128, 256, 512)
    num_classes: int = 10
    image_size: int = 32
    seed: int = 0
    ws_rewire: float = 0.5
    graph: Graph | None = None

    def __post_init__(self):
        self.block_widths = tuple(int(w) for w in self.block_widths)

    @property
    def n(self) -> int:
        return self.graph.n if self.graph is not None else self.graph_params.n

    def validate(self) -> None:
        n = self.n
        if self.graph_family not in ("cp", "er", "ws"):
            raise ConfigError(f"unknown graph family {self.graph_family!r}")
        if len(self.block_widths) != 4:
            raise ConfigError(f"expected 4 block widths, got {len(self.block_widths)}")
        for k, w in enumerate(self.block_widths):
            if w <= 0 or w % n:
                raise ConfigError(f"block width {w} is not a positive multiple of n={n}")
            if k and w != 2 * self.block_widths[k - 1]:
                raise ConfigError(f"block widths must double: {self.block_widths}")
        if self.stem_width < n:
            raise ConfigError(f"stem width {self.stem_width} is smaller than n={n}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")
        if self.image_size < 4:
            raise ConfigError(f"image size {self.image_size} is too small")
        seeding.check_seed(self.seed)

    def resolve_graph(self) -> Graph:
        if self.graph is not None:
            return self.graph
        return generate_graph(self.graph_family, self.graph_params,
                              seeding.child_seed(self.seed, _GRAPH_KEY), self.ws_rewire)

    def to_flat(self) -> dict[str, str]:
        gp = self.graph_params
        flat = {
            "graph_family": self.graph_family,
            "n": gp.n, "n_core": gp.n_c, "p_cc": gp.p_cc, "p_cp": gp.p_cp, "p_pp": gp.p_pp,
            "stem_width": self.stem_width,
            "block_widths": ",".join(str(w) for w in self.block_widths),
            "num_classes": self.num_classes,
            "image_size": self.image_size,
            "model_seed": self.seed,
            "ws_rewire": self.ws_rewire,
        }
        if self.graph is not None:
            flat["graph_n"] = self.graph.n
            flat["graph_core"] = self.graph.n_core
            flat["graph_edges"] = ";".join(f"{i}-{j}" for i, j in self.graph.sorted_edges())
        return {k: repr(v) if isinstance(v, float) else str(v) for k, v in flat.items()}

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "ModelConfig":
        try:
            gp = CPGraphParams(int(flat["n"]), int(flat["n_core"]), float(flat["p_cc"]),
                               float(flat["p_cp"]), float(flat["p_pp"]))
            graph = None
            if "graph_n" in flat:
                edges = [tuple(int(v) for v in e.split("-")) for e in flat["graph_edges"].split(";") if e]
                graph = Graph(int(flat["graph_n"]), frozenset(edges), int(flat["graph_core"]))
            return cls(
                graph_params=gp,
                graph_family=flat["graph_family"],
                stem_width=int(flat["stem_width"]),
                block_widths=tuple(int(w) for w in flat["block_widths"].split(",")),
                num_classes=int(flat["num_classes"]),
                image_size=int(flat["image_size"]),
                seed=int(flat["model_seed"]),
                ws_rewire=float(flat["ws_rewire"]),
                graph=graph,
            )
        except KeyError as exc:
            raise ConfigError(f"model config is missing key {exc}") from None


class ConvUnit:
    """Convolution followed by batch normalization."""

    def __init__(self, name, c_in, c_out, k, stride, mask, rng, dtype):
        self.name, self.stride, self.k = name, stride, k
        self.padding = k // 2
        self.mask = mask
        m = mask.mask if mask is not None else np.ones((c_out, c_in), dtype=bool)
        # fan-in per output channel counts only the inputs the mask lets through
        fan_in = (m.sum(axis=1) * k * k).astype(np.float64)
        std = np.sqrt(2.0 / fan_in)[:, None, None, None]
        w = rng.standard_normal((c_out, c_in, k, k)) * std
        wmask = None if mask is None else m[:, :, None, None]
        self.weight = Parameter(w.astype(dtype), mask=wmask)
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))
        self.gamma = Parameter(np.ones(c_out, dtype=dtype))
        self.beta = Parameter(np.zeros(c_out, dtype=dtype))
        self.stats = ops.RunningStats.fresh(c_out, dtype)

    def __call__(self, x, training):
        y = ops.conv2d(x, self.weight, self.bias, self.mask, self.stride, self.padding)
        return ops.batch_norm(y, self.gamma, self.beta, self.stats, training)

    def named_parameters(self):
        yield f"{self.name}.conv.weight", self.weight
        yield f"{self.name}.conv.bias", self.bias
        yield f"{self.name}.bn.gamma", self.gamma
        yield f"{self.name}.bn.beta", self.beta


class CPBlock:
    def __init__(self, name, bg: BlockGraph, c_in, width, stride, bc, rng, dtype):
        self.name = name
        self.graph = bg
        self.order = topo_order(bg)
        self.preds = {v: bg.predecessors(v) for v in self.order}
        self.input_unit = ConvUnit(f"{name}.input", c_in, width, 3, stride,
                                   build_channel_mask(bc, c_in, width), rng, dtype)
        node_mask = build_channel_mask(bc, width, width)
        self.node_units = {v: ConvUnit(f"{name}.node{v}", width, width, 3, 1, node_mask, rng, dtype)
                           for v in bg.compute_nodes}
        # raw aggregation weights start at 0, i.e. sigmoid weight 0.5
        self.agg = {v: Parameter(np.zeros(len(self.preds[v]), dtype=dtype))
                    for v in self.order if v != bg.input_node}

    def forward(self, x, training, trace=None):
        bg = self.graph
        outputs = {}
        for v in self.order:
            if v == bg.input_node:
                out = self.input_unit(x, training)
            else:
                ins = []
                for p in self.preds[v]:
                    if trace is not None:
                        trace.append(("read", self.name, p))
                    ins.append(outputs[p])
                out = ops.weighted_sum(ins, self.agg[v])
                if v != bg.output_node:
                    out = self.node_units[v](ops.relu(out), training)
            if trace is not None:
                trace.append(("write", self.name, v))
            outputs[v] = out
        return outputs[bg.output_node]

    def named_parameters(self):
        yield from self.input_unit.named_parameters()
        for v in self.graph.compute_nodes:
            yield f"{self.name}.node{v}.agg", self.agg[v]
            yield from self.node_units[v].named_parameters()
        yield f"{self.name}.output.agg", self.agg[self.graph.output_node]

    def units(self):
        yield self.input_unit
        yield from self.node_units.values()


class Counts(NamedTuple):
    dense: int
    effective: int


class Model:
    def __init__(self, cfg: ModelConfig, graph: Graph, blocks_graphs: list[BlockGraph], dtype=np.float32):
        self.cfg = cfg
        self.graph = graph
        self.constraint: BipartiteConstraint = relational_bipartite(graph)
        self.dtype = np.dtype(dtype)
        self.training = True
        rng = seeding.stream(cfg.seed, _INIT_KEY)

        s = cfg.stem_width
        self.stem = [
            ConvUnit("stem.0", 3, s, 3, 2, None, rng, dtype),
            ConvUnit("stem.1", s, s, 3, 2, None, rng, dtype),
        ]
        self.blocks = []
        c_in = s
        for k, (bg, width) in enumerate(zip(blocks_graphs, cfg.block_widths)):
            # the stem already downsamples 4x; later blocks halve the map
            stride = 1 if k == 0 else 2
            self.blocks.append(CPBlock(f"block{k}", bg, c_in, width, stride, self.constraint, rng, dtype))
            c_in = width
        self.head_mask = build_channel_mask(self.constraint, c_in, c_in)
        hm = self.head_mask.mask
        self.head_weight = Parameter(
            (rng.standard_normal((c_in, c_in, 1, 1)) * np.sqrt(2.0 / hm.sum(axis=1))[:, None, None, None]).astype(dtype),
            mask=hm[:, :, None, None])
        self.head_bias = Parameter(np.zeros(c_in, dtype=dtype))
        self.fc_weight = Parameter((rng.standard_normal((cfg.num_classes, c_in)) * np.sqrt(2.0 / c_in)).astype(dtype))
        self.fc_bias = Parameter(np.zeros(cfg.num_classes, dtype=dtype))

    # -- execution -------------------------------------------------------
    def train(self):
        self.training = True

    def eval(self):
        self.training = False

    def forward(self, x, trace=None) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        size = self.cfg.image_size
        if x.data.ndim != 4 or x.shape[1] != 3 or x.shape[2:] != (size, size):
            raise ShapeError(f"expected batch of shape (N, 3, {size}, {size}), got {x.shape}")
        h = x
        for unit in self.stem:
            h = ops.relu(unit(h, self.training))
        for block in self.blocks:
            h = block.forward(h, self.training, trace)
        h = ops.conv2d(h, self.head_weight, self.head_bias, self.head_mask, 1, 0)
        h = ops.global_avg_pool(h)
        return ops.linear(h, self.fc_weight, self.fc_bias)

    __call__ = forward

    def feature_shapes(self) -> list[tuple[int, int, int]]:
        """(channels, height, width) at the output of each block for one image."""
        x = Tensor(np.zeros((2, 3, self.cfg.image_size, self.cfg.image_size), dtype=self.dtype))
        shapes = []
        h = x
        was = self.training
        self.training = False
        for unit in self.stem:
            h = ops.relu(unit(h, False))
        for block in self.blocks:
            h = block.forward(h, False)
            shapes.append(h.shape[1:])
        self.training = was
        return shapes

    # -- parameters ------------------------------------------------------
    def named_parameters(self):
        for unit in self.stem:
            yield from unit.named_parameters()
        for block in self.blocks:
            yield from block.named_parameters()
        yield "head.conv.weight", self.head_weight
        yield "head.conv.bias", self.head_bias
        yield "fc.weight", self.fc_weight
        yield "fc.bias", self.fc_bias

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def conv_units(self):
        yield from self.stem
        for block in self.blocks:
            yield from block.units()

    def named_buffers(self):
        for unit in self.conv_units():
            yield f"{unit.name}.bn.running_mean", unit.stats.mean
            yield f"{unit.name}.bn.running_var", unit.stats.var

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        targets = {name: p.data for name, p in self.named_parameters()}
        targets.update(dict(self.named_buffers()))
        missing = set(targets) - set(state)
        if missing:
            raise ShapeError(f"checkpoint lacks {len(missing)} tensors, e.g. {sorted(missing)[0]}")
        for name, arr in targets.items():
            src = np.asarray(state[name])
            if src.shape != arr.shape:
                raise ShapeError(f"{name}: checkpoint shape {src.shape} != model shape {arr.shape}")
            arr[...] = src

    def describe(self) -> str:
        """Model description: flat config, shared graph, then each block's DAG."""
        parts = ["[config]"]
        parts += [f"{k}={v}" for k, v in sorted(self.cfg.to_flat().items())]
        parts.append("[graph]")
        parts.append(self.graph.to_text().rstrip("\n"))
        for k, block in enumerate(self.blocks):
            parts.append(f"[block {k}]")
            parts.append(block.graph.to_text().rstrip("\n"))
        return "\n".join(parts) + "\n"


def build_model(cfg: ModelConfig, dtype=np.float32) -> Model:
    cfg.validate()
    graph = cfg.resolve_graph()
    if graph.n != cfg.n:
        raise ConfigError(f"graph has {graph.n} nodes, config expects {cfg.n}")
    block_graphs = [compile_block(graph, seeding.child_seed(cfg.seed, _LABEL_KEY, k)) for k in range(4)]
    return Model(cfg, graph, block_graphs, dtype)


def param_count(m: Model) -> Counts:
    """Trainable scalars; ``effective`` leaves out masked-away weight entries."""
    dense = effective = 0
    for _, p in m.named_parameters():
        dense += p.data.size
        effective += p.data.size if p.mask is None else int(np.count_nonzero(p.mask))
    return Counts(dense, effective)


def flop_count(m: Model, image_size: int | None = None) -> Counts:
    """Multiply-accumulates per image for all convolutions and the classifier."""
    size = image_size or m.cfg.image_size
    dense = effective = 0

    def conv(h, c_out, c_in, k, stride, mask):
        nonlocal dense, effective
        ho = ops.conv_output_size(h, k, stride, k // 2)
        per_pos = k * k
        dense += ho * ho * per_pos * c_out * c_in
        effective += ho * ho * per_pos * (c_out * c_in if mask is None else int(np.count_nonzero(mask.mask)))
        return ho

    h = size
    for unit in m.stem:
        o, i, k, _ = unit.weight.shape
        h = conv(h, o, i, k, unit.stride, None)
    for block in m.blocks:
        o, i, k, _ = block.input_unit.weight.shape
        h = conv(h, o, i, k, block.input_unit.stride, block.input_unit.mask)
        for unit in block.node_units.values():
            conv(h, o, o, 3, 1, unit.mask)
    c = m.head_weight.shape[0]
    conv(h, c, c, 1, 1, m.head_mask)
    dense += c * m.cfg.num_classes
    effective += c * m.cfg.num_classes
    return Counts(dense, effective)

