"""Core-periphery guided convolutional networks on a small numpy autodiff engine."""

from .channel_mask import BipartiteConstraint, ChannelMask, build_channel_mask, mask_density, relational_bipartite
from .dag_compile import BlockGraph, LabeledGraph, assign_labels, augment_io, compile_block, orient_edges, topo_order
from .graph_gen import (
    BlockDensityStats,
    CPGraphParams,
    Graph,
    block_density_stats,
    generate_cp_graph,
    generate_er_graph,
    generate_ws_graph,
    matched_density_params,
)
from .model import Model, ModelConfig, build_model, flop_count, param_count

__version__ = "0.1.0"
