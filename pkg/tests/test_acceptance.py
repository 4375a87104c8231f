"""Acceptance criteria, one marked test (or pair of routes) per criterion.

A per-criterion PASS/FAIL summary is printed at the end of the pytest run.
"""

import csv
import io
import os
import time
from pathlib import Path

import numpy as np
import pytest

from cpcnn.channel_mask import ChannelMask, build_channel_mask, relational_bipartite
from cpcnn.dag_compile import BlockGraph, assign_labels, augment_io, compile_block, orient_edges
from cpcnn.engine import checkpoint, ops
from cpcnn.engine.gradcheck import TRIALS, run_suite
from cpcnn.engine.optim import AdamW, lr_schedule
from cpcnn.engine.tensor import Tape, Tensor
from cpcnn.graph_gen import (
    CPGraphParams,
    Graph,
    block_density_stats,
    generate_cp_graph,
    generate_er_graph,
    generate_ws_graph,
)
from cpcnn.harness import data
from cpcnn.harness.sweep import AGG_FIELDS, RUN_FIELDS, sweep
from cpcnn.harness.train import TrainConfig, evaluate_model, steps_per_epoch, train
from cpcnn.model import ModelConfig, build_model

from oracles import chain_forward, grouped_conv, has_cycle, numpy_chain_forward


# 1 -----------------------------------------------------------------------------

@pytest.mark.criterion(1, "generator block densities over 1000 seeds within 0.02, ordered cc > cp > pp, < 5 s")
def test_generator_statistics():
    params = CPGraphParams(16, 8, 0.9, 0.5, 0.1)
    t0 = time.perf_counter()
    stats = [block_density_stats(generate_cp_graph(params, s), 8) for s in range(1000)]
    elapsed = time.perf_counter() - t0
    d_cc = np.mean([s.d_cc for s in stats])
    d_cp = np.mean([s.d_cp for s in stats])
    d_pp = np.mean([s.d_pp for s in stats])
    print(f"mean densities cc={d_cc:.4f} cp={d_cp:.4f} pp={d_pp:.4f} in {elapsed:.2f}s")
    assert abs(d_cc - 0.9) <= 0.02
    assert abs(d_cp - 0.5) <= 0.02
    assert abs(d_pp - 0.1) <= 0.02
    assert d_cc > d_cp > d_pp
    assert elapsed < 5.0


# 2 -----------------------------------------------------------------------------

def random_graph(rng, seed):
    family = ("cp", "er", "ws")[int(rng.integers(3))]
    n = int(rng.integers(1, 17))
    if family == "cp":
        p = rng.random(3)
        return generate_cp_graph(CPGraphParams(n, int(rng.integers(0, n + 1)), *p), seed)
    if family == "ws" and n >= 4:
        k = 2 * int(rng.integers(1, (n - 2) // 2 + 1))
        return generate_ws_graph(n, k, float(rng.random()), seed)
    return generate_er_graph(n, float(rng.random()), seed)


@pytest.mark.criterion(2, "10,000 (graph, seed) pairs over cp/er/ws acyclic under a DFS oracle, < 30 s")
def test_acyclicity():
    rng = np.random.default_rng(2024)
    failures = 0
    t0 = time.perf_counter()
    for i in range(10_000):
        g = random_graph(rng, i)
        lg = assign_labels(g, 10_000 + i)
        arcs = orient_edges(lg)
        bg = augment_io(lg, arcs)
        nodes = [bg.input_node, *bg.compute_nodes, bg.output_node]
        failures += has_cycle(range(g.n), arcs) or has_cycle(nodes, bg.arcs)
    elapsed = time.perf_counter() - t0
    print(f"{failures} cyclic of 10000 in {elapsed:.1f}s")
    assert failures == 0
    assert elapsed < 30.0


# 3 -----------------------------------------------------------------------------

@pytest.mark.criterion(3, "all-true mask bit-exact on 50 shapes; identity mask matches grouped oracle to 1e-12")
def test_mask_oracle():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        groups = int(rng.integers(1, 5))
        c_in = groups * int(rng.integers(1, 4))
        c_out = groups * int(rng.integers(1, 4))
        k = int(rng.choice([1, 3]))
        stride = int(rng.choice([1, 2]))
        x = Tensor(rng.standard_normal((int(rng.integers(1, 4)), c_in, int(rng.integers(3, 9)),
                                        int(rng.integers(3, 9)))))
        w = Tensor(rng.standard_normal((c_out, c_in, k, k)))
        b = Tensor(rng.standard_normal(c_out))
        plain = ops.conv2d(x, w, b, None, stride, k // 2).data
        full = ops.conv2d(x, w, b, np.ones((c_out, c_in), bool), stride, k // 2).data
        assert np.array_equal(plain, full)

        ident = build_channel_mask(relational_bipartite(Graph(groups)), c_in, c_out).mask
        got = ops.conv2d(x, w, None, ident, stride, k // 2).data
        want = grouped_conv(x.data, w.data, groups, stride, k // 2)
        worst = max(worst, np.max(np.abs(got - want)) / np.max(np.abs(want)))
    print(f"identity-mask max relative error {worst:.2e}")
    assert worst <= 1e-12


# 4 -----------------------------------------------------------------------------

@pytest.mark.criterion(4, "finite-difference gradient suite, >= 20 trials per op, max rel err < 1e-4, < 2 min")
def test_gradient_suite():
    assert set(TRIALS) >= {"conv2d", "batch_norm", "relu", "weighted_sum", "global_avg_pool",
                           "linear", "softmax_cross_entropy"}
    t0 = time.perf_counter()
    worst = run_suite(trials=20, seed=4)
    elapsed = time.perf_counter() - t0
    for name, err in worst.items():
        print(f"{name:24s} {err:.2e}")
    assert max(worst.values()) < 1e-4
    assert elapsed < 120.0


# 5 -----------------------------------------------------------------------------

@pytest.mark.criterion(5, "mask-false weights bit-identical after 100 AdamW steps")
def test_mask_invariance_under_training():
    cfg = ModelConfig(graph_params=CPGraphParams(8, 2, 0.9, 0.5, 0.1), stem_width=8,
                      block_widths=(8, 16, 32, 64), image_size=16, num_classes=4, seed=5)
    model = build_model(cfg)
    masked = [p for p in model.parameters() if p.mask is not None]
    initial = [p.data.copy() for p in masked]
    assert sum(int((~np.broadcast_to(p.mask, p.shape)).sum()) for p in masked) > 0
    opt = AdamW(model.parameters(), lr=1e-2, weight_decay=0.05)
    rng = np.random.default_rng(5)
    for _ in range(100):
        x = rng.standard_normal((4, 3, 16, 16)).astype(np.float32)
        y = rng.integers(0, 4, size=4)
        with Tape() as tape:
            loss = ops.softmax_cross_entropy(model(x), y)
        model.zero_grad()
        tape.backward(loss)
        opt.step()
    for p, before in zip(masked, initial):
        off = ~np.broadcast_to(p.mask, p.shape)
        assert np.array_equal(p.data[off], before[off])
        assert not np.array_equal(p.data[~off], before[~off])


# 6 -----------------------------------------------------------------------------

def single_node_model(dtype):
    cfg = ModelConfig(graph_params=CPGraphParams(1, 1, 0.9, 0.5, 0.1), stem_width=3,
                      block_widths=(2, 4, 8, 16), image_size=16, num_classes=5, seed=6)
    m = build_model(cfg, dtype=dtype)
    rng = np.random.default_rng(6)
    for block in m.blocks:
        for w in block.agg.values():
            w.data[...] = rng.standard_normal(w.shape)
    return m


@pytest.mark.criterion(6, "n=1 model equals a chain-CNN oracle with tied weights, bit-exact per batch")
def test_degenerate_equivalence_bit_exact():
    m = single_node_model(np.float32)
    for s in range(5):
        x = np.random.default_rng(s).standard_normal((4, 3, 16, 16)).astype(np.float32)
        assert np.array_equal(m(x).data, chain_forward(m, x))


@pytest.mark.criterion(6, "n=1 model equals a chain-CNN oracle with tied weights, bit-exact per batch")
def test_degenerate_equivalence_independent_numpy():
    m = single_node_model(np.float64)
    x = np.random.default_rng(60).standard_normal((3, 3, 16, 16))
    np.testing.assert_allclose(m(x).data, numpy_chain_forward(m, x), rtol=1e-10, atol=1e-10)


# 7 -----------------------------------------------------------------------------

@pytest.mark.criterion(7, "synthetic 2-class, n=8, <= 200 steps reaches >= 0.95 train accuracy, deterministic, < 3 min")
def test_training_sanity():
    model_cfg = ModelConfig(graph_params=CPGraphParams(8, 4, 0.9, 0.5, 0.1), stem_width=8,
                            block_widths=(8, 16, 32, 64), image_size=32, num_classes=2, seed=7)
    train_cfg = TrainConfig(epochs=20, batch_size=20, base_lr=3e-3, warmup_epochs=1, seed=7,
                            synth_per_class=100, synth_classes=2)
    train_set = data.synth_dataset(100, 2, 32, seed=7)
    steps = train_cfg.epochs * steps_per_epoch(len(train_set), train_cfg.batch_size)
    assert steps <= 200
    t0 = time.perf_counter()
    rec_a, model_a = train(model_cfg, train_cfg, datasets=(train_set, train_set))
    elapsed = time.perf_counter() - t0
    rec_b, model_b = train(model_cfg, train_cfg, datasets=(train_set, train_set))
    acc = evaluate_model(model_a, train_set)
    print(f"{steps} steps, train accuracy (eval mode) {acc:.3f}, {elapsed:.1f}s per run")
    assert acc >= 0.95
    assert rec_a.to_csv(include_time=False) == rec_b.to_csv(include_time=False)
    assert checkpoint.to_bytes(model_a.state_dict()) == checkpoint.to_bytes(model_b.state_dict())
    assert elapsed < 180.0


# 8 -----------------------------------------------------------------------------

CIFAR_FILES = data.CIFAR_TRAIN_FILES + data.CIFAR_TEST_FILES


def cifar_root() -> Path:
    root = data.default_data_root()
    if root is None:
        pytest.fail(f"CIFAR-10 binaries unavailable: ${data.DATA_ENV} is unset")
    base = root / "cifar-10-batches-bin" if (root / "cifar-10-batches-bin").is_dir() else root
    missing = [f for f in CIFAR_FILES if not (base / f).is_file()]
    if missing:
        pytest.fail(f"CIFAR-10 binaries unavailable under {base}: missing {', '.join(missing)}")
    return root


def cifar_model(n_core=8, seed=0):
    return ModelConfig(graph_params=CPGraphParams(16, n_core, 0.9, 0.5, 0.1), stem_width=16,
                       block_widths=(16, 32, 64, 128), image_size=32, num_classes=10, seed=seed)


def cifar_train(root):
    return TrainConfig(epochs=10, batch_size=128, base_lr=1e-3, warmup_epochs=1, dataset="cifar10",
                       data_root=str(root), train_limit=5000)


@pytest.mark.criterion(8, "CIFAR-10 desk run >= 50% test accuracy; C in {2,8,14} x 3 seeds sweep CSV")
def test_cifar_desk_accuracy():
    root = cifar_root()
    record, _ = train(cifar_model(), cifar_train(root))
    acc = record.summary()["eval_acc"]
    print(f"test accuracy {acc:.4f}")
    assert acc >= 0.5


@pytest.mark.criterion(8, "CIFAR-10 desk run >= 50% test accuracy; C in {2,8,14} x 3 seeds sweep CSV")
def test_cifar_core_sweep(tmp_path):
    root = cifar_root()
    rows, agg = sweep(["cp"], [2, 8, 14], [0, 1, 2], cifar_model(), cifar_train(root),
                      out_dir=tmp_path, jobs=os.cpu_count() or 1)
    run_csv = list(csv.DictReader(io.StringIO((tmp_path / "sweep.csv").read_text())))
    agg_csv = list(csv.DictReader(io.StringIO((tmp_path / "sweep_aggregate.csv").read_text())))
    assert list(run_csv[0]) == RUN_FIELDS and list(agg_csv[0]) == AGG_FIELDS
    assert len(run_csv) == 9 and [int(a["runs"]) for a in agg_csv] == [3, 3, 3]
    for a in agg_csv:
        print(f"C={a['n_core']} accuracy {float(a['eval_acc_mean']):.4f} +- {float(a['eval_acc_std']):.4f}")


# 9 -----------------------------------------------------------------------------

@pytest.mark.criterion(9, "schedule: lr(0)=0, lr(warmup end)=1e-4, lr(total)=0, cosine midpoint=5e-5 exactly")
def test_schedule_contract():
    for total, warmup in [(1500, 500), (5000, 500), (4850, 490), (10, 0)]:
        mid = (total + warmup) // 2
        assert (total + warmup) % 2 == 0
        assert lr_schedule(0, total, warmup, 1e-4) == (0.0 if warmup else 1e-4)
        assert lr_schedule(warmup, total, warmup, 1e-4) == 1e-4
        assert lr_schedule(mid, total, warmup, 1e-4) == 5e-5
        assert lr_schedule(total, total, warmup, 1e-4) == 0.0


# 10 ----------------------------------------------------------------------------

@pytest.mark.criterion(10, "graph, block DAG, mask dump and checkpoint round-trip bit-exactly on 100 instances")
def test_serialization_round_trips(tmp_path):
    rng = np.random.default_rng(10)
    for i in range(100):
        g = random_graph(rng, i)
        text = g.to_text()
        assert Graph.from_text(text) == g and Graph.from_text(text).to_text() == text
        g.save(tmp_path / "g.txt")
        assert Graph.load(tmp_path / "g.txt") == g

        bg = compile_block(g, i)
        text = bg.to_text()
        assert BlockGraph.from_text(text) == bg and BlockGraph.from_text(text).to_text() == text

        m = build_channel_mask(relational_bipartite(g), g.n + int(rng.integers(0, 9)), g.n + int(rng.integers(0, 9)))
        text = m.to_text()
        assert ChannelMask.from_text(text) == m and ChannelMask.from_text(text).to_text() == text

        tensors = {f"t{k}": rng.standard_normal(tuple(int(d) for d in rng.integers(1, 5, size=int(rng.integers(0, 4)))))
                   .astype(np.float32) for k in range(int(rng.integers(1, 5)))}
        meta = {"index": str(i)}
        checkpoint.save_checkpoint(tmp_path / "c.ckpt", tensors, meta)
        back, back_meta = checkpoint.load_checkpoint(tmp_path / "c.ckpt")
        assert back_meta == meta and sorted(back) == sorted(tensors)
        assert all(back[k].shape == v.shape and back[k].tobytes() == v.tobytes() for k, v in tensors.items())
        assert checkpoint.to_bytes(back, back_meta) == (tmp_path / "c.ckpt").read_bytes()
