import csv
import io

import numpy as np
import pytest

from cpcnn.engine import checkpoint
from cpcnn.errors import ConfigError, DivergenceError, IngestionError, ParameterError
from cpcnn.graph_gen import CPGraphParams, generate_graph, matched_density_params
from cpcnn.harness import data
from cpcnn.harness.config import build_configs, load_kv_file, parse_kv
from cpcnn.harness.sweep import AGG_FIELDS, RUN_FIELDS, sweep, sweep_cells
from cpcnn.harness.train import (
    RunRecord,
    TrainConfig,
    evaluate,
    evaluate_model,
    load_model,
    step_lr,
    train,
)
from cpcnn.model import ModelConfig, build_model


def tiny_model(n=4, n_core=2, base=4, image=16, seed=0, classes=2):
    return ModelConfig(graph_params=CPGraphParams(n, n_core, 0.9, 0.5, 0.1), stem_width=base,
                       block_widths=(base, 2 * base, 4 * base, 8 * base), image_size=image,
                       num_classes=classes, seed=seed)


def tiny_train(**kw):
    base = dict(epochs=4, warmup_epochs=1, batch_size=10, base_lr=3e-3, synth_per_class=20)
    base.update(kw)
    return TrainConfig(**base)


# -- CIFAR ingestion -------------------------------------------------------

def make_cifar_dir(root, per_file=3):
    raw = np.zeros((per_file, 3, 32, 32), np.uint8)
    raw[0, 0] = 0
    raw[0, 1] = 255
    raw[0, 2] = 128
    raw[1:] = np.arange(3 * 32 * 32, dtype=np.int64).reshape(3, 32, 32) % 256
    labels = np.arange(per_file) % 10
    for name in data.CIFAR_TRAIN_FILES + data.CIFAR_TEST_FILES:
        data.write_cifar_file(root / name, raw, labels)
    return raw, labels


def test_cifar_fixture_exact_pixels(tmp_path):
    make_cifar_dir(tmp_path)
    train_set = data.load_cifar10(tmp_path, "train")
    test_set = data.load_cifar10(tmp_path, "test")
    assert len(train_set) == 15 and len(test_set) == 3
    x = train_set.images[0]
    # hand-computed (v/255 - mean) / std
    assert np.allclose(x[0], -1.9894736842105263, rtol=1e-6)
    assert np.allclose(x[1], 2.126488706365503, rtol=1e-6)
    assert np.allclose(x[2], 0.21200605624512797, rtol=1e-5)
    assert train_set.labels.tolist() == [0, 1, 2] * 5
    assert x.dtype == np.float32


def test_cifar_limit_and_nested_dir(tmp_path):
    nested = tmp_path / "cifar-10-batches-bin"
    nested.mkdir()
    make_cifar_dir(nested)
    assert len(data.load_cifar10(tmp_path, "train", limit=4)) == 4


def test_cifar_truncated_file(tmp_path):
    make_cifar_dir(tmp_path)
    path = tmp_path / "data_batch_2.bin"
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(IngestionError, match=r"data_batch_2\.bin.*offset 6146"):
        data.load_cifar10(tmp_path, "train")


def test_cifar_missing_file(tmp_path):
    make_cifar_dir(tmp_path)
    (tmp_path / "test_batch.bin").unlink()
    with pytest.raises(IngestionError, match="test_batch.bin"):
        data.load_cifar10(tmp_path, "test")


def test_cifar_bad_label(tmp_path):
    data.write_cifar_file(tmp_path / "test_batch.bin", np.zeros((2, 3, 32, 32)), np.array([1, 12]))
    with pytest.raises(IngestionError, match="offset 3073"):
        data.load_cifar10(tmp_path, "test")


def test_cifar_without_root():
    with pytest.raises(IngestionError):
        data.load_cifar10(None)
    with pytest.raises(ParameterError):
        data.load_cifar10("/nonexistent", "valid")


# -- synthetic data --------------------------------------------------------

def test_synth_deterministic_and_balanced():
    a = data.synth_dataset(100, 2, 16, seed=3)
    b = data.synth_dataset(100, 2, 16, seed=3)
    assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
    assert np.bincount(a.labels).tolist() == [100, 100]
    assert not np.array_equal(a.images, data.synth_dataset(100, 2, 16, seed=4).images)


def test_synth_class_frequency_energy():
    ds = data.synth_dataset(50, 3, 32, seed=0, noise=0.0)
    spec = np.abs(np.fft.fft2(ds.images[:, 0])) ** 2
    fy, fx = np.meshgrid(np.fft.fftfreq(32) * 32, np.fft.fftfreq(32) * 32, indexing="ij")
    radius = np.hypot(fy, fx)
    centroid = (spec * radius).sum(axis=(1, 2)) / spec.sum(axis=(1, 2))
    means = [centroid[ds.labels == c].mean() for c in range(3)]
    assert means[0] < means[1] < means[2]


def test_synth_errors():
    with pytest.raises(ParameterError):
        data.synth_dataset(10, 1, 16, 0)


def test_resize_and_flip():
    x = np.arange(2 * 3 * 4 * 4, dtype=np.float32).reshape(2, 3, 4, 4)
    assert data.resize_batch(x, 8).shape == (2, 3, 8, 8)
    assert data.resize_batch(x, 6).shape == (2, 3, 6, 6)
    assert data.resize_batch(x, 4) is x
    flipped = data.flip_batch(x, np.random.default_rng(0))
    for a, b in zip(x, flipped):
        assert np.array_equal(a, b) or np.array_equal(a[:, :, ::-1], b)


# -- training ----------------------------------------------------------------

def test_train_is_deterministic(tmp_path):
    r1, _ = train(tiny_model(), tiny_train(), out_dir=tmp_path / "a")
    r2, _ = train(tiny_model(), tiny_train(), out_dir=tmp_path / "b")
    assert r1.to_csv(include_time=False) == r2.to_csv(include_time=False)
    t1, _ = checkpoint.load_checkpoint(tmp_path / "a" / "checkpoint.ckpt")
    t2, _ = checkpoint.load_checkpoint(tmp_path / "b" / "checkpoint.ckpt")
    assert checkpoint.to_bytes(t1) == checkpoint.to_bytes(t2)
    assert (tmp_path / "a" / "run.csv").read_text().startswith(",".join(
        ["epoch", "train_loss", "train_acc", "eval_acc", "lr", "wall_time"]))
    assert (tmp_path / "a" / "model.txt").read_text().startswith("[config]")


def test_resume_matches_uninterrupted(tmp_path):
    full, full_model = train(tiny_model(), tiny_train())
    train(tiny_model(), tiny_train(), out_dir=tmp_path / "part", stop_after=2)
    resumed, resumed_model = train(tiny_model(), tiny_train(), resume=tmp_path / "part" / "checkpoint.ckpt")
    assert len(resumed.rows) == 4
    assert resumed.to_csv(include_time=False) == full.to_csv(include_time=False)
    assert checkpoint.to_bytes(resumed_model.state_dict()) == checkpoint.to_bytes(full_model.state_dict())


def test_loss_falls_by_epoch_three():
    record, _ = train(tiny_model(), tiny_train(epochs=3))
    assert record.rows[2]["train_loss"] < record.rows[0]["train_loss"]


def test_non_finite_loss_aborts():
    ds = data.synth_dataset(10, 2, 16, 0)
    ds.images[3] = np.nan
    with pytest.raises(DivergenceError, match="non-finite"):
        train(tiny_model(), tiny_train(), datasets=(ds, ds))


def test_lr_reaches_base_at_warmup_boundary():
    _, t = build_configs({"recipe": "full"})
    assert t.warmup_epochs == 5
    per_epoch = 98
    assert step_lr(t, 5 * per_epoch, per_epoch) == t.base_lr == 1e-4
    assert step_lr(t, 0, per_epoch) == 0.0


def test_run_record_csv_round_trip():
    rec = RunRecord()
    rec.add(epoch=1, train_loss=0.5, train_acc=0.75, eval_acc=float("nan"), lr=1e-3, wall_time=1.25)
    rec.add(epoch=2, train_loss=0.25, train_acc=1.0, eval_acc=0.9, lr=5e-4, wall_time=2.5)
    text = rec.to_csv()
    assert text.splitlines()[-1].startswith("final,0.25,1.0,0.9")
    assert RunRecord.from_csv(text).to_csv() == text
    with pytest.raises(ValueError):
        rec.add(epoch=4, train_loss=0, train_acc=0, eval_acc=0, lr=0, wall_time=0)


def test_train_config_errors():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=5, warmup_epochs=5).validate()
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(dataset="imagenet").validate()


# -- evaluation --------------------------------------------------------------

def test_evaluate_empty_dataset():
    m = build_model(tiny_model())
    empty = data.Dataset(np.zeros((0, 3, 16, 16), np.float32), np.zeros(0, np.int64))
    with pytest.raises(ParameterError):
        evaluate_model(m, empty)


def test_random_init_is_chance_level():
    ds = data.synth_dataset(30, 10, 16, seed=1)
    accs = [evaluate_model(build_model(tiny_model(seed=s, classes=10)), ds) for s in range(3)]
    assert abs(np.mean(accs) - 0.1) <= 0.03


def test_evaluate_checkpoint_round_trip(tmp_path):
    cfg = tiny_train()
    train_set = data.synth_dataset(20, 2, 16, 0)
    _, model = train(tiny_model(), cfg, out_dir=tmp_path, datasets=(train_set, train_set))
    loaded, _, meta = load_model(tmp_path / "checkpoint.ckpt")
    assert meta["epoch"] == "4"
    assert checkpoint.to_bytes(loaded.state_dict()) == checkpoint.to_bytes(model.state_dict())
    assert evaluate(tmp_path / "checkpoint.ckpt", train_set) == evaluate_model(model, train_set)


# -- sweeps --------------------------------------------------------------------

def sweep_model():
    return ModelConfig(graph_params=CPGraphParams(16, 8, 0.9, 0.5, 0.1), stem_width=16,
                       block_widths=(16, 32, 64, 128), image_size=8, num_classes=2)


def test_sweep_cells_core_fractions():
    cells = list(sweep_cells(["cp"], range(2, 15, 2), range(10), sweep_model()))
    assert len(cells) == 70
    fractions = sorted({c.graph_params.n_c / c.graph_params.n for _, c in cells})
    assert fractions == [0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875]
    with pytest.raises(ParameterError):
        list(sweep_cells(["ba"], [2], [0], sweep_model()))


@pytest.mark.slow
def test_sweep_csv_schema(tmp_path):
    t = TrainConfig(epochs=1, warmup_epochs=0, batch_size=8, synth_per_class=4)
    rows, agg = sweep(["cp"], range(2, 15, 2), range(10), sweep_model(), t, out_dir=tmp_path)
    assert len(rows) == 70 and len(agg) == 7
    assert all(a["runs"] == 10 for a in agg)
    run_csv = list(csv.DictReader(io.StringIO((tmp_path / "sweep.csv").read_text())))
    agg_csv = list(csv.DictReader(io.StringIO((tmp_path / "sweep_aggregate.csv").read_text())))
    assert list(run_csv[0]) == RUN_FIELDS and list(agg_csv[0]) == AGG_FIELDS
    assert len(run_csv) == 70 and len(agg_csv) == 7
    assert sorted({float(r["core_fraction"]) for r in agg_csv}) == [k / 8 for k in range(1, 8)]
    assert len(list((tmp_path).glob("cp_c*_s*/run.csv"))) == 70


def test_sweep_families_small(tmp_path):
    t = TrainConfig(epochs=1, warmup_epochs=0, batch_size=8, synth_per_class=4)
    rows, agg = sweep(["cp", "er", "ws"], [8], [0, 1], sweep_model(), t)
    assert [r["family"] for r in rows] == ["cp", "cp", "er", "er", "ws", "ws"]
    er_p, ws_k = matched_density_params(sweep_model().graph_params)
    ws_rows = [r for r in rows if r["family"] == "ws"]
    assert all(r["edges"] == 16 * ws_k // 2 for r in ws_rows)
    assert all(r["er_p"] == er_p for r in rows)


def test_er_matches_cp_edge_count():
    gp = CPGraphParams(16, 8, 0.9, 0.5, 0.1)
    cp = np.array([len(generate_graph("cp", gp, s).edges) for s in range(500)])
    er = np.array([len(generate_graph("er", gp, s).edges) for s in range(500)])
    se = np.sqrt(cp.var(ddof=1) / len(cp) + er.var(ddof=1) / len(er))
    assert abs(cp.mean() - er.mean()) < 3 * se


# -- configuration -------------------------------------------------------------

def test_parse_kv_and_build():
    kv = parse_kv("# comment\nn = 8\nn_core=4\nbase_width = 8\nepochs=3\nflip=false\nmodel_seed=2\n\n")
    m, t = build_configs(kv)
    assert m.graph_params.n == 8 and m.graph_params.n_c == 4
    assert m.block_widths == (8, 16, 32, 64) and m.seed == 2
    assert t.epochs == 3 and t.flip is False


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        parse_kv("just words")
    with pytest.raises(ConfigError):
        build_configs({"colour": "red"})
    with pytest.raises(ConfigError):
        build_configs({"epochs": "many"})
    with pytest.raises(ConfigError):
        load_kv_file(tmp_path / "missing.cfg")


def test_full_recipe_overridable():
    m, t = build_configs({"recipe": "full", "epochs": "2", "warmup_epochs": "1"})
    assert m.image_size == 224 and t.batch_size == 512 and t.epochs == 2
    assert t.dataset == "cifar10"
