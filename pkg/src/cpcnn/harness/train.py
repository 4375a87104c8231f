"""Training and evaluation loops."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .. import seeding
from ..engine import checkpoint as ckpt
from ..engine.ops import softmax_cross_entropy
from ..engine.optim import AdamW, lr_schedule
from ..engine.tensor import Tape, Tensor
from ..errors import ConfigError, DivergenceError, ParameterError
from ..model import Model, ModelConfig, build_model
from .data import Dataset, default_data_root, flip_batch, load_cifar10, resize_batch, synth_dataset

log = logging.getLogger(__name__)

_SHUFFLE_KEY = 20
_FLIP_KEY = 21


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    base_lr: float = 1e-3
    warmup_epochs: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    seed: int = 0
    dataset: str = "synth"
    data_root: str = ""
    train_limit: int = 0
    test_limit: int = 0
    synth_per_class: int = 100
    synth_classes: int = 2
    synth_noise: float = 0.5
    flip: bool = True
    eval_every: int = 1

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(f"warmup_epochs ({self.warmup_epochs}) must be below epochs ({self.epochs})")
        if self.dataset not in ("synth", "cifar10"):
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        seeding.check_seed(self.seed)

    def to_flat(self) -> dict[str, str]:
        return {k: repr(v) if isinstance(v, float) else str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "TrainConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name in flat:
                kwargs[f.name] = coerce(f.type, flat[f.name], f.name)
        return cls(**kwargs)


def full_scale_recipe() -> tuple[dict, dict]:
    """Overrides reproducing the full-scale CIFAR-10 recipe (224 px, batch 512, 50 epochs)."""
    model = {"image_size": 224}
    train = {"epochs": 50, "batch_size": 512, "base_lr": 1e-4, "warmup_epochs": 5, "dataset": "cifar10"}
    return model, train


def coerce(type_name, value: str, key: str):
    type_name = type_name if isinstance(type_name, str) else type_name.__name__
    try:
        if type_name == "bool":
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if type_name == "int":
            return int(value)
        if type_name == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {type_name}") from None
    return value


RECORD_FIELDS = ["epoch", "train_loss", "train_acc", "eval_acc", "lr", "wall_time"]


@dataclass
class RunRecord:
    rows: list = field(default_factory=list)

    def add(self, **row):
        if self.rows and row["epoch"] != self.rows[-1]["epoch"] + 1:
            raise ValueError("epoch index must increase by one per row")
        self.rows.append(row)

    def summary(self) -> dict:
        return dict(self.rows[-1]) if self.rows else {}

    def to_csv(self, include_time: bool = True) -> str:
        names = RECORD_FIELDS if include_time else RECORD_FIELDS[:-1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names)
        for row in self.rows:
            w.writerow([_fmt(row[k]) for k in names])
        if self.rows:
            w.writerow(["final"] + [_fmt(self.rows[-1][k]) for k in names[1:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RunRecord":
        rec = cls()
        for row in csv.DictReader(io.StringIO(text)):
            if row["epoch"] == "final":
                continue
            rec.rows.append({
                "epoch": int(row["epoch"]),
                **{k: float(row[k]) for k in RECORD_FIELDS[1:] if k in row},
            })
            rec.rows[-1].setdefault("wall_time", 0.0)
        return rec


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def load_eval_set(cfg: TrainConfig, image_size: int) -> Dataset:
    if cfg.dataset == "cifar10":
        return load_cifar10(cfg.data_root or default_data_root(), "test", cfg.test_limit or None)
    return synth_dataset(max(1, cfg.synth_per_class // 4), cfg.synth_classes, image_size,
                         seeding.child_seed(cfg.seed, 1), cfg.synth_noise)


def load_datasets(cfg: TrainConfig, image_size: int) -> tuple[Dataset, Dataset]:
    if cfg.dataset == "cifar10":
        train = load_cifar10(cfg.data_root or default_data_root(), "train", cfg.train_limit or None)
    else:
        train = synth_dataset(cfg.synth_per_class, cfg.synth_classes, image_size, cfg.seed, cfg.synth_noise)
    return train, load_eval_set(cfg, image_size)


def steps_per_epoch(n_items: int, batch_size: int) -> int:
    # the trailing partial batch is dropped unless it is the only one
    return max(1, n_items // batch_size)


def step_lr(cfg: TrainConfig, step: int, per_epoch: int) -> float:
    return lr_schedule(step, cfg.epochs * per_epoch, cfg.warmup_epochs * per_epoch, cfg.base_lr)


def evaluate_model(model: Model, ds: Dataset, batch_size: int = 256) -> float:
    if len(ds) == 0:
        raise ParameterError("cannot evaluate on an empty dataset")
    was = model.training
    model.eval()
    correct = 0
    for start in range(0, len(ds), batch_size):
        x = resize_batch(ds.images[start : start + batch_size], model.cfg.image_size)
        logits = model(Tensor(x.astype(model.dtype)))
        correct += int(np.sum(logits.data.argmax(axis=1) == ds.labels[start : start + batch_size]))
    model.training = was
    return correct / len(ds)


def _optimizer_state(model: Model, opt: AdamW) -> dict:
    out = {}
    names = [n for n, _ in model.named_parameters()]
    for name, m, v in zip(names, opt.state.exp_avg, opt.state.exp_avg_sq):
        out[f"optim.exp_avg.{name}"] = m
        out[f"optim.exp_avg_sq.{name}"] = v
    return out


def save_run_checkpoint(path, model: Model, opt: AdamW | None, train_cfg: TrainConfig | None,
                        epoch: int, record: RunRecord | None) -> None:
    tensors = model.state_dict()
    meta = {f"model.{k}": v for k, v in model.cfg.to_flat().items()}
    meta["epoch"] = str(epoch)
    if train_cfg is not None:
        meta.update({f"train.{k}": v for k, v in train_cfg.to_flat().items()})
    if opt is not None and opt.state.exp_avg:
        tensors.update(_optimizer_state(model, opt))
        meta["optim.step"] = str(opt.state.step)
    if record is not None:
        meta["record"] = record.to_csv().replace("\n", "|")
    ckpt.save_checkpoint(path, tensors, meta)


def load_model(path) -> tuple[Model, dict, dict]:
    tensors, meta = ckpt.load_checkpoint(path)
    cfg = ModelConfig.from_flat({k[6:]: v for k, v in meta.items() if k.startswith("model.")})
    model = build_model(cfg)
    model.load_state_dict(tensors)
    return model, tensors, meta


def evaluate(checkpoint_path, ds: Dataset) -> float:
    model, _, _ = load_model(checkpoint_path)
    return evaluate_model(model, ds)


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, out_dir=None, resume=None,
          datasets: tuple[Dataset, Dataset] | None = None, stop_after: int | None = None):
    """Train a model; returns ``(RunRecord, Model)``.

    ``resume`` is a checkpoint written by an earlier call with the same
    configs.  ``stop_after`` ends the run after that many epochs (counted
    from the start of training, not from the resume point) while keeping
    the schedule of the full ``train_cfg.epochs`` run.
    """
    train_cfg.validate()
    model = build_model(model_cfg)
    train_set, eval_set = datasets if datasets is not None else load_datasets(train_cfg, model_cfg.image_size)
    if len(train_set) == 0:
        raise ParameterError("training set is empty")
    opt = AdamW(model.parameters(), lr=0.0, betas=(train_cfg.beta1, train_cfg.beta2),
                eps=train_cfg.eps, weight_decay=train_cfg.weight_decay)
    record = RunRecord()
    start_epoch = 0
    if resume is not None:
        tensors, meta = ckpt.load_checkpoint(resume)
        model.load_state_dict(tensors)
        names = [n for n, _ in model.named_parameters()]
        if "optim.step" in meta:
            opt.state.step = int(meta["optim.step"])
            opt.state.exp_avg = [tensors[f"optim.exp_avg.{n}"].copy() for n in names]
            opt.state.exp_avg_sq = [tensors[f"optim.exp_avg_sq.{n}"].copy() for n in names]
        start_epoch = int(meta["epoch"])
        if "record" in meta:
            record = RunRecord.from_csv(meta["record"].replace("|", "\n"))

    per_epoch = steps_per_epoch(len(train_set), train_cfg.batch_size)
    last_epoch = train_cfg.epochs if stop_after is None else min(stop_after, train_cfg.epochs)
    bs = min(train_cfg.batch_size, len(train_set))
    t0 = time.perf_counter()
    model.train()
    for epoch in range(start_epoch, last_epoch):
        order = seeding.stream(train_cfg.seed, _SHUFFLE_KEY, epoch).permutation(len(train_set))
        flip_rng = seeding.stream(train_cfg.seed, _FLIP_KEY, epoch)
        loss_sum = 0.0
        correct = seen = 0
        lr = 0.0
        for i in range(per_epoch):
            idx = order[i * bs : (i + 1) * bs]
            x = train_set.images[idx]
            if train_cfg.flip:
                x = flip_batch(x, flip_rng)
            x = resize_batch(x, model_cfg.image_size).astype(model.dtype)
            y = train_set.labels[idx]
            step = epoch * per_epoch + i
            lr = step_lr(train_cfg, step, per_epoch)
            with Tape() as tape:
                logits = model(Tensor(x))
                loss = softmax_cross_entropy(logits, y)
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss {value} at epoch {epoch + 1}, step {step}")
            model.zero_grad()
            tape.backward(loss)
            opt.step(lr)
            loss_sum += value * len(idx)
            correct += int(np.sum(logits.data.argmax(axis=1) == y))
            seen += len(idx)
        eval_acc = float("nan")
        if len(eval_set) and ((epoch + 1) % train_cfg.eval_every == 0 or epoch + 1 == last_epoch):
            eval_acc = evaluate_model(model, eval_set)
        record.add(epoch=epoch + 1, train_loss=loss_sum / seen, train_acc=correct / seen,
                   eval_acc=eval_acc, lr=lr, wall_time=time.perf_counter() - t0)
        log.info("epoch %d loss %.4f train_acc %.4f eval_acc %.4f lr %.3g",
                 epoch + 1, loss_sum / seen, correct / seen, eval_acc, lr)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_run_checkpoint(out / "checkpoint.ckpt", model, opt, train_cfg, last_epoch, record)
        (out / "run.csv").write_text(record.to_csv())
        (out / "model.txt").write_text(model.describe())
    return record, model

