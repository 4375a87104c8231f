"""Sweeps over graph family and core-node count.

Per-run CSV columns (``RUN_FIELDS``) and aggregate columns
(``AGG_FIELDS``) are fixed; readers should address them by name.
"""

from __future__ import annotations

import csv
import io
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from ..channel_mask import build_channel_mask, mask_density
from ..errors import ParameterError
from ..graph_gen import CPGraphParams, block_density_stats, matched_density_params
from ..model import ModelConfig, param_count
from .train import TrainConfig, load_datasets, train

FAMILIES = ("cp", "er", "ws")

RUN_FIELDS = [
    "family", "n", "n_core", "core_fraction", "er_p", "ws_k", "seed",
    "edges", "edge_density", "d_cc", "d_cp", "d_pp", "mask_density",
    "params_dense", "params_effective", "final_train_loss", "final_train_acc", "eval_acc",
]
AGG_FIELDS = [
    "family", "n_core", "core_fraction", "runs",
    "eval_acc_mean", "eval_acc_std", "edge_density_mean",
]


def sweep_cells(families, core_counts, seeds, base: ModelConfig):
    for family in families:
        if family not in FAMILIES:
            raise ParameterError(f"unknown graph family {family!r}")
    gp = base.graph_params
    for family in families:
        for n_c in core_counts:
            params = CPGraphParams(gp.n, n_c, gp.p_cc, gp.p_cp, gp.p_pp)
            for seed in seeds:
                yield family, replace(base, graph_params=params, graph_family=family, seed=seed, graph=None)


def run_cell(family: str, model_cfg: ModelConfig, train_cfg: TrainConfig, datasets=None, out_dir=None) -> dict:
    record, model = train(model_cfg, train_cfg, out_dir=out_dir, datasets=datasets)
    gp = model_cfg.graph_params
    g = model.graph
    stats = block_density_stats(g, gp.n_c)
    er_p, ws_k = matched_density_params(gp)
    width = model_cfg.block_widths[0]
    counts = param_count(model)
    last = record.summary()
    return {
        "family": family,
        "n": gp.n,
        "n_core": gp.n_c,
        "core_fraction": gp.n_c / gp.n,
        "er_p": er_p,
        "ws_k": ws_k,
        "seed": model_cfg.seed,
        "edges": len(g.edges),
        "edge_density": stats.overall,
        "d_cc": stats.d_cc,
        "d_cp": stats.d_cp,
        "d_pp": stats.d_pp,
        "mask_density": mask_density(build_channel_mask(model.constraint, width, width)),
        "params_dense": counts.dense,
        "params_effective": counts.effective,
        "final_train_loss": last["train_loss"],
        "final_train_acc": last["train_acc"],
        "eval_acc": last["eval_acc"],
    }


def _job(args):
    family, model_cfg, train_cfg, out_dir = args
    return run_cell(family, model_cfg, train_cfg, out_dir=out_dir)


def sweep(families, core_counts, seeds, model_cfg: ModelConfig, train_cfg: TrainConfig,
          out_dir=None, jobs: int = 1, datasets=None) -> tuple[list[dict], list[dict]]:
    """Train one model per (family, core count, seed); returns (rows, aggregate rows)."""
    cells = list(sweep_cells(families, core_counts, seeds, model_cfg))
    run_dirs = [None] * len(cells)
    if out_dir is not None:
        run_dirs = [Path(out_dir) / f"{fam}_c{cfg.graph_params.n_c}_s{cfg.seed}" for fam, cfg in cells]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            rows = list(pool.map(_job, [(f, c, train_cfg, d) for (f, c), d in zip(cells, run_dirs)]))
    else:
        if datasets is None:
            datasets = load_datasets(train_cfg, model_cfg.image_size)
        rows = [run_cell(f, c, train_cfg, datasets, d) for (f, c), d in zip(cells, run_dirs)]
    agg = aggregate(rows)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "sweep.csv").write_text(to_csv(rows, RUN_FIELDS))
        (Path(out_dir) / "sweep_aggregate.csv").write_text(to_csv(agg, AGG_FIELDS))
    return rows, agg


def aggregate(rows: list[dict]) -> list[dict]:
    cells: dict[tuple, list[dict]] = {}
    for row in rows:
        cells.setdefault((row["family"], row["n_core"]), []).append(row)
    out = []
    for (family, n_core), group in cells.items():
        accs = [r["eval_acc"] for r in group]
        out.append({
            "family": family,
            "n_core": n_core,
            "core_fraction": group[0]["core_fraction"],
            "runs": len(group),
            "eval_acc_mean": statistics.fmean(accs),
            "eval_acc_std": statistics.stdev(accs) if len(accs) > 1 else 0.0,
            "edge_density_mean": statistics.fmean(r["edge_density"] for r in group),
        })
    return out


def to_csv(rows: list[dict], names: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()
