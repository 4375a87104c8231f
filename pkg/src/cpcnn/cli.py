"""Command-line entry point: ``cpcnn <command> ...``.

On failure the last stderr line is a JSON object
``{"error": <kind>, "message": <text>}`` and the exit status is nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import graph_gen
from .channel_mask import build_channel_mask, mask_density, relational_bipartite
from .dag_compile import compile_block
from .errors import CPCNNError
from .graph_gen import CPGraphParams, Graph
from .harness import config as cfgmod
from .harness.sweep import AGG_FIELDS, sweep, to_csv
from .harness.train import evaluate_model, load_eval_set, load_model, train


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _configs(args):
    kv = cfgmod.load_kv_file(args.config) if args.config else {}
    kv.update(cfgmod.parse_kv("\n".join(args.set or []), "--set"))
    return cfgmod.build_configs(kv)


def cmd_graph_gen(args):
    params = CPGraphParams(args.n, args.n_core, args.p_cc, args.p_cp, args.p_pp)
    if args.family == "cp":
        g = graph_gen.generate_cp_graph(params, args.seed)
    elif args.family == "er":
        p = args.p if args.p is not None else graph_gen.matched_density_params(params)[0]
        g = graph_gen.generate_er_graph(args.n, p, args.seed)
    else:
        k = args.k if args.k is not None else graph_gen.matched_density_params(params)[1]
        g = graph_gen.generate_ws_graph(args.n, k, args.rewire, args.seed)
    _emit(g.to_text(), args.out)


def cmd_graph_stats(args):
    g = Graph.load(args.graph)
    n_c = args.n_core if args.n_core is not None else g.n_core
    s = graph_gen.block_density_stats(g, n_c)
    print(f"n={g.n} n_core={n_c} edges={len(g.edges)} d_cc={s.d_cc!r} d_cp={s.d_cp!r} "
          f"d_pp={s.d_pp!r} overall={s.overall!r}")


def cmd_compile(args):
    _emit(compile_block(Graph.load(args.graph), args.seed).to_text(), args.out)


def cmd_mask_dump(args):
    bc = relational_bipartite(Graph.load(args.graph))
    m = build_channel_mask(bc, args.in_channels, args.out_channels)
    _emit(m.to_text(), args.out)
    print(f"density={mask_density(m)!r}", file=sys.stderr)


def cmd_train(args):
    model_cfg, train_cfg = _configs(args)
    record, _ = train(model_cfg, train_cfg, out_dir=args.out, resume=args.resume, stop_after=args.stop_after)
    sys.stdout.write(record.to_csv())


def cmd_eval(args):
    model, _, meta = load_model(args.checkpoint)
    kv = {k[6:]: v for k, v in meta.items() if k.startswith("train.")}
    if args.config:
        kv.update(cfgmod.load_kv_file(args.config))
    kv.update(cfgmod.parse_kv("\n".join(args.set or []), "--set"))
    _, train_cfg = cfgmod.build_configs(kv)
    print(f"accuracy={evaluate_model(model, load_eval_set(train_cfg, model.cfg.image_size))!r}")


def cmd_sweep(args):
    model_cfg, train_cfg = _configs(args)
    families = args.families.split(",")
    cores = [int(c) for c in args.cores.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    _, agg = sweep(families, cores, seeds, model_cfg, train_cfg, out_dir=args.out, jobs=args.jobs)
    sys.stdout.write(to_csv(agg, AGG_FIELDS))


def cmd_gradcheck(args):
    from .engine.gradcheck import run_suite
    worst = run_suite(args.trials, args.seed)
    failed = False
    for name, err in worst.items():
        ok = err < args.tol
        failed |= not ok
        print(f"{name:24s} max_rel_err={err:.3e} {'PASS' if ok else 'FAIL'}")
    if failed:
        raise CPCNNError("gradient check failed")


class _Parser(argparse.ArgumentParser):
    """Usage errors also end with the JSON error line."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(json.dumps({"error": "usage", "message": f"{self.prog}: {message}"}), file=sys.stderr)
        sys.exit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cpcnn", description="Core-periphery guided CNN toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    graph = sub.add_parser("graph", help="generate or inspect graphs").add_subparsers(dest="graph_cmd", required=True)
    gen = graph.add_parser("gen")
    gen.add_argument("--family", choices=["cp", "er", "ws"], default="cp")
    gen.add_argument("--n", type=int, default=16)
    gen.add_argument("--n-core", type=int, default=8)
    gen.add_argument("--p-cc", type=float, default=0.9)
    gen.add_argument("--p-cp", type=float, default=0.5)
    gen.add_argument("--p-pp", type=float, default=0.1)
    gen.add_argument("--p", type=float, help="ER edge probability (default: matched to the CP parameters)")
    gen.add_argument("--k", type=int, help="WS neighbour count (default: matched to the CP parameters)")
    gen.add_argument("--rewire", type=float, default=0.5)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("-o", "--out")
    gen.set_defaults(func=cmd_graph_gen)
    stats = graph.add_parser("stats")
    stats.add_argument("graph")
    stats.add_argument("--n-core", type=int)
    stats.set_defaults(func=cmd_graph_stats)

    comp = sub.add_parser("compile", help="compile a graph into a block DAG")
    comp.add_argument("graph")
    comp.add_argument("--seed", type=int, default=0)
    comp.add_argument("-o", "--out")
    comp.set_defaults(func=cmd_compile)

    mask = sub.add_parser("mask").add_subparsers(dest="mask_cmd", required=True)
    dump = mask.add_parser("dump")
    dump.add_argument("graph")
    dump.add_argument("--in-channels", type=int, required=True)
    dump.add_argument("--out-channels", type=int, required=True)
    dump.add_argument("-o", "--out")
    dump.set_defaults(func=cmd_mask_dump)

    def add_cfg(sp):
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    tr = sub.add_parser("train")
    add_cfg(tr)
    tr.add_argument("--out", help="directory for checkpoint.ckpt, run.csv and model.txt")
    tr.add_argument("--resume", help="checkpoint to continue from")
    tr.add_argument("--stop-after", type=int, help="stop after this many epochs")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval")
    ev.add_argument("checkpoint")
    add_cfg(ev)
    ev.set_defaults(func=cmd_eval)

    sw = sub.add_parser("sweep")
    add_cfg(sw)
    sw.add_argument("--families", default="cp")
    sw.add_argument("--cores", default="2,4,6,8,10,12,14")
    sw.add_argument("--seeds", default="0,1,2")
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--out")
    sw.set_defaults(func=cmd_sweep)

    gc = sub.add_parser("gradcheck")
    gc.add_argument("--trials", type=int, default=20)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except CPCNNError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc)}), file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
