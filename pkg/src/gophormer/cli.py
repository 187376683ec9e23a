"""Command-line entry point: ingest, train, eval, ablate, bench, sample.

Exit codes: 0 ok, 2 input error, 3 infeasible request, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import config as config_mod
from .ablation import SUITE, format_table, run_ablation, to_csv
from .autodiff import NonFiniteError
from .bench import bench, format_bench
from .config import RunConfig
from .datasets import load_dataset
from .graph import GraphFormatError
from .inference import InfeasibleRequest, evaluate
from .model import Gophormer, load_checkpoint, save_checkpoint
from .node2seq import ProximityIndex, sample_ego_graph
from .training import TrainingDiverged, fit

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("gophormer")


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file (e.g. a run's config.txt)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--data", help="dataset directory (edges.txt, features.txt, labels.txt)")
    p.add_argument("--out", help="run / output directory")
    p.add_argument("--seed", type=int, help="seed for sampling, init and training")
    p.add_argument("--lambda", dest="lam_alias", help="consistency weight (train.lam)")
    p.add_argument("--workers", type=int)
    keys = list(config_mod.fields_of(RunConfig()))
    names = [f for _, _, f, _ in keys]
    reserved = {"config", "set", "data", "out", "seed", "lambda", "workers"}
    for key, _, f, _ in keys:
        if key in ("out_dir", "workers"):
            continue
        p.add_argument(f"--{key}", dest=f"cfg:{key}", metavar="V", help=argparse.SUPPRESS)
        alias = f.replace("_", "-")
        if names.count(f) > 1:
            # ambiguous field names get the section as prefix, e.g. --train-batch-size
            alias = key.replace(".", "-").replace("_", "-")
        if alias not in reserved:
            p.add_argument(f"--{alias}", dest=f"cfg:{key}", metavar="V", help=key)


def resolve_config(args) -> RunConfig:
    cfg = config_mod.load(args.config) if getattr(args, "config", None) else RunConfig()
    for item in args.set:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        config_mod.apply_override(cfg, k.strip(), v)
    if args.seed is not None:
        cfg.set_seed(args.seed)
    for dest, value in vars(args).items():
        if dest.startswith("cfg:") and value is not None:
            config_mod.apply_override(cfg, dest[4:], value)
    if args.lam_alias is not None:
        config_mod.apply_override(cfg, "train.lam", args.lam_alias)
    if args.data:
        cfg.data.path = args.data
    if args.out:
        cfg.out_dir = args.out
    if args.workers:
        cfg.workers = args.workers
    config_mod.validate(cfg)
    return cfg


def _load_graph(cfg: RunConfig):
    return load_dataset(
        cfg.data.resolve(), ratios=cfg.data.split_ratios, seed=cfg.data.split_seed, use_split_file=cfg.data.use_split_file
    )


# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    cfg = resolve_config(args)
    g = _load_graph(cfg)
    sizes = g.split_sizes()
    print(f"{g.num_nodes} nodes, {g.num_edges} edges, {g.num_classes} classes, {g.feature_dim} features")
    print(f"split: train {sizes['train']}, val {sizes['val']}, test {sizes['test']}")
    if g.meta.get("self_loops_dropped"):
        print(f"dropped {g.meta['self_loops_dropped']} self-loops")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        stats = {
            "nodes": g.num_nodes,
            "edges": g.num_edges,
            "classes": g.num_classes,
            "features": g.feature_dim,
            "split": sizes,
        }
        (out / "stats.json").write_text(json.dumps(stats, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.out_dir)
    config_mod.save(cfg, out / "config.txt")
    g = _load_graph(cfg)
    index = ProximityIndex(g, cfg.sampler)
    model = Gophormer(cfg.model, g.feature_dim, g.num_classes, cfg.sampler.num_global, cfg.sampler.proximity_views)
    try:
        result = fit(g, model, cfg.sampler, cfg.train, index=index, log_path=out / "metrics.jsonl", workers=cfg.workers, progress=True)
    except TrainingDiverged as exc:
        if exc.best_state is not None:
            model.load_state(exc.best_state)
            save_checkpoint(out / "checkpoint.npz", model, {"diverged": True})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    model.load_state(result.best_state)
    save_checkpoint(out / "checkpoint.npz", model, {"best_val": result.best_val, "epochs": result.epochs_run})
    summary = {"best_val": result.best_val, "epochs": result.epochs_run, "steps": result.state.step}
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(f"trained {result.epochs_run} epochs, best val acc {result.best_val:.4f} -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.run:
        run = Path(args.run)
        if args.config is None:
            args.config = str(run / "config.txt")
        checkpoint = Path(args.checkpoint) if args.checkpoint else run / "checkpoint.npz"
    else:
        if not args.checkpoint:
            raise ValueError("eval needs --run DIR or --checkpoint FILE")
        checkpoint = Path(args.checkpoint)
        run = checkpoint.parent
    cfg = resolve_config(args)
    if not checkpoint.exists():
        raise GraphFormatError(f"{checkpoint}: checkpoint not found")
    model, _ = load_checkpoint(checkpoint)
    g = _load_graph(cfg)
    index = ProximityIndex(g, cfg.sampler)
    seeds = _int_list(args.seeds)
    tag = cfg.inference.mode + (f"-s{cfg.inference.s_prime}" if cfg.inference.mode == "multi_sample" else "")
    report_dir = Path(args.report_dir) if args.report_dir else run / f"eval-{args.split}-{tag}"
    report_dir.mkdir(parents=True, exist_ok=True)
    report = evaluate(model, index, args.split, cfg.sampler, cfg.inference, seeds, predictions_path=report_dir / "predictions.jsonl")
    report.predictions_path = "predictions.jsonl"
    (report_dir / "report.json").write_text(report.to_json() + "\n")
    (report_dir / "report.txt").write_text(report.summary() + "\n")
    print(report.summary())
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.out_dir)
    config_mod.save(cfg, out / "config.txt")
    g = _load_graph(cfg)
    suite = args.variants.split(",") if args.variants else list(SUITE)
    rows = run_ablation(g, cfg, seeds=_int_list(args.seeds), suite=suite, split=args.split)
    table = format_table(rows)
    (out / "ablation.txt").write_text(table)
    (out / "ablation.csv").write_text(to_csv(rows))
    print(table, end="")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = resolve_config(args)
    rows = bench(
        sizes=_int_list(args.sizes),
        sampler=cfg.sampler,
        model_cfg=cfg.model,
        degree=args.degree,
        token_cap=cfg.inference.token_cap,
        memory_budget=args.memory_budget,
        time_full=not args.no_full_timing,
    )
    text = format_bench(rows)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.txt").write_text(text)
        with open(out / "bench.jsonl", "w") as fh:
            for r in rows:
                fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = resolve_config(args)
    g = _load_graph(cfg)
    S = args.samples if args.samples is not None else cfg.sampler.samples_per_node
    lines = []
    for node in _int_list(args.nodes):
        if not 0 <= node < g.num_nodes:
            raise GraphFormatError(f"node {node} outside [0, {g.num_nodes})")
        for s in range(S):
            ego = sample_ego_graph(g, node, cfg.sampler, (args.epoch, s))
            rec = {"center": node, "epoch": args.epoch, "sample": s, "members": ego.members.tolist(), "hops": ego.hops.tolist()}
            lines.append(json.dumps(rec))
    text = "\n".join(lines) + "\n"
    if args.dump:
        Path(args.dump).parent.mkdir(parents=True, exist_ok=True)
        Path(args.dump).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gophormer", description="Ego-graph transformer for node classification")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a dataset directory and print its statistics")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model into a run directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_flags(p)
    p.add_argument("--run", help="run directory holding config.txt and checkpoint.npz")
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--seeds", default="0", help="comma-separated inference seeds")
    p.add_argument("--report-dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation suite")
    _add_config_flags(p)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--variants", help=f"comma-separated subset of {','.join(SUITE)}")
    p.add_argument("--split", default="test", choices=("val", "test"))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="ego vs full-graph scaling table on random regular graphs")
    _add_config_flags(p)
    p.add_argument("--sizes", default="1000,2000,4000,8000")
    p.add_argument("--degree", type=int, default=10)
    p.add_argument("--memory-budget", type=float, default=1.0e9, help="bytes allowed for a timed full-graph pass")
    p.add_argument("--no-full-timing", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sample", help="dump sampled ego-graphs as JSON lines")
    _add_config_flags(p)
    p.add_argument("--nodes", required=True, help="comma-separated center ids")
    p.add_argument("--samples", type=int, help="samples per node (default: sampler.samples_per_node)")
    p.add_argument("--epoch", type=int, default=0)
    p.add_argument("--dump", help="write records here instead of stdout")
    p.set_defaults(func=cmd_sample)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InfeasibleRequest as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (TrainingDiverged, NonFiniteError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GraphFormatError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
