"""Train and test on Cora over several seeds; prints test accuracy mean ± std.

Usage: python scripts/run_cora.py [--data data/cora] [--seeds 0,1,2] [--epochs N] [--num-global 1] [--lam 1.0] [--out runs/cora]
"""
import argparse
import json
import time
from pathlib import Path

import numpy as np

from gophormer import config as config_mod
from gophormer.ablation import train_variant
from gophormer.datasets import load_dataset
from gophormer.inference import evaluate
from gophormer.presets import cora_config


def run(data="data/cora", seeds=(0, 1, 2), epochs=None, num_global=1, lam=1.0, out=None, log=print):
    cfg = cora_config(data)
    cfg.sampler.num_global = num_global
    cfg.train.lam = lam
    if epochs is not None:
        cfg.train.epochs = epochs
    g = load_dataset(cfg.data.resolve(), ratios=cfg.data.split_ratios, seed=cfg.data.split_seed,
                     use_split_file=cfg.data.use_split_file)
    accs, rows = [], []
    for seed in seeds:
        t0 = time.perf_counter()
        model, index, run_cfg, result = train_variant(g, cfg, seed)
        rep = evaluate(model, index, "test", run_cfg.sampler, run_cfg.inference, seeds=[seed])
        secs = time.perf_counter() - t0
        accs.append(rep.mean)
        rows.append({"seed": seed, "test_acc": rep.mean, "best_val": result.best_val,
                     "epochs": result.epochs_run, "seconds": round(secs, 1)})
        log(f"seed {seed}: test {rep.mean:.4f}  best val {result.best_val:.4f}  {result.epochs_run} epochs  {secs:.0f}s")
    if out:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        config_mod.save(cfg, out / "config.txt")
        (out / "results.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    log(f"test accuracy {np.mean(accs):.4f} ± {np.std(accs):.4f} over {len(accs)} seeds")
    return accs, rows


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data", default="data/cora")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--epochs", type=int)
    p.add_argument("--num-global", type=int, default=1)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--out", default="runs/cora")
    a = p.parse_args()
    run(a.data, [int(s) for s in a.seeds.split(",")], a.epochs, a.num_global, a.lam, a.out)


if __name__ == "__main__":
    main()
