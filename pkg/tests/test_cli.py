import json

import numpy as np
import pytest

from gophormer import config as config_mod
from gophormer.cli import main
from gophormer.config import RunConfig
from gophormer.datasets import load_dataset, sbm, write_dataset

FAST = [
    "--hidden", "8", "--heads", "2", "--fanouts", "3,2", "--epochs", "3",
    "--train-batch-size", "16", "--warmup-steps", "2", "--val-s-prime", "2", "--s-prime", "2",
]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data") / "sbm"
    write_dataset(d, sbm(num_nodes=60, seed=3))
    return d


def run(*argv):
    return main([str(a) for a in argv])


def test_ingest_prints_stats(data_dir, tmp_path, capsys):
    assert run("ingest", "--data", data_dir, "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "60 nodes" in out and "2 classes, 16 features" in out
    stats = json.loads((tmp_path / "stats.json").read_text())
    assert stats["nodes"] == 60


def test_ingest_missing_labels_exit_2(tmp_path, capsys):
    (tmp_path / "edges.txt").write_text("0 1\n")
    (tmp_path / "features.txt").write_text("1\n2\n")
    assert run("ingest", "--data", tmp_path) == 2
    assert str(tmp_path / "labels.txt") in capsys.readouterr().err


def test_ingest_ten_node_split(tmp_path, capsys):
    (tmp_path / "edges.txt").write_text("".join(f"{i} {i + 1}\n" for i in range(9)))
    (tmp_path / "features.txt").write_text("".join(f"{i}\n" for i in range(10)))
    (tmp_path / "labels.txt").write_text("".join(f"{i % 2}\n" for i in range(10)))
    assert run("ingest", "--data", tmp_path) == 0
    assert "split: train 6, val 2, test 2" in capsys.readouterr().out


def test_config_round_trip_and_overrides(tmp_path):
    cfg = RunConfig()
    cfg.sampler.fanouts = (5, 3)
    cfg.train.lam = 0.5
    cfg.model.use_proximity = False
    path = config_mod.save(cfg, tmp_path / "c.txt")
    back = config_mod.load(path)
    assert back == cfg
    with pytest.raises(KeyError):
        config_mod.apply_override(cfg, "train.nope", "1")
    with pytest.raises(ValueError, match="line 2"):
        config_mod.loads("train.lam = 1\nsampler.depth = x\n")
    with pytest.raises(ValueError):
        config_mod.loads("sampler.samples_per_node = 4\ntrain.batch_size = 2\n")


def test_data_root_env(tmp_path, monkeypatch):
    (tmp_path / "ds").mkdir()
    monkeypatch.setenv(config_mod.DATA_ROOT_ENV, str(tmp_path))
    monkeypatch.chdir(tmp_path / "ds")
    cfg = RunConfig()
    cfg.data.path = "ds"
    assert cfg.data.resolve() == tmp_path / "ds"


@pytest.fixture(scope="module")
def trained(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "a"
    assert run("train", "--data", data_dir, "--out", out, "--seed", "4", *FAST) == 0
    return out


def test_train_writes_run_directory(trained):
    for name in ("config.txt", "metrics.jsonl", "checkpoint.npz", "summary.json"):
        assert (trained / name).exists()
    cfg = config_mod.load(trained / "config.txt")
    assert cfg.sampler.master_seed == 4 and cfg.sampler.fanouts == (3, 2)
    recs = [json.loads(x) for x in (trained / "metrics.jsonl").read_text().splitlines()]
    assert any(r["val_acc"] is not None for r in recs)


def test_train_is_reproducible_from_config(trained, tmp_path):
    again = tmp_path / "b"
    assert run("train", "--config", trained / "config.txt", "--out", again) == 0

    def strip(p):
        return [{k: v for k, v in json.loads(x).items() if k != "wallclock_ms"} for x in p.read_text().splitlines()]

    assert strip(trained / "metrics.jsonl") == strip(again / "metrics.jsonl")
    a = np.load(trained / "checkpoint.npz")
    b = np.load(again / "checkpoint.npz")
    assert all(a[k].tobytes() == b[k].tobytes() for k in a.files)


def test_train_lambda_zero(data_dir, tmp_path):
    assert run("train", "--data", data_dir, "--out", tmp_path, "--lambda", "0", *FAST) == 0
    recs = [json.loads(x) for x in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    steps = [r for r in recs if r.get("loss") is not None]
    assert steps and all(r["loss"] == r["loss_sup"] for r in steps)


def test_eval_reports(trained, capsys):
    assert run("eval", "--run", trained, "--mode", "multi_sample", "--s-prime", "8", "--seeds", "0,1,2,3,4") == 0
    rep_dir = trained / "eval-test-multi_sample-s8"
    report = json.loads((rep_dir / "report.json").read_text())
    assert report["s_prime"] == 8 and len(report["accuracies"]) == 5
    assert "±" in (rep_dir / "report.txt").read_text()
    assert (rep_dir / "predictions.jsonl").exists()
    first = (rep_dir / "report.json").read_bytes()
    assert run("eval", "--run", trained, "--mode", "multi_sample", "--s-prime", "8", "--seeds", "0,1,2,3,4") == 0
    assert (rep_dir / "report.json").read_bytes() == first


def test_eval_full_graph_over_cap(trained, capsys):
    assert run("eval", "--run", trained, "--mode", "full_graph", "--token-cap", "10") == 3
    assert "61 tokens" in capsys.readouterr().err


def test_eval_missing_checkpoint(tmp_path):
    assert run("eval", "--checkpoint", tmp_path / "none.npz", "--data", tmp_path) == 2


def test_unknown_set_key_exit_2(data_dir):
    assert run("ingest", "--data", data_dir, "--set", "train.bogus=1") == 2


def test_sample_dump(tmp_path, capsys):
    (tmp_path / "edges.txt").write_text("1 2\n2 3\n")
    (tmp_path / "features.txt").write_text("1\n2\n3\n4\n")
    (tmp_path / "labels.txt").write_text("0\n1\n0\n1\n")
    assert run("sample", "--data", tmp_path, "--nodes", "0,2", "--samples", "3", "--dump", tmp_path / "d.jsonl") == 0
    recs = [json.loads(x) for x in (tmp_path / "d.jsonl").read_text().splitlines()]
    assert len(recs) == 6
    assert recs[0]["members"] == [0]
    first = (tmp_path / "d.jsonl").read_text()
    run("sample", "--data", tmp_path, "--nodes", "0,2", "--samples", "3", "--dump", tmp_path / "d.jsonl")
    assert (tmp_path / "d.jsonl").read_text() == first
    assert run("sample", "--data", tmp_path, "--nodes", "9") == 2


def test_bench_command(tmp_path, capsys):
    assert run("bench", "--sizes", "100,200", "--degree", "4", "--out", tmp_path, "--token-cap", "150") == 0
    rows = [json.loads(x) for x in (tmp_path / "bench.jsonl").read_text().splitlines()]
    assert [r["ego_tokens"] for r in rows] == [42, 42]
    assert rows[0]["full_feasible"] and rows[0]["full_forward_ms"] is not None
    assert not rows[1]["full_feasible"] and "infeasible" in rows[1]["note"]


def test_ablate_command(data_dir, tmp_path):
    argv = ["ablate", "--data", data_dir, "--out", tmp_path, "--seeds", "0", "--variants", "full,wo_PE,wo_CR", *FAST]
    assert run(*argv) == 0
    text = (tmp_path / "ablation.txt").read_text()
    for v in ("full", "wo_PE", "wo_CR"):
        assert v in text
    assert (tmp_path / "ablation.csv").read_text().startswith("variant,mean,std")


def test_dataset_round_trip(tmp_path):
    g = sbm(num_nodes=40, seed=1)
    write_dataset(tmp_path, g, with_split=True)
    back = load_dataset(tmp_path)
    assert np.array_equal(back.split, g.split)
    assert np.array_equal(back.indices, g.indices)
    assert np.allclose(back.features, g.features)


def test_workers_do_not_change_outputs(data_dir, tmp_path):
    for name, workers in (("w1", "1"), ("w3", "3")):
        assert run("train", "--data", data_dir, "--out", tmp_path / name, "--workers", workers, *FAST) == 0

    def strip(p):
        return [{k: v for k, v in json.loads(x).items() if k != "wallclock_ms"} for x in p.read_text().splitlines()]

    assert strip(tmp_path / "w1" / "metrics.jsonl") == strip(tmp_path / "w3" / "metrics.jsonl")
