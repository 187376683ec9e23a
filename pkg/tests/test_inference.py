import json

import numpy as np
import pytest

from gophormer.datasets import sbm
from gophormer.inference import (
    EvalReport,
    InferenceConfig,
    InfeasibleRequest,
    evaluate,
    full_ego_predict,
    full_graph_batch,
    full_graph_forward,
    full_graph_memory,
    multi_sample_predict,
    predict_egos,
)
from gophormer.model import Gophormer, ModelConfig
from gophormer.node2seq import ProximityIndex, SamplerConfig, full_ego_graph, inference_egos, sample_ego_graph

from conftest import make_graph, random_graph


def setup(g=None, num_global=1, seed=0, fanouts=(3, 2)):
    g = g if g is not None else random_graph(30, 0.15, seed=seed)
    scfg = SamplerConfig(fanouts=fanouts, num_global=num_global, master_seed=seed)
    model = Gophormer(ModelConfig(hidden=8, heads=2, init_seed=seed), g.feature_dim, g.num_classes, num_global, 3)
    for name, p in model.params.items():
        if name.endswith("prox_bias"):
            p.data[...] = np.random.default_rng(seed).normal(size=p.shape)
    return g, scfg, model, ProximityIndex(g, scfg)


def test_single_sample_matches_direct_prediction():
    g, scfg, model, index = setup()
    ego = inference_egos(g, 4, scfg, 1, seed=11)[0]
    direct = predict_egos(model, index, [ego], scfg)[0]
    assert np.array_equal(multi_sample_predict(model, index, 4, scfg, 1, seed=11), direct)


def test_isolated_node_all_modes_agree():
    g, scfg, model, index = setup(make_graph(4, [(1, 2), (2, 3)]))
    one = multi_sample_predict(model, index, 0, scfg, 1, seed=0)
    eight = multi_sample_predict(model, index, 0, scfg, 8, seed=3)
    full = full_ego_predict(model, index, 0, scfg)
    assert np.allclose(one, eight, atol=1e-15) and np.allclose(one, full, atol=1e-15)


def test_average_of_samples():
    g, scfg, model, index = setup()
    egos = inference_egos(g, 2, scfg, 5, seed=4)
    per = predict_egos(model, index, egos, scfg)
    avg = multi_sample_predict(model, index, 2, scfg, 5, seed=4)
    assert np.allclose(avg, per.mean(0), atol=1e-15)
    # convex combination
    assert np.all(avg >= per.min(0) - 1e-15) and np.all(avg <= per.max(0) + 1e-15)
    assert avg.sum() == pytest.approx(1.0)


def test_inference_seed_stream_disjoint_from_training():
    g, scfg, _, _ = setup(random_graph(60, 0.3, 2))
    # identical key numbers on different streams must not replay the training draws
    differs = 0
    for c in range(20):
        train = sample_ego_graph(g, c, scfg, (0, 0))
        infer = inference_egos(g, c, scfg, 1, seed=0)[0]
        differs += not np.array_equal(train.members, infer.members)
    assert differs > 10


def test_full_ego_superset_and_deterministic():
    star = make_graph(7, [(0, i) for i in range(1, 7)])
    g, scfg, model, index = setup(star, fanouts=(2, 2))
    sampled = sample_ego_graph(star, 0, scfg)
    full = full_ego_graph(star, 0, 1)
    assert len(full) == 7 > len(sampled)
    a = full_ego_predict(model, index, [0, 3], scfg)
    b = full_ego_predict(model, index, [0, 3], scfg)
    assert np.array_equal(a, b)


def test_full_ego_cap():
    g, scfg, model, index = setup(make_graph(7, [(0, i) for i in range(1, 7)]))
    with pytest.raises(InfeasibleRequest, match="8 tokens"):
        full_ego_predict(model, index, [0], scfg, token_cap=5)


def test_full_graph_sequence_length(triangle, capsys):
    g, scfg, model, index = setup(triangle, num_global=2)
    batch = full_graph_batch(index, scfg)
    assert batch.seq_len == 3 + 2
    assert "5 tokens" in capsys.readouterr().out
    probs = full_graph_forward(model, index, scfg, report=None)
    assert probs.shape == (3, 2) and np.allclose(probs.sum(1), 1)


def test_full_graph_cap_rejected():
    g, scfg, model, index = setup(random_graph(30, 0.1, 0))
    with pytest.raises(InfeasibleRequest, match="31 tokens"):
        full_graph_batch(index, scfg, token_cap=20, report=None)


def test_full_graph_memory_formula():
    est = full_graph_memory(2708, 1, 3)
    assert est["tokens"] == 2709
    assert est["proximity_bytes"] == 2709**2 * 3 * 8
    assert est["proximity_bytes"] == pytest.approx(176e6, rel=0.01)


class OracleModel:
    """Stands in for a trained model that always predicts the true label."""

    def __init__(self, graph):
        self.graph = graph
        self.num_classes = graph.num_classes
        self.params = {}

    def predict_proba(self, batch, features):
        out = np.zeros((batch.size, self.num_classes))
        out[np.arange(batch.size), self.graph.labels[batch.token_ids[:, 0]]] = 1.0
        return out


def test_evaluate_oracle_and_single_seed(tmp_path):
    g = sbm(num_nodes=60, seed=1)
    scfg = SamplerConfig()
    index = ProximityIndex(g, scfg)
    report = evaluate(OracleModel(g), index, "test", scfg, InferenceConfig(s_prime=2), seeds=[0, 1, 2])
    assert report.mean == 1.0 and report.std == 0.0 and not report.single_run
    single = evaluate(OracleModel(g), index, "test", scfg, InferenceConfig(s_prime=2), seeds=[0],
                      predictions_path=tmp_path / "p.jsonl")
    assert single.single_run and single.std == 0.0
    assert "single run" in single.summary()
    rows = [json.loads(x) for x in (tmp_path / "p.jsonl").read_text().splitlines()]
    assert len(rows) == len(g.nodes_in("test"))
    assert rows[0].keys() == {"node_id", "argmax_class", "probabilities"}


def test_evaluate_random_model_near_half():
    g = sbm(num_nodes=1000, p_in=0.01, p_out=0.01, seed=2, ratios=(0.2, 0.0, 0.8))
    g2, scfg, model, index = setup(g, seed=5)
    rng = np.random.default_rng(0)

    class Coin(OracleModel):
        def predict_proba(self, batch, features):
            return np.eye(2)[rng.integers(0, 2, batch.size)]

    report = evaluate(Coin(g), index, "test", scfg, InferenceConfig(s_prime=1))
    n = len(g.nodes_in("test"))
    assert abs(report.mean - 0.5) < 4 * np.sqrt(0.25 / n)


def test_evaluate_is_side_effect_free_and_fingerprinted():
    g = sbm(num_nodes=60, seed=1)
    _, scfg, model, index = setup(g)
    before = {k: v.data.tobytes() for k, v in model.params.items()}
    r1 = evaluate(model, index, "val", scfg, InferenceConfig(s_prime=2), seeds=[0, 1])
    assert {k: v.data.tobytes() for k, v in model.params.items()} == before
    r2 = evaluate(model, index, "val", scfg, InferenceConfig(s_prime=2), seeds=[0, 1])
    assert r1.fingerprint == r2.fingerprint and r1.accuracies == r2.accuracies
    r3 = evaluate(model, index, "val", scfg, InferenceConfig(s_prime=4), seeds=[0, 1])
    assert r3.fingerprint != r1.fingerprint
    assert all(0.0 <= a <= 1.0 for a in r1.accuracies)
    json.loads(r1.to_json())
    assert isinstance(r1, EvalReport)


def test_evaluate_deterministic_modes():
    g = sbm(num_nodes=60, seed=1)
    _, scfg, model, index = setup(g)
    for mode in ("full_ego", "full_graph"):
        r = evaluate(model, index, "test", scfg, InferenceConfig(mode=mode), seeds=[0, 1, 2])
        assert r.std == 0.0 and r.s_prime is None


def test_evaluate_empty_split():
    g, scfg, model, index = setup(make_graph(4, [(0, 1)]))
    with pytest.raises(ValueError, match="empty"):
        evaluate(model, index, "test", scfg, InferenceConfig())


def test_more_samples_lower_variance():
    g, scfg, model, index = setup(random_graph(60, 0.15, 1), seed=1)
    nodes = np.arange(10)

    def spread(k):
        runs = np.stack([multi_sample_predict(model, index, nodes, scfg, k, seed=100 + r) for r in range(100)])
        return runs.std(axis=0)  # [nodes, C]

    s1, s8 = spread(1), spread(8)
    assert np.all(s8 <= s1 + 1e-12)


def test_inference_config_validation():
    with pytest.raises(ValueError):
        InferenceConfig(mode="bogus")
    with pytest.raises(ValueError):
        InferenceConfig(s_prime=0)
