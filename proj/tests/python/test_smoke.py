import math

import pytest

import gradmimic as gm

SMALL = """
[experiment]
name = denoise
[dataset]
num_classes = 3
per_class = 30
test_per_class = 30
noise_level = 0.3
[train]
batch_size = 10
epochs = 4
reference_epochs = 5
"""


def test_softmax_and_scores():
    w = gm.softmax([0.0, 0.0, 0.0, 0.0], 0.5)
    assert w == [0.25] * 4
    assert gm.mimic_score([0.0, 1.0], [3.0, 4.0]) == pytest.approx(-0.8, rel=1e-15)
    w = gm.normalize_scores([1.0, -1.0], 1.0)
    assert w[0] == pytest.approx(math.exp(1) / (math.exp(1) + math.exp(-1)), rel=1e-15)


def test_errors_map_to_python_exceptions():
    with pytest.raises(ValueError):
        gm.softmax([], 1.0)
    with pytest.raises(ValueError):
        gm.mimic_score([1.0, 2.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        gm.pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(RuntimeError, match="experiment.seed"):
        gm.run_experiment(SMALL)


def test_binarizers_and_aggregation():
    assert gm.binarize([0.3, 0.2, 0.25], "threshold", [4, 4, 4]) == [1, 0, 0]
    assert gm.binarize([0.1, 0.1, 0.9, 0.8], "kmeans") == [0, 0, 1, 1]
    assert gm.binarize([0.2, 0.2, 0.2, 0.2], "topk", topk_percent=50) == [1, 1, 0, 0]
    out = gm.aggregate_em([[1, 1, 1], [1, 1, 1], [0, 0, 0], [1, 1, 1], [0, 0, 0]])
    assert out["retained"] == [0, 1, 3]
    assert len(out["p_vote_given_retain"]) == 3


def test_blobs():
    x, y, flipped = gm.gen_blobs(num_classes=3, per_class=10, dim=4, noise_level=0.3, seed=1)
    assert len(x) == 30 and len(x[0]) == 4
    assert len(flipped) == 9
    assert set(y) <= {0, 1, 2}
    _, _, none = gm.gen_blobs(num_classes=3, per_class=10, dim=4, seed=1)
    assert none == []


def test_verify_theory():
    r = gm.verify_theory(50, 1)
    assert r["lemma1"]["trials"] == 50
    assert r["lemma1"]["max_rel_err"] < 1e-10
    assert r["lemma2"]["violations"] == 0
    assert r["theorem1"]["holds"] == r["theorem1"]["admissible"]


def test_experiment_is_deterministic():
    a = gm.run_experiment(SMALL, seed=3)
    b = gm.run_experiment(SMALL, seed=3)
    assert a == b
    assert a["experiment"] == "denoise"
    assert a["config_hash"] == gm.config_hash(SMALL, 3)
    assert 0.0 <= a["metrics"]["f1"] <= 1.0
    assert gm.run_experiment(SMALL, seed=4)["config_hash"] != a["config_hash"]


def test_cli_exit_codes():
    code, out, err = gm.run_cli(["verify-theory", "--trials", "5", "--seed", "2"])
    assert code == 0 and '"lemma1"' in out
    code, _, err = gm.run_cli(["bogus"])
    assert code == 1 and err
