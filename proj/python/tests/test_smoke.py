import math

import numpy as np
import pytest

import discrete_units as du


def test_softmax_and_layer_norm():
    w = du.softmax_weights([math.log(2.0), 0.0])
    assert w == pytest.approx([2 / 3, 1 / 3], abs=1e-15)
    out = du.layer_norm([1.0, 3.0])
    assert out == pytest.approx([-1 / math.sqrt(1 + 1e-5), 1 / math.sqrt(1 + 1e-5)], abs=1e-12)


def test_weighted_sum_one_hot_selects_layer():
    rng = np.random.default_rng(0)
    stack = rng.normal(size=(3, 4, 2)).astype(np.float32)
    out = du.weighted_sum(stack, [-1000.0, 1000.0, -1000.0])
    np.testing.assert_allclose(out, stack[1], rtol=0, atol=1e-12)


def test_ctc_two_frames():
    # Two frames, blank + one symbol, uniform: 3 of 4 paths collapse to [1].
    loss = du.ctc_loss(np.zeros((2, 2)), [1])
    assert loss == pytest.approx(-math.log(0.75), abs=1e-12)
    g = du.ctc_grad(np.zeros((2, 2)), [1])
    np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-12)
    with pytest.raises(du.InfeasibleError):
        du.ctc_loss(np.zeros((1, 2)), [1, 1])


def test_kmeans_small_case():
    cb, history = du.kmeans_train(np.array([[0.0], [1.0], [9.0], [10.0]]), k=2)
    assert sorted(cb.centroids[:, 0].tolist()) == [0.5, 9.5]
    assert history[-1] == 1.0
    assert du.assign(np.array([[0.2], [9.9]]), cb) != [0, 0]


def test_tokens_roundtrip():
    assert du.dedup([5, 5, 3, 3, 3, 5]) == [5, 3, 5]
    model = du.bpe_train([[1, 2, 1, 2, 3]], 4, 1)
    assert du.bpe_encode([1, 2, 1, 2, 3], model) == [4, 4, 3]
    assert du.bpe_decode([4, 4, 3], model) == [1, 2, 1, 2, 3]
    assert du.bitrate([[0] * 100], 1024, 10.0) == pytest.approx(100.0)


def test_metrics():
    assert du.levenshtein("kitten", "sitting") == 3
    assert du.corpus_cer([("abc", "axc"), ("ab", "ab")]) == pytest.approx(20.0)
    assert du.gap_report(15.6, 16.9) == pytest.approx(8.333, abs=0.01)
    with pytest.raises(du.ArgumentError):
        du.gap_report(0.0, 1.0)


def test_archive_roundtrip(tmp_path):
    utts, transcripts = du.synth_generate(num_utts=5, num_layers=2, planted_layer=1, feature_dim=3)
    assert set(utts) == set(transcripts)
    path = tmp_path / "a.dsua"
    du.save_archive(utts, path)
    back = du.load_archive(path)
    assert list(back) == list(utts)
    for k in utts:
        np.testing.assert_array_equal(back[k], utts[k])
    with pytest.raises(du.FormatError):
        (tmp_path / "bad.dsua").write_bytes(b"NOPE")
        du.load_archive(tmp_path / "bad.dsua")


def test_pipeline_report(tmp_path):
    settings = {
        "synth_layers": "3",
        "synth_planted": "2",
        "synth_dim": "8",
        "synth_classes": "5",
        "synth_utts": "60",
        "kmeans_k": "5",
        "bpe_merges": "5",
        "seed": "1",
    }
    report = du.run_pipeline(tmp_path / "run", settings)
    assert report["weights_frozen"] == "1"
    assert report["weight_argmax"] == "2"
    assert (tmp_path / "run" / "report.txt").read_text().startswith("mode=finetuned\n")
