import json

import numpy as np
import pytest

import misinfo_guard as mg

TINY = {
    "seed": 7,
    "corpus": ["desk.tsv"],
    "run_dir": "run",
    "model": {"n_layers": 1, "d_model": 16, "n_heads": 2, "d_ff": 32, "vocab_size": 400, "max_len": 48, "dropout": 0.0},
    "splits": {"stage2_target": 120},
    "train": {
        "lr": 0.003,
        "batch_size": 16,
        "accumulation_steps": 1,
        "fgm_epsilon": 0.1,
        "stages": [
            {"name": "Stage0", "split": "Stage0", "epochs": 1, "loss": "weighted_bce", "freeze_lowest_layers": 1},
            {"name": "Stage1", "split": "Stage1", "epochs": 1, "loss": "weighted_bce"},
            {"name": "Stage2", "split": "Stage2", "epochs": 2, "loss": "focal", "fgm": True},
        ],
    },
    "bench": {"warmup": 5},
    "desk": {"n_per_cell": 60},
}


def test_normalize_and_gates():
    text = "Check THIS &amp; @someone http://x.co/a #Tag"
    out = mg.normalize(text)
    assert out == "check this & [USER] [URL] [HASHTAG]"
    assert mg.normalize(out) == out
    assert mg.english_gate("the cat sat on the mat and it was fine")
    assert not mg.length_gate("too short", 10)
    assert len(mg.fingerprint(out)) == 16


def test_vocab_and_encode():
    v = mg.build_vocab(["the cat sat on the mat", "the dog sat"], 40)
    assert v.tokens[:4] == ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
    ids, mask = v.encode("the cat", 8)
    assert len(ids) == 8 and sum(mask) == 4
    assert ids[0] == v.tokens.index("[CLS]")


def test_losses_and_metrics():
    assert mg.focal_loss(0.5, 1) == pytest.approx(0.043322, abs=1e-6)
    assert mg.weighted_bce(0.5, 1, 1.0, 2.0) == pytest.approx(1.386294, abs=1e-6)
    rep = mg.evaluate([0.9, 0.8, 0.3, 0.6], [1, 1, 0, 0], 0.5)
    assert rep["accuracy"] == pytest.approx(0.75)
    assert mg.auroc([0.9, 0.4, 0.6, 0.1], [1, 1, 0, 0]) == 0.75
    tau, f1 = mg.calibrate_threshold([0.95, 0.9, 0.7, 0.65], [1, 1, 0, 0])
    assert (tau, f1) == (0.75, 1.0)
    assert [mg.nearest_rank(list(range(1, 101)), q) for q in (0.5, 0.9, 0.99)] == [50, 90, 99]


def test_quantize_rows_bound():
    w = np.random.default_rng(0).normal(scale=0.05, size=(8, 33)).astype(np.float32)
    q, scales = mg.quantize_rows(w)
    assert q.dtype == np.int8 and q.shape == w.shape
    err = np.abs(w.astype(np.float64) - q.astype(np.float64) * scales[:, None].astype(np.float64))
    assert np.all(err <= scales[:, None] / 2)
    assert np.all(np.abs(q).max(axis=1) == 127)


def test_config_errors_are_typed():
    with pytest.raises(mg.ConfigError, match="modle"):
        mg.RunConfig.parse('{"modle": {}}')
    with pytest.raises(mg.MguardError):
        mg.RunConfig.parse("[]")


def test_tiny_pipeline(tmp_path):
    (tmp_path / "config.json").write_text(json.dumps(TINY))
    cfg = mg.RunConfig.load(str(tmp_path / "config.json"))
    assert mg.desk_gen(cfg, str(tmp_path / "desk.tsv")) > 600
    prep = mg.prepare(cfg)
    assert prep["retained"] == 600
    out = mg.train(cfg)
    assert out["epochs"] == 4
    assert mg.quantize(cfg)["covered_ratio"] > 3.0
    report = mg.eval(cfg, "Test", True)
    assert set(report) >= {"accuracy", "macro_f1", "auroc", "tau"}
    bundle = mg.export_bundle(cfg)

    clf = mg.Classifier(str(bundle))
    post = "Officials confirmed that the bridge will be closed for repairs until the end of the month"
    verdicts = clf.classify([post, {"post_id": "b", "text": post.upper()}, "too short"])
    assert verdicts[0]["status"] in ("flagged", "clean")
    assert 0.0 <= verdicts[0]["p1"] <= 1.0
    assert verdicts[1]["status"] == "suppressed_duplicate" and verdicts[1]["p1"] is None
    assert verdicts[2]["status"] == "skipped_short"
    assert clf.seen_count == 1
    clf.reset()
    assert clf.classify([post])[0]["p1"] == verdicts[0]["p1"]

    with pytest.raises(mg.IoError):
        mg.Classifier(str(tmp_path / "missing"))
