import filecmp
import json
import os

import numpy as np
import pytest

from accent_tts import cli, corpus

TINY = json.dumps({"n_blocks": 1, "hidden_dim": 8, "n_heads": 2, "ffn_dim": 8, "accent_dim": 4,
                   "intensity_dim": 4, "predictor_channels": 8, "gru_hidden": 4})


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    if mismatch or errors:
        return False
    return all(same_tree(os.path.join(a, d), os.path.join(b, d)) for d in cmp.common_dirs)


def gen(out, seed=7):
    return cli.run(["gen-corpus", "--out", str(out), "--seed", str(seed), "--n-speakers", "2",
                    "--n-accents", "2", "--utterances-per-speaker", "10"])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    d = {k: str(root / k) for k in ("c", "f", "r", "lab", "lab2", "tts", "syn", "ev", "pl")}
    assert gen(d["c"]) == 0
    assert cli.run(["extract-features", "--out", d["f"], "--corpus", d["c"]]) == 0
    assert cli.run(["train-ranker", "--out", d["r"], "--features", d["f"]]) == 0
    assert cli.run(["label-intensity", "--out", d["lab"], "--corpus", d["c"]]) == 0
    assert cli.run(["label-intensity", "--out", d["lab2"], "--corpus", d["c"],
                    "--ranker", os.path.join(d["lab"], "ranker.json")]) == 0
    assert cli.run(["train-tts", "--out", d["tts"], "--corpus", d["lab"], "--max-utterances", "4",
                    "--model", TINY, "--steps", "2", "--batch-size", "2", "--log-every", "0"]) == 0
    ckpt = os.path.join(d["tts"], "model.cait")
    assert cli.run(["synthesize", "--out", d["syn"], "--checkpoint", ckpt, "--corpus", d["lab"],
                    "--utterance", "spk00_u0000", "--sweep", "0.1:0.9:0.4"]) == 0
    assert cli.run(["evaluate", "--out", d["ev"], "--checkpoint", ckpt, "--corpus", d["lab"],
                    "--max-utterances", "1"]) == 0
    assert cli.run(["plot", "--out", d["pl"], "--history", os.path.join(d["tts"], "history.json"),
                    "--report", os.path.join(d["ev"], "report.json"), "--corpus", d["c"],
                    "--utterance", "spk00_u0000"]) == 0
    return d


def test_pipeline_outputs(pipeline):
    d = pipeline
    for k, names in {"f": ["features_L1.tsv", "features_L2.tsv"], "r": ["ranker.json"],
                     "lab": ["ranker.json", corpus.LABELED_MANIFEST], "tts": ["model.cait", "history.json"],
                     "ev": ["report.json"],
                     "pl": ["loss_curves.svg", "confusion_coarse.svg", "confusion_fine.svg", "pitch_contours.svg"]
                     }.items():
        for n in names:
            assert os.path.exists(os.path.join(d[k], n)), (k, n)
        assert os.path.exists(os.path.join(d[k], cli.CONFIG_NAME))
    syn = json.load(open(os.path.join(d["syn"], "synthesis.json")))
    assert [s["intensity"] for s in syn] == [0.1, 0.5, 0.9]
    for s in syn:
        mel = np.load(os.path.join(d["syn"], s["file"]))
        assert mel.shape == (sum(s["durations"]), 80)
        assert 0 < s["predicted_intensity"] < 1
    report = json.load(open(os.path.join(d["ev"], "report.json")))
    assert report["n_utterances"] == 1
    assert np.sum(report["confusion_coarse"]) == 9


def test_labeled_corpus_loads(pipeline, audio_cfg):
    m = corpus.load_corpus(pipeline["lab"], audio_cfg)
    labels = [r.intensity_label for r in m.by_domain("L2")]
    assert len(labels) == 20 and all(0 < x < 1 for x in labels)


def test_ranker_reuse_reproduces_labels(pipeline, audio_cfg):
    a = corpus.load_corpus(pipeline["lab"], audio_cfg)
    b = corpus.load_corpus(pipeline["lab2"], audio_cfg)
    for x, y in zip(a.by_domain("L2"), b.by_domain("L2")):
        assert x.intensity_label == pytest.approx(y.intensity_label, abs=1e-12)


def test_gen_corpus_byte_identical(tmp_path):
    assert gen(tmp_path / "a") == 0
    assert gen(tmp_path / "b") == 0
    assert same_tree(tmp_path / "a", tmp_path / "b")
    assert gen(tmp_path / "c", seed=8) == 0
    assert not same_tree(tmp_path / "a", tmp_path / "c")


def test_effective_config_reproduces_run(tmp_path):
    assert gen(tmp_path / "a") == 0
    cfg = tmp_path / "a" / cli.CONFIG_NAME
    saved = json.loads(cfg.read_text())
    assert saved["command"] == "gen-corpus" and saved["seed"] == 7 and "out" not in saved
    assert cli.run(["gen-corpus", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    assert same_tree(tmp_path / "a", tmp_path / "b")


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_speakers": 2, "n_accents": 2, "utterances_per_speaker": 10, "seed": 1}))
    assert cli.run(["gen-corpus", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / cli.CONFIG_NAME).read_text())["seed"] == 4


def test_intensity_out_of_range(tmp_path, capsys):
    rc = cli.run(["synthesize", "--out", str(tmp_path), "--checkpoint", "x.cait", "--intensity", "1.5",
                  "--phonemes", "AA", "--speaker", "s", "--accent", "a"])
    err = capsys.readouterr().err
    assert rc == 2
    assert "--intensity" in err and "(0, 1)" in err


@pytest.mark.parametrize("bad", ["0:0.9:0.1", "0.1:1.0:0.1", "0.5:0.1:0.1", "x"])
def test_bad_sweep(tmp_path, bad):
    assert cli.run(["synthesize", "--out", str(tmp_path), "--checkpoint", "x.cait", "--sweep", bad]) == 2


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_speakerz": 3}))
    assert cli.run(["gen-corpus", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "n_speakerz" in capsys.readouterr().err


def test_config_for_other_command(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"command": "train-tts"}))
    assert cli.run(["gen-corpus", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_domain_errors_exit_one(tmp_path, capsys):
    assert cli.run(["extract-features", "--out", str(tmp_path / "o"), "--corpus", str(tmp_path)]) == 1
    assert "missing manifest" in capsys.readouterr().err


def test_grad_check_command(tmp_path):
    assert cli.run(["grad-check", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "gradcheck.json").read_text())
    assert rep["max_relative_error"] < 1e-4
    assert cli.run(["grad-check", "--out", str(tmp_path), "--threshold", "1e-30"]) == 1


def test_missing_subcommand():
    assert cli.run([]) == 2
