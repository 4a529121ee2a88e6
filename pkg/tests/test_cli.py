import json
import subprocess
import sys

import pytest

from conftest import DATA
from memefusion.checkpoint import read_header
from memefusion.cli import main, sha256_file

SYN = DATA / "synthetic"
FAST = ["--max-epochs", "2", "--batch-size", "16", "--lr", "0.001", "--warmup-steps", "5"]


def run(*argv):
    return main([str(a) for a in argv])


def usage_error(argv, capsys):
    with pytest.raises(SystemExit) as info:
        run(*argv)
    assert info.value.code == 2
    return capsys.readouterr().err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipeline")
    assert run("preprocess", "--in", SYN / "dataset.tsv", "--level", "L1", "--out", out / "clean.tsv") == 0
    assert run("build-graph", "--corpus", DATA / "corpus" / "dataset.tsv", "--regions", DATA / "corpus" / "regions.jsonl",
               "--num-object-classes", 20, "--out", out / "graph.json") == 0
    common = ["--data", out / "clean.tsv", "--regions", SYN / "regions.jsonl", "--seed", 3]
    assert run("train", "--variant", "vgcn", "--graph", out / "graph.json", *common, *FAST, "--out", out / "vgcn") == 0
    assert run("train", "--variant", "sentiment", "--sentiment", SYN / "sentiment.jsonl", *common, *FAST,
               "--out", out / "sent") == 0
    return out


def test_preprocess_matches_golden(pipeline):
    assert (pipeline / "clean.tsv").read_bytes() == (DATA / "golden" / "synthetic_L1.tsv").read_bytes()
    manifest = json.loads((pipeline / "clean.tsv.manifest.json").read_text())
    assert manifest["command"] == "preprocess"
    assert manifest["inputs"]["dataset"]["sha256"] == sha256_file(SYN / "dataset.tsv")
    assert manifest["outputs"]["cleaned"]["sha256"] == sha256_file(pipeline / "clean.tsv")
    assert set(manifest["timestamps"]) == {"started", "finished"}


def test_build_graph_matches_golden(pipeline):
    got = json.loads((pipeline / "graph.json").read_text())
    want = json.loads((DATA / "golden" / "corpus_graph.json").read_text())
    assert got == want


def test_train_outputs(pipeline):
    for name in ("vgcn", "sent"):
        run_dir = pipeline / name
        header, _ = read_header(run_dir / "model.ckpt")
        history = [json.loads(line) for line in (run_dir / "history.jsonl").read_text().splitlines()]
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert len(history) == 2
        assert header["metadata"]["best_epoch"] == manifest["result"]["best_epoch"]
        assert manifest["seeds"] == {"train": 3, "init": 3, "split": 3}
        assert manifest["config_sources"]["seed"] == "cli" and manifest["config_sources"]["lr"] == "cli"
        assert manifest["config_sources"]["weight_decay"] == "default"
        split = manifest["split"]
        assert sum(len(v) for v in split.values()) == 200
        assert manifest["outputs"]["checkpoint"]["sha256"] == sha256_file(run_dir / "model.ckpt")
    assert read_header(pipeline / "vgcn" / "model.ckpt")[0]["graph"] is not None
    vgcn_cfg = json.loads((pipeline / "vgcn" / "manifest.json").read_text())["config"]["train"]
    assert (vgcn_cfg["warmup_steps"], vgcn_cfg["weight_decay"]) == (5, 0.1)


def test_predict_ensemble_evaluate(pipeline, capsys):
    p = pipeline
    feats = ["--data", p / "clean.tsv", "--regions", SYN / "regions.jsonl", "--sentiment", SYN / "sentiment.jsonl"]
    assert run("predict", "--checkpoint", p / "vgcn" / "model.ckpt", *feats, "--out", p / "vgcn.jsonl") == 0
    assert run("predict", "--checkpoint", p / "sent" / "model.ckpt", *feats, "--out", p / "sent.jsonl") == 0
    (p / "one.json").write_text(json.dumps({"members": [{"checkpoint": "vgcn/model.ckpt"}]}))
    assert run("ensemble", "--members", p / "one.json", *feats, "--out", p / "one.jsonl") == 0
    assert (p / "one.jsonl").read_bytes() == (p / "vgcn.jsonl").read_bytes()

    (p / "two.json").write_text(json.dumps({"members": [{"predictions": "vgcn.jsonl"}, {"checkpoint": "sent/model.ckpt"}]}))
    assert run("ensemble", "--members", p / "two.json", *feats, "--out", p / "two.jsonl") == 0
    vg, se, both = ([json.loads(x) for x in (p / f).read_text().splitlines()] for f in ("vgcn.jsonl", "sent.jsonl", "two.jsonl"))
    assert len(both) == 200
    assert both[0]["prob_a"] == pytest.approx((vg[0]["prob_a"] + se[0]["prob_a"]) / 2, abs=2e-9)

    capsys.readouterr()
    assert run("evaluate", "--predictions", p / "two.jsonl", "--data", p / "clean.tsv", "--out", p / "report.json") == 0
    printed = capsys.readouterr().out
    assert "task A weighted-F1" in printed and "gold 1" in printed
    report = json.loads((p / "report.json").read_text())
    assert set(report["confusion_matrices"]) == {"misogynous", "shaming", "stereotype", "objectification", "violence"}
    assert {"weighted", "macro"} <= set(report["task_b"])


def test_missing_ensemble_member_names_path(pipeline, capsys):
    spec = pipeline / "bad.json"
    spec.write_text(json.dumps({"members": [{"checkpoint": "nope/model.ckpt"}]}))
    assert run("ensemble", "--members", spec, "--out", pipeline / "bad.jsonl") == 1
    assert "nope/model.ckpt" in capsys.readouterr().err


def test_usage_errors(tmp_path, capsys):
    assert "L3" in usage_error(["preprocess", "--in", SYN / "dataset.tsv", "--level", "L3", "--out", tmp_path / "x"], capsys)
    err = usage_error(["build-graph", "--corpus", SYN / "dataset.tsv", "--min-npmi", "1.1", "--out", tmp_path / "g"], capsys)
    assert "--min-npmi" in err
    base = ["train", "--data", SYN / "dataset.tsv", "--regions", SYN / "regions.jsonl", "--out", tmp_path / "t"]
    assert "--graph" in usage_error([*base, "--variant", "vgcn"], capsys)
    assert "--sentiment" in usage_error([*base, "--variant", "sentiment"], capsys)
    assert "threshold" in usage_error(["evaluate", "--predictions", "p", "--data", "d", "--threshold", "1", "--out", "r"], capsys)


def test_runtime_errors_exit_one(tmp_path, capsys):
    assert run("preprocess", "--in", tmp_path / "missing.tsv", "--out", tmp_path / "x.tsv") == 1
    assert "missing.tsv" in capsys.readouterr().err
    bad = tmp_path / "bad.tsv"
    bad.write_text("id\ttext\tmisogynous\tshaming\tstereotype\tobjectification\tviolence\nm1\tx\t0\t1\t0\t0\t0\n")
    assert run("preprocess", "--in", bad, "--out", tmp_path / "y.tsv") == 1
    assert "line 2" in capsys.readouterr().err
    # the manifest is written before the failing step, the output never appears
    assert (tmp_path / "y.tsv.manifest.json").is_file() and not (tmp_path / "y.tsv").exists()


def test_vocab_graph_mismatch_is_usage_error(tmp_path, capsys):
    vocab = tmp_path / "vocab.txt"
    vocab.write_text("[PAD]\n[UNK]\n[CLS]\n[SEP]\nhello\n")
    argv = ["train", "--variant", "vgcn", "--graph", DATA / "golden" / "corpus_graph.json", "--vocab", vocab,
            "--data", SYN / "dataset.tsv", "--regions", SYN / "regions.jsonl", "--out", tmp_path / "t"]
    assert "text tokens" in usage_error(argv, capsys)


def test_config_precedence(tmp_path, monkeypatch):
    from argparse import Namespace

    from memefusion.cli import resolve_train_config

    cfg_file = tmp_path / "train.json"
    cfg_file.write_text(json.dumps({"lr": 0.002, "batch_size": 4, "seed": 9}))
    blank = dict(lr=None, warmup_steps=None, weight_decay=None, batch_size=None, max_epochs=None, patience=None,
                 seed=None, split_seed=None, task=None, threshold=None, oversample=False)
    monkeypatch.setenv("MEMEFUSION_SEED", "17")
    config, sources = resolve_train_config(Namespace(variant="vgcn", config=None, **blank))
    assert config.seed == 17 and sources["seed"] == "env:MEMEFUSION_SEED"
    config, sources = resolve_train_config(Namespace(variant="vgcn", config=str(cfg_file), **{**blank, "lr": 0.5}))
    assert (config.lr, config.batch_size, config.seed, config.warmup_steps) == (0.5, 4, 9, 120)
    assert (sources["lr"], sources["batch_size"], sources["seed"], sources["warmup_steps"]) == ("cli", "file", "file", "default")
    config, sources = resolve_train_config(Namespace(variant="sentiment", config=None, **{**blank, "oversample": True}))
    assert config.oversample and not config.loss_weighting and sources["oversample"] == "cli"


def test_module_entry_point():
    result = subprocess.run([sys.executable, "-m", "memefusion", "--help"], capture_output=True, text=True)
    assert result.returncode == 0
    for command in ("preprocess", "build-graph", "train", "predict", "ensemble", "evaluate"):
        assert command in result.stdout
