import csv
import json
import os

import numpy as np
import pytest

from emofuse import cli
from emofuse import data as dataio

SYNTH_FLAGS = ["--classes", "3", "--conversations", "10",
               "--min-utts", "3", "--max-utts", "4",
               "--dim-text", "6", "--dim-audio", "6", "--dim-visual", "6"]
TRAIN_FLAGS = ["--epochs", "1", "--d", "8", "--heads", "2",
               "--batch-size", "4", "--quiet"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data_dir = root / "data"
    assert cli.main(["synth", "--out", str(data_dir), "--seed", "5"] + SYNTH_FLAGS) == 0
    run_dir = root / "run"
    assert cli.main(["train", "--data", str(data_dir / "manifest.json"),
                     "--out", str(run_dir)] + TRAIN_FLAGS) == 0
    return root


def test_synth_output_is_loadable(workdir):
    fs = dataio.load_featureset(str(workdir / "data" / "manifest.json"))
    assert len(fs.conversations) == 10
    assert fs.class_count == 3
    manifest = json.loads((workdir / "data" / "run_manifest.json").read_text())
    assert manifest["command"] == "synth" and manifest["dataset_fingerprint"]


def test_synth_same_seed_same_fingerprint(tmp_path):
    fps = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        assert cli.main(["synth", "--out", str(out), "--seed", "5"] + SYNTH_FLAGS) == 0
        fps.append(json.loads((out / "run_manifest.json").read_text())["dataset_fingerprint"])
    assert fps[0] == fps[1]
    out = tmp_path / "c"
    assert cli.main(["synth", "--out", str(out), "--seed", "6"] + SYNTH_FLAGS) == 0
    other = json.loads((out / "run_manifest.json").read_text())["dataset_fingerprint"]
    assert other != fps[0]


def test_synth_rejects_single_class(tmp_path, capsys):
    code = cli.main(["synth", "--out", str(tmp_path / "x"), "--classes", "1"])
    assert code == 2
    assert "classes" in capsys.readouterr().err


def test_synth_rejects_bad_utterance_range(tmp_path):
    assert cli.main(["synth", "--out", str(tmp_path / "x"),
                     "--min-utts", "5", "--max-utts", "2"]) == 2


def test_train_artifacts(workdir):
    run = workdir / "run"
    with open(run / "epoch_log.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0][:3] == ["epoch", "lr", "train_loss"]
    assert len(rows) == 2               # header + one epoch
    assert (run / "checkpoint" / "checkpoint.json").exists()
    manifest = json.loads((run / "run_manifest.json").read_text())
    assert manifest["resolved_config"]["d"] == 8
    assert manifest["resolved_config"]["classes"] == 3
    assert manifest["timings"]["epochs_run"] == 1


def test_train_with_ablation_flag(workdir, tmp_path):
    code = cli.main(["train", "--data", str(workdir / "data" / "manifest.json"),
                     "--out", str(tmp_path / "run"), "--ablation", "B3"] + TRAIN_FLAGS)
    assert code == 0
    manifest = json.loads((tmp_path / "run" / "run_manifest.json").read_text())
    assert manifest["resolved_config"]["graph_variant"] == "none"


def test_train_missing_dataset_is_io_error(tmp_path, capsys):
    code = cli.main(["train", "--data", str(tmp_path / "nope" / "manifest.json"),
                     "--out", str(tmp_path / "run")] + TRAIN_FLAGS)
    assert code == 3
    assert "error" in capsys.readouterr().err


def test_train_config_file_overridden_by_flags(workdir, tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"d": 16, "epochs": 3}))
    code = cli.main(["train", "--data", str(workdir / "data" / "manifest.json"),
                     "--out", str(tmp_path / "run"), "--config", str(cfg_path)]
                    + TRAIN_FLAGS)
    assert code == 0
    resolved = json.loads((tmp_path / "run" / "run_manifest.json").read_text())["resolved_config"]
    assert resolved["d"] == 8           # flag wins over config file
    assert resolved["epochs"] == 1


def test_eval_writes_reports(workdir, tmp_path, capsys):
    out = tmp_path / "eval"
    code = cli.main(["eval", "--data", str(workdir / "data" / "manifest.json"),
                     "--checkpoint", str(workdir / "run" / "checkpoint"),
                     "--out", str(out), "--split", "train"])
    assert code == 0
    for name in ("confusion.csv", "per_class.csv", "aggregates.json",
                 "projection.csv", "run_manifest.json"):
        assert (out / name).exists(), name
    agg = json.loads((out / "aggregates.json").read_text())
    assert agg["split"] == "train" and 0.0 <= agg["accuracy"] <= 1.0
    assert len(agg["per_class"]) == 3
    assert "acc=" in capsys.readouterr().out
    with open(out / "projection.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["x", "y", "label"]
    assert len(rows) > 1


def test_eval_idempotent(workdir, tmp_path):
    out = tmp_path / "eval"
    argv = ["eval", "--data", str(workdir / "data" / "manifest.json"),
            "--checkpoint", str(workdir / "run" / "checkpoint"),
            "--out", str(out), "--split", "all"]
    assert cli.main(argv) == 0
    first = (out / "aggregates.json").read_text()
    assert cli.main(argv) == 0
    assert (out / "aggregates.json").read_text() == first


def test_eval_class_count_mismatch(workdir, tmp_path, capsys):
    other = tmp_path / "data4"
    flags = [f if f != "3" else "4" for f in SYNTH_FLAGS]
    assert cli.main(["synth", "--out", str(other), "--seed", "5"] + flags) == 0
    code = cli.main(["eval", "--data", str(other / "manifest.json"),
                     "--checkpoint", str(workdir / "run" / "checkpoint"),
                     "--out", str(tmp_path / "eval")])
    assert code == 2
    assert "classes" in capsys.readouterr().err


def test_eval_missing_checkpoint(workdir, tmp_path):
    code = cli.main(["eval", "--data", str(workdir / "data" / "manifest.json"),
                     "--checkpoint", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "eval")])
    assert code == 3


def test_ablate_table(workdir, tmp_path):
    out = tmp_path / "abl"
    code = cli.main(["ablate", "--data", str(workdir / "data" / "manifest.json"),
                     "--out", str(out), "--grid", "full,B3", "--seeds", "1",
                     "--eval-split", "valid"] + TRAIN_FLAGS)
    assert code == 0
    with open(out / "ablation.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0][0] == "variant" and len(rows) == 3
    by_variant = {r[0]: r for r in rows[1:]}
    assert set(by_variant) == {"full", "B3"}
    assert by_variant["full"][3] == "+0.000000"          # delta vs itself
    assert by_variant["full"][5] == "n/a"                # single seed: no t-test
    assert int(by_variant["B3"][6]) < int(by_variant["full"][6])


def test_ablate_rejects_unknown_grid_entry(workdir, tmp_path):
    code = cli.main(["ablate", "--data", str(workdir / "data" / "manifest.json"),
                     "--out", str(tmp_path / "abl"), "--grid", "full,Z9"]
                    + TRAIN_FLAGS)
    assert code == 2
