import json

import numpy as np
import pytest

from tagdiff import io
from tagdiff.cli import main
from tagdiff.ensemble import read_records
from tagdiff.nn import load_model


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--n", "90", "--classes", "3", "--dim", "4",
                 "--p-intra", "0.1", "--p-inter", "0.01", "--noise", "1.0", "--out", str(out)]) == 0
    cfg = {"train": {"max_epochs": 10, "patience": 10, "hidden_dim": 8},
           "simple_gcn_k": [2, 3], "sign_grid": [[3, 0, 0], [3, 0, 1]]}
    (out / "config.json").write_text(json.dumps(cfg))
    return out


def data_flags(d):
    return ["--edges", str(d / "edges.txt"), "--features", str(d / "features.stgf"),
            "--labels", str(d / "labels.txt"),
            "--splits", str(d / "train.txt"), str(d / "val.txt"), str(d / "test.txt")]


def test_synth_writes_all_files(synth_dir):
    for name in ("edges.txt", "features.stgf", "labels.txt", "train.txt", "val.txt", "test.txt"):
        assert (synth_dir / name).exists()
    assert io.read_features(synth_dir / "features.stgf").shape == (90, 4)


def test_diffuse_writes_blocks(synth_dir, tmp_path, capsys):
    args = ["diffuse", "--edges", str(synth_dir / "edges.txt"),
            "--features", str(synth_dir / "features.stgf"), "--spt", "2", "1", "1",
            "--out", str(tmp_path)]
    assert main(args) == 0
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["gcn_1.stgf", "gcn_2.stgf", "ppr_1.stgf", "tri_1.stgf", "x.stgf"]
    assert json.loads(capsys.readouterr().out)["blocks"][0] == "x"


def test_train_then_eval(synth_dir, tmp_path, capsys):
    cfg = ["--config", str(synth_dir / "config.json"), "--seed", "1"]
    assert main(["train", "--head", "sign", "--spt", "3", "0", "1", *data_flags(synth_dir), *cfg,
                 "--out", str(tmp_path)]) == 0
    summary = json.loads(capsys.readouterr().out)
    model = load_model(tmp_path / "model.stgm")
    assert model.kind == "mlp" and model.in_dim == 4 * 5
    assert len(read_records(tmp_path / "history.jsonl")) == summary["epochs"]
    assert main(["eval", "--predictions", str(tmp_path / "predictions.npy"),
                 "--labels", str(synth_dir / "labels.txt"),
                 "--splits", str(synth_dir / "train.txt"), str(synth_dir / "val.txt"),
                 str(synth_dir / "test.txt")]) == 0
    assert json.loads(capsys.readouterr().out)["accuracy"] == summary["test_acc"]


def test_select_reports_argmax(synth_dir, tmp_path, capsys):
    out = tmp_path / "sel.jsonl"
    assert main(["select", *data_flags(synth_dir), "--config", str(synth_dir / "config.json"),
                 "--out", str(out)]) == 0
    records = read_records(out)
    assert [r["choice"] for r in records] == [2, 3, [3, 0, 0], [3, 0, 1]]
    for head in ("simple_gcn", "sign"):
        rows = [r for r in records if r["head"] == head]
        assert sum(r["chosen"] for r in rows) == 1
        chosen = next(r for r in rows if r["chosen"])
        assert chosen["val_acc"] == max(r["val_acc"] for r in rows)
    assert "<- chosen" in capsys.readouterr().out


def test_run_and_ablate(synth_dir, tmp_path, capsys):
    flags = [*data_flags(synth_dir), "--config", str(synth_dir / "config.json"),
             "--heads", "mlp", "gcn", "--seed", "0", "--seed", "1", "--no-symmetrize"]
    assert main(["run", *flags, "--out", str(tmp_path / "run.jsonl")]) == 0
    text = capsys.readouterr().out
    assert "MLP" in text and "Ensemble" in text and "±" in text
    assert [r["row"] for r in read_records(tmp_path / "run.jsonl")] == ["MLP", "GCN", "Ensemble"]
    assert main(["ablate", *flags, "--out", str(tmp_path / "abl.jsonl")]) == 0
    rows = read_records(tmp_path / "abl.jsonl")
    assert rows[0]["row"] == "Full Ensemble" and len(rows) == 5


def test_errors_exit_nonzero_with_stage(synth_dir, tmp_path, capsys):
    bad = tmp_path / "edges.txt"
    bad.write_text("0 1\n0 oops\n")
    flags = data_flags(synth_dir)
    flags[1] = str(bad)
    assert main(["run", *flags]) != 0
    err = capsys.readouterr().err
    assert "[load]" in err and "edges.txt:2" in err

    (tmp_path / "cfg.json").write_text('{"heads": ["sage"]}')
    assert main(["run", *data_flags(synth_dir), "--config", str(tmp_path / "cfg.json")]) != 0
    assert "error: [config]" in capsys.readouterr().err


def test_eval_rejects_non_probabilities(synth_dir, tmp_path):
    np.save(tmp_path / "p.npy", np.ones((90, 3)))
    assert main(["eval", "--predictions", str(tmp_path / "p.npy"),
                 "--labels", str(synth_dir / "labels.txt"),
                 "--splits", str(synth_dir / "train.txt"), str(synth_dir / "val.txt"),
                 str(synth_dir / "test.txt")]) != 0
