import json

import numpy as np
import pytest

from siamtir.cli import main
from siamtir.synthetic import read_boxes


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A tiny dataset plus a one-epoch checkpoint trained through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--suite", "easy", "--n-sequences", "2",
                 "--n-frames", "14", "--seed", "3"]) == 0
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({"train": {"batch_size": 2, "pairs_per_epoch": 2}}))
    assert main(["train", "--data", str(root / "data"), "--out", str(root / "model"), "--epochs", "1",
                 "--config", str(cfg), "--seed", "1"]) == 0
    return root


def test_no_command_is_usage_error(capsys):
    assert main([]) == 1


def test_unknown_subcommand(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_missing_required_flag():
    assert main(["eval", "--data", "x"]) == 1


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0


def test_missing_checkpoint_names_the_path(tmp_path, capsys):
    ckpt = tmp_path / "nowhere" / "epoch_000"
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(tmp_path), "--out", str(tmp_path / "o")]) == 2
    assert str(ckpt) in capsys.readouterr().err


def test_missing_dataset(workspace, tmp_path):
    ckpt = workspace / "model" / "epoch_000"
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(tmp_path), "--out", str(tmp_path / "o")]) == 2
    assert main(["train", "--data", str(tmp_path / "absent"), "--out", str(tmp_path / "m")]) == 2


def test_bad_config(workspace, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"trian": {}}))
    assert main(["synth", "--out", str(tmp_path / "d"), "--config", str(cfg)]) == 1
    cfg.write_text(json.dumps({"train": {"epoch": 2}}))
    assert main(["train", "--data", str(workspace / "data"), "--out", str(tmp_path / "m"),
                 "--config", str(cfg)]) == 1
    assert main(["synth", "--out", str(tmp_path / "d"), "--config", str(tmp_path / "none.json")]) == 1


def test_train_outputs(workspace):
    model = workspace / "model"
    assert (model / "epoch_000.json").is_file() and (model / "epoch_000.bin").is_file()
    assert (model / "network.json").is_file() and (model / "loss_history.csv").is_file()


def test_track_writes_boxes_and_overlays(workspace, tmp_path):
    seq_dir = workspace / "data" / "easy_3_00"
    assert main(["track", "--checkpoint", str(workspace / "model" / "epoch_000"), "--data", str(seq_dir),
                 "--out", str(tmp_path), "--overlays"]) == 0
    boxes = read_boxes(tmp_path / "output.txt")
    assert boxes.shape == (14, 4)
    np.testing.assert_array_equal(boxes[0], read_boxes(seq_dir / "groundtruth.txt")[0])
    assert len(list((tmp_path / "overlays").glob("*.pgm"))) == 14


def test_eval_metrics(workspace, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"run": {"burn_in": 2, "eao_interval": [2, 10]}}))
    assert main(["eval", "--checkpoint", str(workspace / "model" / "epoch_000"), "--data",
                 str(workspace / "data"), "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 0
    data = json.loads((tmp_path / "o" / "metrics.json").read_text())
    for key in ("accuracy", "robustness_count", "robustness_per100", "eao"):
        assert key in data
        for row in data["per_sequence"].values():
            assert key in row
    assert sorted(data["per_sequence"]) == ["easy_3_00", "easy_3_01"]
    assert "not the official" in data["metadata"]["eao_variant"]
    assert (tmp_path / "o" / "metrics.csv").read_text().splitlines()[-1].startswith("ALL,")


def test_gradcheck_quick(capsys):
    assert main(["gradcheck", "--quick"]) == 0
    assert "checks passed" in capsys.readouterr().out
