import json

import numpy as np
import pytest

from nestgan.cli import main, read_config, UsageError

TINY_TRAIN = ["--epochs", "1", "--batch-size", "4", "--set", "scales=(16, 32)", "--set", "r_values=(1, 1)",
              "--set", "text_dim=8", "--set", "c_dim=8", "--set", "z_dim=4",
              "--set", "g_base_channels=16", "--set", "g_halve_at=(8,)", "--set", "g_min_channels=4",
              "--set", "d_base_channels=4", "--set", "d_max_channels=8"]


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    assert main(["make-dataset", "--run-dir", str(root), "--samples-per-class", "3",
                 "--resolution", "32"]) == 0
    assert main(["train", "--run-dir", str(root), "--name", "smoke", *TINY_TRAIN]) == 0
    return root


def test_make_dataset_layout_and_rerun_identical(run, tmp_path):
    assert (run / "dataset/manifest.tsv").exists()
    assert main(["make-dataset", "--run-dir", str(tmp_path), "--samples-per-class", "3",
                 "--resolution", "32"]) == 0
    assert (tmp_path / "dataset/manifest.tsv").read_bytes() == (run / "dataset/manifest.tsv").read_bytes()


def test_make_dataset_bad_color(tmp_path, capsys):
    assert main(["make-dataset", "--run-dir", str(tmp_path), "--colors", "red,purple"]) == 1
    assert "colors" in capsys.readouterr().err


def test_train_outputs(run):
    smoke = run / "smoke"
    assert (smoke / "final.pt").exists() and (smoke / "metrics.log").exists()
    echoed = json.loads((smoke / "config.json").read_text())
    assert echoed["scales"] == [16, 32] and echoed["epochs"] == 1


def test_train_last_scale_only(run):
    assert main(["train", "--run-dir", str(run), "--name", "last", "--scales", "32", *TINY_TRAIN]) == 0
    assert json.loads((run / "last/config.json").read_text())["enabled_scales"] == [32]


def test_train_missing_dataset(tmp_path, capsys):
    assert main(["train", "--run-dir", str(tmp_path), "--dataset", "nowhere", *TINY_TRAIN]) == 1
    assert "nowhere" in capsys.readouterr().err


def test_config_file_and_unknown_key(run, tmp_path):
    good = tmp_path / "good.ini"
    good.write_text("[train]\nepochs = 1\nlocal_loss = False\n")
    assert read_config(good)["train"] == {"epochs": 1, "local_loss": False}
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nepochz = 3\n")
    with pytest.raises(UsageError, match="epochz"):
        read_config(bad)
    assert main(["train", "--run-dir", str(run), "--config", str(bad), *TINY_TRAIN]) == 1


def test_missing_run_dir(monkeypatch):
    monkeypatch.delenv("NESTGAN_RUN_ROOT", raising=False)
    assert main(["make-dataset"]) == 1


def test_env_run_root(monkeypatch, tmp_path):
    monkeypatch.setenv("NESTGAN_RUN_ROOT", str(tmp_path))
    assert main(["make-dataset", "--samples-per-class", "1", "--resolution", "16"]) == 0
    assert (tmp_path / "dataset/manifest.tsv").exists()


def test_bad_flag_is_usage_error():
    assert main(["train", "--epochs", "many"]) == 1
    assert main(["no-such-command"]) == 1


def test_sample_deterministic(run):
    args = ["sample", "--run-dir", str(run), "--checkpoint", "smoke/final.pt", "--caption",
            "a small red circle in the center", "--n-per-caption", "3", "--seed", "4"]
    assert main([*args, "--out", "s1"]) == 0
    assert main([*args, "--out", "s2"]) == 0
    for name in ("grid_16.png", "grid_32.png", "pyramids.npy"):
        assert (run / "s1" / name).read_bytes() == (run / "s2" / name).read_bytes()


def test_sample_unknown_token(run, capsys):
    assert main(["sample", "--run-dir", str(run), "--checkpoint", "smoke/final.pt",
                 "--caption", "a purple circle"]) == 1
    assert "purple" in capsys.readouterr().err


def test_corrupt_checkpoint_is_runtime_failure(run, tmp_path):
    (tmp_path / "bad.pt").write_bytes(b"junk")
    assert main(["sample", "--run-dir", str(run), "--checkpoint", str(tmp_path / "bad.pt"),
                 "--caption", "a red circle"]) == 2


def test_interpolate_frames(run):
    assert main(["interpolate", "--run-dir", str(run), "--checkpoint", "smoke/final.pt",
                 "--source", "a small red circle in the center", "--target", "a large blue square on the left",
                 "--steps", "5", "--seed", "1", "--out", "interp"]) == 0
    with open(run / "interp/frames.npy", "rb") as fh:
        assert np.load(fh).shape[0] == 5
    assert main(["sample", "--run-dir", str(run), "--checkpoint", "smoke/final.pt", "--caption",
                 "a small red circle in the center", "--n-per-caption", "1", "--seed", "1", "--out", "one"]) == 0
    with open(run / "interp/frames.npy", "rb") as a, open(run / "one/pyramids.npy", "rb") as b:
        assert np.array_equal(np.load(a)[0], np.load(b)[0])


def test_evaluate_unknown_metric(run):
    assert main(["evaluate", "--run-dir", str(run), "--checkpoint", "smoke/final.pt",
                 "--metrics", "fid"]) == 1


def test_evaluate_msssim_report(run):
    assert main(["evaluate", "--run-dir", str(run), "--checkpoint", "smoke/final.pt", "--metrics", "msssim",
                 "--n-images", "12", "--pairs-per-class", "3", "--out", "rep"]) == 0
    text = (run / "rep.txt").read_text()
    assert "msssim_overall" in text and "color_accuracy" in text
