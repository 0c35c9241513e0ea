"""End-to-end CLI flows and exit codes (in-process via main)."""

import json

import numpy as np
import pytest
import yaml

from dualpath_har import cli
from dualpath_har.checkpoint import load_checkpoint
from dualpath_har.data import load_dataset


TINY_MODEL_YAML = {
    "epochs": 2,
    "batch_size": 8,
    "d_proj": 4,
    "res": {"blocks_per_stage": [1, 1, 1, 1], "stage_widths": [4, 4, 4, 4]},
    "dense": {"layers_per_stage": [1, 1, 1, 1], "growth_rate": 4,
              "stem_channels": 4, "stage_widths": [4, 4, 4, 4]},
}


@pytest.fixture(scope="module")
def cache(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "synth.npz"
    code = cli.main([
        "synth", "--classes", "3", "--channels1", "2", "--channels2", "2",
        "--window-len", "16", "--per-class", "8", "--noise-std", "0.1",
        "--seed", "5", "--out", str(path),
    ])
    assert code == cli.EXIT_OK
    return path


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY_MODEL_YAML))
    return path


def test_synth_cache_loads(cache):
    ds = load_dataset(cache)
    assert len(ds) == 24
    assert ds.partition is not None


def test_train_eval_report_flow(cache, config_file, tmp_path, capsys):
    out_dir = tmp_path / "run"
    code = cli.main([
        "train", "--data", str(cache), "--config", str(config_file),
        "--seed", "0", "--out-dir", str(out_dir),
    ])
    assert code == cli.EXIT_OK
    assert (out_dir / "checkpoint.npz").exists()
    assert (out_dir / "metrics.json").exists()
    assert (out_dir / "confusion_matrix.csv").exists()

    log_lines = (out_dir / "train_log.jsonl").read_text().strip().splitlines()
    records = [json.loads(line) for line in log_lines]
    assert records[0]["step"] == 0
    for key in ("s_res", "s_dense", "r_res", "r_dense", "m_res", "m_dense"):
        assert key in records[0]

    net = load_checkpoint(out_dir / "checkpoint.npz")
    assert net.num_classes == 3

    code = cli.main([
        "eval", "--checkpoint", str(out_dir / "checkpoint.npz"),
        "--data", str(cache),
    ])
    assert code == cli.EXIT_OK
    assert "accuracy" in capsys.readouterr().out

    code = cli.main(["report", "--log", str(out_dir / "train_log.jsonl")])
    assert code == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "steps" in out and "loss_total" in out


def test_cli_flag_overrides_config_file(cache, config_file, tmp_path):
    out_dir = tmp_path / "override"
    code = cli.main([
        "train", "--data", str(cache), "--config", str(config_file),
        "--epochs", "1", "--seed", "0", "--out-dir", str(out_dir),
    ])
    assert code == cli.EXIT_OK
    config = json.loads((out_dir / "config.json").read_text())
    assert config["epochs"] == 1          # flag wins
    assert config["batch_size"] == 8      # file value kept


def test_ablate_flow(cache, config_file, tmp_path, capsys):
    out_dir = tmp_path / "ablate"
    code = cli.main([
        "ablate", "--data", str(cache), "--config", str(config_file),
        "--epochs", "1", "--seed", "0", "--num-seeds", "2",
        "--grid", "full,-cgm", "--test-fraction", "0.5",
        "--out-dir", str(out_dir),
    ])
    assert code == cli.EXIT_OK
    raw = json.loads((out_dir / "ablation.json").read_text())
    assert set(raw["medians"]) == {"full", "-cgm"}
    assert len(raw["rows"]) == 4

    code = cli.main(["report", "--ablation", str(out_dir / "ablation.json")])
    assert code == cli.EXIT_OK
    assert "full" in capsys.readouterr().out


def test_ablate_empty_grid_succeeds(cache, config_file, tmp_path, capsys):
    code = cli.main([
        "ablate", "--data", str(cache), "--config", str(config_file),
        "--epochs", "1", "--seed", "0", "--grid", "",
        "--test-fraction", "0.5",
    ])
    assert code == cli.EXIT_OK
    assert "nothing to run" in capsys.readouterr().out


def test_gradcheck_command(capsys):
    code = cli.main([
        "gradcheck", "--batch", "2", "--time-steps", "8",
        "--channels", "2", "--classes", "2", "--seed", "1",
    ])
    assert code == cli.EXIT_OK
    assert "overall: PASS" in capsys.readouterr().out


class TestExitCodes:
    def test_usage_error_is_one(self, capsys):
        assert cli.main(["train", "--shunt"]) == cli.EXIT_USAGE
        assert cli.main([]) == cli.EXIT_USAGE
        assert cli.main(["report"]) == cli.EXIT_USAGE

    def test_data_error_is_two(self, tmp_path):
        code = cli.main([
            "train", "--data", str(tmp_path / "missing.npz"),
            "--seed", "0", "--out-dir", str(tmp_path / "out"),
        ])
        assert code == cli.EXIT_DATA

    def test_both_data_sources_is_usage_error(self, cache, tmp_path):
        code = cli.main([
            "train", "--data", str(cache), "--csv", "x.csv",
            "--seed", "0", "--out-dir", str(tmp_path / "out"),
        ])
        assert code == cli.EXIT_USAGE

    def test_numerical_failure_is_three(self, cache, config_file, tmp_path):
        with np.errstate(over="ignore", invalid="ignore"):
            code = cli.main([
                "train", "--data", str(cache), "--config", str(config_file),
                "--epochs", "40", "--lr", "1e6", "--optimizer", "momentum",
                "--seed", "0", "--out-dir", str(tmp_path / "boom"),
            ])
        assert code == cli.EXIT_NUMERICAL

    def test_csv_train_flow(self, tmp_path):
        rows = ["acc_x,acc_y,gyro_x,label"]
        rng = np.random.default_rng(0)
        for t in range(120):
            vals = rng.normal(size=3)
            label = 0 if t < 60 else 1
            rows.append(f"{vals[0]:.4f},{vals[1]:.4f},{vals[2]:.4f},{label}")
        csv_path = tmp_path / "rec.csv"
        csv_path.write_text("\n".join(rows) + "\n")
        out_dir = tmp_path / "csvrun"
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text(yaml.safe_dump(TINY_MODEL_YAML))
        code = cli.main([
            "train", "--csv", str(csv_path), "--window-len", "16",
            "--stride", "8", "--config", str(cfg), "--epochs", "1",
            "--batch-size", "4", "--seed", "0", "--out-dir", str(out_dir),
        ])
        assert code == cli.EXIT_OK
        config = json.loads((out_dir / "config.json").read_text())
        assert config["batch_size"] == 4
