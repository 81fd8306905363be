import csv
import json
from pathlib import Path

import numpy as np
import pytest

from gradpart.cli import main

TINY = {
    "dataset": {"source": "synthetic", "seed": 0, "contaminate": True},
    "erm": {"train": {"epochs": 3}, "learning_rate_grid": [0.1, 0.01]},
    "dbscan_grid": {"eps": [0.1, 0.3], "min_samples": [10, 30]},
    "gdro": {
        "train": {"epochs": 3},
        "learning_rate_grid": [0.001],
        "weight_decay_grid": [0.0001],
        "eta_q_grid": [0.01],
    },
}


def write_config(tmp_path, overrides=None, name="config.json"):
    cfg = json.loads(json.dumps(TINY))
    for key, value in (overrides or {}).items():
        cfg[key] = value
    cfg.setdefault("output_dir", str(tmp_path / "runs"))
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def read_csv_rows(path):
    with Path(path).open(newline="") as f:
        return list(csv.DictReader(f))


def test_generate_writes_dataset_and_stats(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["generate", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    rows = read_csv_rows(out / "dataset.csv")
    assert len(rows) == 1000
    stats = json.loads((out / "stats.json").read_text())
    assert stats["n_outliers"] == 50
    # flips keep their group but change class, so groups pair with both
    assert {row["group"] for row in stats["groups"]} == {0, 1, 2, 3}


def test_generate_rejects_invalid_ratios(tmp_path, capsys):
    cfg = write_config(tmp_path, {"split": {"ratios": [0.5, 0.2, 0.2], "seed": 0}})
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "x"), "--quiet"]) == 1
    assert "ratios" in capsys.readouterr().err


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path, {"dbscan": {"eps": [0.1]}})
    assert main(["pipeline", "--config", str(cfg), "--quiet"]) == 1
    err = capsys.readouterr().err
    assert "unknown" in err and "dbscan" in err


def test_empty_grid_rejected_before_any_work(tmp_path):
    cfg = write_config(tmp_path, {"dbscan_grid": {"eps": [], "min_samples": [10]}})
    assert main(["pipeline", "--config", str(cfg), "--quiet"]) == 1
    assert not (tmp_path / "runs").exists()


def test_stage_chaining_and_artifacts(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "chain"
    for stage in ("generate", "erm", "gradients", "infer", "gdro", "evaluate", "sweep"):
        assert main([stage, "--config", str(cfg), "--out", str(out), "--quiet"]) == 0, stage
    for artifact in (
        "dataset.csv",
        "stats.json",
        "erm_checkpoint.json",
        "gradients.csv",
        "inference.csv",
        "inference.json",
        "gdro_checkpoint.json",
        "eval_erm.json",
        "eval_gdro.json",
        "sweep.csv",
    ):
        assert (out / artifact).exists(), artifact
    assert len(read_csv_rows(out / "gradients.csv")) == 1000
    assert len(read_csv_rows(out / "sweep.csv")) == 2 * 4  # 2 classes x 2x2 grid


def test_stage_failure_marks_and_names_stage(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "broken"
    # infer without its inputs: stage failure, FAILED marker, exit 2
    assert main(["infer", "--config", str(cfg), "--out", str(out), "--quiet"]) == 2
    assert "infer" in capsys.readouterr().err
    assert "infer" in (out / "FAILED").read_text()


def test_pipeline_run_directory_and_summary(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["pipeline", "--config", str(cfg), "--quiet"]) == 0
    runs = list((tmp_path / "runs").iterdir())
    assert len(runs) == 1
    run = runs[0]
    summary = json.loads((run / "summary.json").read_text())
    assert summary["group_inference"]["grasp"]["ari"] is not None
    assert summary["evaluation"]["gdro"]["test"]["worst_group_accuracy"] is not None
    assert summary["config_hash"] == run.name.split("-")[0] + summary["config_hash"][12:]
    assert not (run / "FAILED").exists()


def test_pipeline_rerun_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["pipeline", "--config", str(cfg), "--quiet"]) == 0
    assert main(["pipeline", "--config", str(cfg), "--quiet"]) == 0
    runs = sorted((tmp_path / "runs").iterdir())
    assert len(runs) == 2
    a = (runs[0] / "summary.json").read_bytes()
    b = (runs[1] / "summary.json").read_bytes()
    assert a == b


def test_seed_override_changes_hash_deterministically(tmp_path):
    cfg = write_config(tmp_path)
    for _ in range(2):
        assert main(["pipeline", "--config", str(cfg), "--seed", "7", "--quiet"]) == 0
    runs = sorted((tmp_path / "runs").iterdir())
    assert len(runs) == 2
    assert (runs[0] / "summary.json").read_bytes() == (runs[1] / "summary.json").read_bytes()
    summary = json.loads((runs[0] / "summary.json").read_text())
    assert summary["seeds"] == {"dataset": 7, "split": 7, "erm": 7, "gdro": 7, "kmeans": 7}


def test_summary_schema_matches_golden(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["pipeline", "--config", str(cfg), "--quiet"]) == 0
    run = next((tmp_path / "runs").iterdir())
    summary = json.loads((run / "summary.json").read_text())

    def leaf_paths(node, prefix=""):
        if isinstance(node, dict):
            out = []
            for key in sorted(node):
                out.extend(leaf_paths(node[key], f"{prefix}{key}."))
            return out
        return [prefix.rstrip(".")]

    golden = json.loads(
        (Path(__file__).parent / "data" / "summary_schema.json").read_text()
    )
    assert leaf_paths(summary) == golden


def test_sweep_without_groups_omits_ari(tmp_path, caplog):
    data = tmp_path / "plain.csv"
    rng = np.random.default_rng(0)
    with data.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["a", "b", "label"])
        for _ in range(80):
            x = rng.normal(size=2)
            writer.writerow([repr(float(x[0])), repr(float(x[1])), int(x[0] > 0)])
    cfg = write_config(
        tmp_path,
        {
            "dataset": {
                "source": "csv",
                "path": str(data),
                "schema": {"features": ["a", "b"], "label": "label"},
            },
            "dbscan_grid": {"eps": [0.3], "min_samples": [5]},
        },
    )
    out = tmp_path / "sweepout"
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_csv_rows(out / "sweep.csv")
    assert len(rows) == 2  # single grid point, two classes
    assert "ari" not in rows[0]
    assert any("ARI" in record.message for record in caplog.records)
