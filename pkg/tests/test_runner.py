import csv
import json

import numpy as np
import pytest

from hardnet.exceptions import ConfigurationException
from hardnet.experiments.reporting import (
    METRICS_HEADER,
    MetricsRow,
    format_value,
    write_artifact,
    write_config,
    write_metrics
)
from hardnet.experiments.runner import RunRequest, make_task, run_experiment, run_many, seed_requests
from main import build_parser, main

def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))

def sample_row(**overrides):
    values = dict(task="fitting", model="nn", seed=0, epoch=1, loss=0.25, metric=1.0 / 3.0,
                  ineq_max=0.0, ineq_mean=0.0, ineq_count=0.0, eq_max=0.0, eq_mean=0.0, eq_count=0.0,
                  time_ms=0.125)
    values.update(overrides)
    return MetricsRow(**values)

@pytest.mark.parametrize("value, expected", [
    (None, "NA"),
    (float("nan"), "NA"),
    (True, "true"),
    (3, "3"),
    (0.1, "0.1"),
    (1.0 / 3.0, "0.333333333333"),
    (np.float64(2.5), "2.5"),
    ("hardnet-aff", "hardnet-aff"),
])
def test_format_value(value, expected):
    """Stable text for every cell type"""
    assert format_value(value) == expected

def test_metrics_row_time_column():
    """Deterministic output blanks the wall-clock column"""
    row = sample_row()
    assert row.values(deterministic=True)[-1] == "NA"
    assert row.values(deterministic=False)[-1] == "0.125"
    assert row.timing_values() == ["fitting", "nn", "0", "1", "0.125"]

def test_write_metrics(tmp_path):
    """Header line followed by one line per row"""
    path = tmp_path / "metrics.csv"
    write_metrics(path, [sample_row(), sample_row(epoch=2)], deterministic=True)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(METRICS_HEADER)
    assert lines[1] == "fitting,nn,0,1,0.25,0.333333333333,0,0,0,0,0,0,NA"
    assert len(lines) == 3

def test_write_artifact_missing_cells(tmp_path):
    """NaN cells are written as NA"""
    path = tmp_path / "trajectory.csv"
    write_artifact(path, ["step", "a_lin"], [[0, 1.5], [1, float("nan")]])
    assert read_csv(path) == [["step", "a_lin"], ["0", "1.5"], ["1", "NA"]]

def test_write_config_sorted(tmp_path):
    """Keys sorted, sequences comma-joined"""
    path = tmp_path / "config.txt"
    write_config(path, {"train.lr": 0.001, "model.kind": "nn", "model.layer_sizes": (1, 200, 1)})
    assert path.read_text() == "model.kind=nn\nmodel.layer_sizes=1,200,1\ntrain.lr=0.001\n"

def test_make_task_unknown():
    """Unknown task names are configuration errors"""
    with pytest.raises(ConfigurationException):
        make_task("pendulum")

def test_seed_requests_split_output_dirs(tmp_path):
    """Several seeds get their own subdirectory; one seed writes in place"""
    base = RunRequest(task="fitting", model="nn", out_dir=str(tmp_path))
    assert [r.out_dir for r in seed_requests(base, [5])] == [str(tmp_path)]
    split = seed_requests(base, [1, 2])
    assert [r.seed for r in split] == [1, 2]
    assert [r.out_dir for r in split] == [str(tmp_path / "seed-1"), str(tmp_path / "seed-2")]

def test_run_many_rejects_zero_workers(tmp_path):
    """At least one worker is needed"""
    with pytest.raises(ConfigurationException):
        run_many(RunRequest(task="fitting", model="nn", out_dir=str(tmp_path)), [0], workers=0)

def test_run_experiment_outputs(tmp_path):
    """A run writes metrics, timing, config, predictions and a checkpoint"""
    out = tmp_path / "run"
    run_experiment(RunRequest(task="fitting", model="hardnet-aff", epochs=1, out_dir=str(out)))
    for name in ("metrics.csv", "timing.csv", "config.txt", "predictions.csv", "model.bin"):
        assert (out / name).exists()

    metrics = read_csv(out / "metrics.csv")
    assert metrics[0] == METRICS_HEADER
    assert [row[3] for row in metrics[1:]] == ["0", "1"]
    assert all(row[-1] == "NA" for row in metrics[1:])
    assert all(row[8] == "0" and row[11] == "0" for row in metrics[1:])

    timing = read_csv(out / "timing.csv")
    assert all(float(row[-1]) >= 0.0 for row in timing[1:])

    keys = [line.split("=", 1)[0] for line in (out / "config.txt").read_text().splitlines()]
    assert keys == sorted(keys)
    assert "train.warm_start_epochs" in keys and "model.kind" in keys and "settings.dc3_steps" in keys

    predictions = read_csv(out / "predictions.csv")
    assert predictions[0] == ["x", "target", "prediction", "a", "b"]
    assert len(predictions) == 402

def test_run_experiment_is_reproducible(tmp_path):
    """Identical requests give byte-identical metrics"""
    for name in ("a", "b"):
        run_experiment(RunRequest(task="fitting", model="soft", seed=2, epochs=2, out_dir=str(tmp_path / name)))
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert (tmp_path / "a" / "predictions.csv").read_bytes() == (tmp_path / "b" / "predictions.csv").read_bytes()

def test_parser_defaults():
    """Seeds accept a list and everything else has a default"""
    args = build_parser().parse_args(["run", "--task", "fitting", "--model", "nn", "--seed", "0", "1"])
    assert args.seed == [0, 1]
    assert args.warm_start == 0 and args.scale == "small" and args.workers == 1

def test_parser_rejects_unknown_model():
    """argparse refuses model names it does not know"""
    with pytest.raises(SystemExit):
        build_parser().parse_args(["run", "--task", "fitting", "--model", "mystery"])

def test_cli_run(tmp_path, capsys):
    """Two seeds produce two output directories"""
    code = main(["run", "--task", "fitting", "--model", "nn", "--epochs", "0", "--seed", "0", "1",
                 "--out", str(tmp_path)])
    assert code == 0
    printed = capsys.readouterr().out.splitlines()
    assert str(tmp_path / "seed-0") in printed and str(tmp_path / "seed-1") in printed
    assert (tmp_path / "seed-1" / "metrics.csv").exists()

def test_cli_configuration_error(tmp_path, capsys):
    """A model that does not fit the task exits with the configuration code and a JSON report"""
    code = main(["run", "--task", "fitting", "--model", "cbf-qp", "--out", str(tmp_path)])
    assert code == 3
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert report["error"]["error_code"] == "INVALID_CONFIGURATION"

def test_cli_validation_error(tmp_path, capsys):
    """Invalid hyperparameters exit with the configuration code"""
    code = main(["run", "--task", "fitting", "--model", "nn", "--lr", "-1", "--out", str(tmp_path)])
    assert code == 3
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert report["error"]["error_type"] == "validation"

def test_cli_check(tmp_path, capsys, monkeypatch):
    """The nonconvex task passes the assumption check"""
    monkeypatch.chdir(tmp_path)
    assert main(["check", "--task", "nonconvex", "--probes", "5"]) == 0
    assert capsys.readouterr().out.strip()
