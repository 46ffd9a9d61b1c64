import csv
import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from parkcast.cli import EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_OK, load_config, main
from parkcast.evaluation import PredictionReport
from parkcast.training import read_history_csv

TINY_SPEC = {
    "n_vertices": 4, "window": 6, "horizon": 2, "decoder_dims": [16],
    "sources": [
        {"name": "occupancy", "schema": "NVTD", "feature_dim": 1,
         "embedding": {"gcnn_channels": [3], "cheb_order": 2, "fc_dims": [4], "lstm_dims": [8],
                       "dropout": 0.25}},
        {"name": "speed", "schema": "NVTD", "feature_dim": 1,
         "embedding": {"gcnn_channels": [2], "cheb_order": 2, "fc_dims": [2], "lstm_dims": [4]}},
        {"name": "weather", "schema": "NTD", "feature_dim": 14,
         "embedding": {"gcnn_channels": [], "fc_dims": [], "lstm_dims": [4]}},
    ],
}

TINY = {
    "seed": 3,
    "synth": {"n_blocks": 4, "days": 10},
    "preprocess": {"window": 6, "horizon": 2},
    "model": {"spec": TINY_SPEC},
    "train": {"max_epochs": 3, "batch_size": 64, "learning_rate": 0.003},
    "evaluate": {"lasso": True},
}


def write_config(path, cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "tiny.json", TINY)
    raw, data = root / "raw", root / "data"
    assert main(["generate", "--config", cfg, "--out", str(raw)]) == EXIT_OK
    assert main(["preprocess", "--config", cfg, "--data", str(raw), "--out", str(data)]) == EXIT_OK
    return root, cfg, raw, data


def test_generate_is_byte_identical_and_fast(tmp_path):
    cfg = write_config(tmp_path / "c.json", {"seed": 9, "synth": {"n_blocks": 2, "days": 10}})
    t0 = time.perf_counter()
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "a")]) == EXIT_OK
    elapsed = time.perf_counter() - t0
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "b")]) == EXIT_OK
    assert elapsed < 5.0
    names = sorted(os.listdir(tmp_path / "a"))
    assert {"transactions.csv", "speed.csv", "weather.csv", "travel_time.csv", "manifest.json"} <= set(names)
    for n in names:
        if n != "manifest.json":
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["outputs"] == mb["outputs"] and ma["config_hash"] == mb["config_hash"]
    assert ma["seed"] == 9


def test_config_layers(tmp_path):
    cfg = load_config(write_config(tmp_path / "c.json", {"train": {"max_epochs": 7}}),
                      ["train.batch_size=8", "preprocess.chain=[\"minmax\"]"], seed=4)
    assert cfg["train"] == {"max_epochs": 7, "batch_size": 8}
    assert cfg["preprocess"]["chain"] == ["minmax"] and cfg["seed"] == 4


def test_train_resume_predict_evaluate(workspace, tmp_path):
    root, cfg, raw, data = workspace
    run = tmp_path / "run"
    t0 = time.perf_counter()
    assert main(["train", "--config", cfg, "--data", str(data), "--out", str(run)]) == EXIT_OK
    assert time.perf_counter() - t0 < 60
    hist = read_history_csv(run / "history.csv")
    assert [r.epoch for r in hist] == [1, 2, 3]

    # resume continues the epoch numbering
    assert main(["train", "--config", cfg, "--data", str(data), "--out", str(run), "--resume",
                 "--set", "train.max_epochs=5"]) == EXIT_OK
    hist = read_history_csv(run / "history.csv")
    assert [r.epoch for r in hist] == [1, 2, 3, 4, 5]
    best = min(hist, key=lambda r: r.test_mse)

    # evaluating the best checkpoint on the train split reproduces the logged loss
    ev = tmp_path / "eval_train"
    assert main(["evaluate", "--config", cfg, "--data", str(data), "--run", str(run), "--out", str(ev),
                 "--split", "train", "--no-baselines"]) == EXIT_OK
    rep = PredictionReport.load(ev / "report_gcnn_lstm.json")
    assert abs(rep.metadata["scaled_mse"] - best.train_mse) < 1e-9
    assert rep.metadata["best_epoch"] == best.epoch

    # full evaluation: model plus the three baselines, heatmaps, sample output
    ev = tmp_path / "eval"
    assert main(["evaluate", "--config", cfg, "--data", str(data), "--run", str(run), "--out", str(ev)]) == EXIT_OK
    rows = list(csv.DictReader(open(ev / "comparison.csv")))
    assert [r["model"] for r in rows] == ["GCNN+LSTM", "Historical Average", "Latest Observation", "LASSO"]
    for f in ("heatmap_model_mape.csv", "heatmap_model_mape.svg", "heatmap_lasso_minus_model.csv",
              "sample_output.csv", "manifest.json"):
        assert (ev / f).exists()

    # predictions come back as vehicle counts
    pr = tmp_path / "pred"
    assert main(["predict", "--config", cfg, "--data", str(data), "--run", str(run), "--out", str(pr)]) == EXIT_OK
    with open(pr / "predictions_test.csv") as fh:
        r = list(csv.reader(fh))
    assert r[0][0] == "target_time" and len(r[0]) == 5
    values = np.array([[float(v) for v in row[1:]] for row in r[1:]])
    assert values.max() > 1.5          # not on the [-1, 1] scale
    assert values.mean() > 0


def test_missing_speed_is_named(workspace, tmp_path):
    _, cfg, raw, _ = workspace
    partial = tmp_path / "raw"
    partial.mkdir()
    for f in ("transactions.csv", "travel_time.csv", "weather.csv"):
        (partial / f).write_bytes((raw / f).read_bytes())
    data = tmp_path / "data"
    assert main(["preprocess", "--config", cfg, "--data", str(partial), "--out", str(data)]) == EXIT_OK
    code = main(["train", "--config", cfg, "--data", str(data), "--out", str(tmp_path / "run")])
    assert code == EXIT_DATA


def test_missing_speed_message(workspace, tmp_path, capsys):
    _, cfg, raw, _ = workspace
    partial = tmp_path / "raw"
    partial.mkdir()
    for f in ("transactions.csv", "travel_time.csv"):
        (partial / f).write_bytes((raw / f).read_bytes())
    data = tmp_path / "data"
    main(["preprocess", "--config", cfg, "--data", str(partial), "--out", str(data)])
    capsys.readouterr()
    main(["train", "--config", cfg, "--data", str(data), "--out", str(tmp_path / "run")])
    assert "'speed'" in capsys.readouterr().err


def test_bad_csv_is_a_data_error_with_line(workspace, tmp_path, capsys):
    _, cfg, raw, _ = workspace
    broken = tmp_path / "raw"
    broken.mkdir()
    for f in ("travel_time.csv", "speed.csv", "weather.csv"):
        (broken / f).write_bytes((raw / f).read_bytes())
    lines = (raw / "transactions.csv").read_text().splitlines()
    lines[3] = "m,B00,not-a-time,2014-01-06T09:00"
    (broken / "transactions.csv").write_text("\n".join(lines) + "\n")
    code = main(["preprocess", "--config", cfg, "--data", str(broken), "--out", str(tmp_path / "d")])
    assert code == EXIT_DATA
    assert "transactions.csv:4" in capsys.readouterr().err


def test_config_errors(workspace, tmp_path):
    _, cfg, _, data = workspace
    bad = write_config(tmp_path / "bad.json", {"trian": {}})
    assert main(["generate", "--config", bad, "--out", str(tmp_path / "g")]) == EXIT_CONFIG
    assert main(["generate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "g")]) == EXIT_CONFIG
    assert main(["train", "--config", cfg, "--data", str(data), "--out", str(tmp_path / "r"),
                 "--set", "train.learning_rate=-1"]) == EXIT_CONFIG
    # window/horizon mismatch between the model and the preprocessing settings
    assert main(["train", "--config", cfg, "--data", str(data), "--out", str(tmp_path / "r"),
                 "--set", "preprocess.horizon=3"]) == EXIT_CONFIG


def test_divergence_exit_code(workspace, tmp_path):
    _, cfg, _, data = workspace
    code = main(["train", "--config", cfg, "--data", str(data), "--out", str(tmp_path / "r"),
                 "--set", "train.learning_rate=1e300", "--set", "train.weight_decay=1e300"])
    assert code == EXIT_DIVERGED


def test_ablate_and_report(workspace, tmp_path):
    _, cfg, _, data = workspace
    out = tmp_path / "abl"
    assert main(["ablate", "--config", cfg, "--data", str(data), "--out", str(out),
                 "--set", "train.max_epochs=1"]) == EXIT_OK
    reports = sorted(p.name for p in out.glob("report_*.json"))
    assert reports == ["report_occupancy.json", "report_occupancy_speed.json",
                       "report_occupancy_speed_weather.json", "report_occupancy_weather.json"]
    assert len(list(out.glob("delta_*.csv"))) == 3
    for f in out.glob("delta_*.csv"):
        assert len(f.read_text().splitlines()) == 5
    table = tmp_path / "table"
    assert main(["report", str(out), "--out", str(table)]) == EXIT_OK
    assert len((table / "table.csv").read_text().splitlines()) == 5


def test_ablate_rejects_subset_without_occupancy(workspace, tmp_path):
    _, cfg, _, data = workspace
    code = main(["ablate", "--config", cfg, "--data", str(data), "--out", str(tmp_path / "a"),
                 "--set", 'ablation.subsets=[["speed"]]'])
    assert code == EXIT_CONFIG


def test_gridsearch(workspace, tmp_path):
    _, cfg, _, data = workspace
    out = tmp_path / "gs"
    assert main(["gridsearch", "--config", cfg, "--data", str(data), "--out", str(out),
                 "--set", 'gridsearch.axes={"learning_rate": [0.003, 0.001], "activation": ["relu", "sigmoid"]}',
                 "--set", "gridsearch.max_epochs=1"]) == EXIT_OK
    rows = list(csv.DictReader(open(out / "gridsearch.csv")))
    assert [int(r["rank"]) for r in rows] == [1, 2, 3, 4]
    assert main(["gridsearch", "--config", cfg, "--data", str(data), "--out", str(out),
                 "--set", 'gridsearch.axes={"bogus": [1]}']) == EXIT_CONFIG


def test_module_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "parkcast", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("generate", "preprocess", "train", "predict", "evaluate", "ablate", "gridsearch", "report"):
        assert cmd in res.stdout
