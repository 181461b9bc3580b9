import csv
import json

import numpy as np
import pandas as pd
import pytest

from mdstnet.cli import build_config, main
from mdstnet.data import load_dataset
from mdstnet.exceptions import ConfigError

SMALL = {
    "model": {"history": 6, "horizon": 4, "d_model": 8, "depth": 1, "heads": 2,
              "spa_tokens": 2, "pva_tokens": 2, "mva_tokens": 1},
    "train": {"epochs": 1, "batch_size": 16, "lr": 0.001},
    "data": {"synthetic": {"n_stations": 4, "n_steps": 120, "spinup": 10}},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    assert main(["gen-data", "--config", str(cfg), "--out", str(root / "data")]) == 0
    assert main(["train", "--config", str(cfg), "--data", str(root / "data"),
                 "--out", str(root / "run")]) == 0
    return root


class TestConfig:
    def test_defaults_and_override(self):
        cfg = build_config(overrides=["model.depth=2", "train.lr=0.01"])
        assert cfg["model"]["depth"] == 2 and cfg["train"]["lr"] == 0.01

    def test_unknown_keys_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            build_config(overrides=["model.layers=2"])
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"optim": {}}))
        with pytest.raises(ConfigError):
            build_config(p)
        p.write_text(json.dumps({"data": {"synthetic": {"n_stationz": 3}}}))
        with pytest.raises(ConfigError):
            build_config(p)

    def test_invalid_value_rejected(self):
        with pytest.raises(ConfigError):
            build_config(overrides=["model.d_model=10"])

    def test_ablation_flags(self):
        cfg = build_config(ablate=["zero-forecast", "disable-mva"])
        assert cfg["ablation"]["zero_forecast"] and cfg["ablation"]["disable_mva"]
        assert not cfg["ablation"]["disable_spa"]


class TestExitCodes:
    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_bad_config_exits_2(self, tmp_path):
        assert main(["gen-data", "--set", "model.nope=1", "--out", str(tmp_path / "x")]) == 2

    def test_missing_data_exits_4(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "r")]) == 4

    def test_divergence_exits_3(self, workspace, tmp_path):
        assert main(["train", "--config", str(workspace / "cfg.json"), "--set", "train.lr=1e9",
                     "--data", str(workspace / "data"), "--out", str(tmp_path / "r")]) == 3

    def test_refuses_to_overwrite(self, workspace):
        assert main(["gen-data", "--config", str(workspace / "cfg.json"),
                     "--out", str(workspace / "data")]) == 4


def test_gen_data(workspace):
    ds = load_dataset(workspace / "data")
    assert ds.aq.shape == (120, 4, 3) and ds.mete.shape == (120, 4, 6)
    echoed = json.load(open(workspace / "data" / "config.json"))
    assert echoed["data"]["synthetic"]["n_steps"] == 120


def test_train_artifacts(workspace):
    run = workspace / "run"
    for name in ("config.json", "params.npz", "state.json", "loss_trace.csv", "step_losses.csv"):
        assert (run / name).exists()
    trace = list(csv.DictReader(open(run / "loss_trace.csv")))
    assert len(trace) == 1 and float(trace[0]["train_loss"]) > 0


def test_rerun_from_echoed_config_is_bit_identical(workspace, tmp_path):
    assert main(["train", "--config", str(workspace / "run" / "config.json"),
                 "--out", str(tmp_path / "again")]) == 0
    a = np.load(workspace / "run" / "params.npz")
    b = np.load(tmp_path / "again" / "params.npz")
    assert sorted(a.files) == sorted(b.files)
    for k in a.files:
        assert a[k].tobytes() == b[k].tobytes()
    assert (open(workspace / "run" / "step_losses.csv").read()
            == open(tmp_path / "again" / "step_losses.csv").read())


def test_eval_writes_report(workspace, tmp_path):
    out = tmp_path / "ev"
    assert main(["eval", "--run", str(workspace / "run"), "--out", str(out), "--baselines"]) == 0
    rows = list(csv.DictReader(open(out / "metrics.csv")))
    assert {r["band"] for r in rows} == {"1-4h"}
    assert json.load(open(out / "metrics.json"))["n_samples"] > 0
    assert (out / "metrics_persistence.csv").exists()


def test_predict_csv(workspace, tmp_path):
    out = tmp_path / "f.csv"
    assert main(["predict", "--run", str(workspace / "run"), "--out", str(out)]) == 0
    table = pd.read_csv(out)
    assert list(table.columns) == ["timestamp", "station", "variate", "value"]
    assert len(table) == 4 * 3 * 4
    assert table["timestamp"].nunique() == 4


def test_eval_identical_csvs_all_zero(workspace, tmp_path):
    pred = tmp_path / "f.csv"
    main(["predict", "--run", str(workspace / "run"), "--out", str(pred), "--all"])
    out = tmp_path / "ev"
    assert main(["eval", "--pred-csv", str(pred), "--truth-csv", str(pred), "--out", str(out)]) == 0
    values = [float(r["value"]) for r in csv.DictReader(open(out / "metrics.csv"))]
    assert values and all(v == 0.0 for v in values)


def test_dump_attention_rows_sum_to_one(workspace, tmp_path):
    out = tmp_path / "att.csv"
    assert main(["dump-attention", "--run", str(workspace / "run"), "--out", str(out)]) == 0
    table = pd.read_csv(out)
    assert list(table.columns) == ["module", "layer", "stage", "slice", "query_id", "key_id",
                                   "head", "score"]
    assert {"enc.spa", "enc.pva", "enc.mva", "dec.prompt", "dec.dsa", "dec.dva"} <= set(table.module)
    sums = table.groupby(["module", "layer", "stage", "slice", "query_id", "head"]).score.sum()
    assert np.abs(sums - 1.0).max() < 1e-6


def test_gradcheck_default_tiny(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert float(out.split()[3]) < 1e-4
