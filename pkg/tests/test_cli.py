import datetime as dt
import hashlib
import json

import numpy as np
import pytest

from stockcast import pipeline
from stockcast.arima import simulate_arma
from stockcast.cli import main
from stockcast.config import load_config
from stockcast.synthetic import business_days

from conftest import FIXTURES, write_price_csv

TINY_LSTM = {"window": 10, "units": [4], "dropout": 0.0, "epochs": 2, "batch_size": 64,
             "learning_rate": 0.01}


@pytest.fixture
def tiny(write_config, tmp_path):
    """Config over the shipped fixtures with a very small LSTM."""

    def _make(tickers=("GOOG",), out="out", **over):
        raw = {"data": {"tickers": {t: str(FIXTURES / f"{t}.csv") for t in tickers}},
               "arima": {"order": [1, 0, 1]}, "lstm": dict(TINY_LSTM),
               "out_dir": str(tmp_path / out)}
        for k, v in over.items():
            raw[k] = {**raw.get(k, {}), **v} if isinstance(v, dict) else v
        return write_config(raw, f"{out}.yaml")

    return _make


def _synthetic_csv(tmp_path, name, values):
    dates = business_days(dt.date(2016, 1, 1), dt.date(2018, 12, 31))
    return write_price_csv(tmp_path / f"{name}.csv", dates, values[:len(dates)])


def _digest(path):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(path.iterdir())}


# ---------------------------------------------------------------- analyze

def test_analyze_outputs(tiny, tmp_path):
    cfg = tiny(arima={"order": None, "p_max": 2, "q_max": 2})
    assert main(["analyze", "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    text = (out / "adf_GOOG.txt").read_text()
    for key in ("statistic:", "critical_value_1%", "critical_value_5%", "critical_value_10%"):
        assert key in text
    cells = [c for row in (out / "bic_GOOG.csv").read_text().splitlines()[1:]
             for c in row.split(",")[1:] if c]
    assert len(cells) == 9
    assert (out / "bic_GOOG.svg").read_text().lstrip().startswith("<?xml")
    for name in ("diff1_GOOG.csv", "diff2_GOOG.csv", "acf_GOOG.csv", "pacf_GOOG.csv"):
        assert (out / name).is_file()
    manifest = json.loads((out / "manifest_analyze.json").read_text())
    assert set(manifest["fingerprints"]) == {"GOOG"}
    assert "adf_GOOG.txt" in manifest["files"]


def test_analyze_recommends_d1_for_random_walk(write_config, tmp_path):
    walk = 100 + np.cumsum(np.random.default_rng(3).normal(size=800))
    csv = _synthetic_csv(tmp_path, "RW", walk)
    cfg = write_config({"data": {"tickers": {"RW": str(csv)}}, "out_dir": str(tmp_path / "o")})
    assert main(["analyze", "--config", str(cfg)]) == 0
    text = (tmp_path / "o" / "adf_RW.txt").read_text()
    assert "recommended_d: 1" in text
    level, first = text.split("# difference 1")[0], text.split("# difference 1")[1]
    assert "reject_at_5%: false" in level and "reject_at_5%: true" in first.split("#")[0]


def test_analyze_is_idempotent_and_leaves_inputs_alone(tiny, tmp_path):
    cfg = tiny()
    src = FIXTURES / "GOOG.csv"
    before = hashlib.sha256(src.read_bytes()).hexdigest()
    assert main(["analyze", "--config", str(cfg)]) == 0
    first = _digest(tmp_path / "out")
    assert main(["analyze", "--config", str(cfg)]) == 0
    assert _digest(tmp_path / "out") == first
    assert hashlib.sha256(src.read_bytes()).hexdigest() == before


# ---------------------------------------------------------------- fit-arima

def test_fit_arima_explicit_order(tiny, tmp_path):
    assert main(["fit-arima", "--config", str(tiny())]) == 0
    ckpt = json.loads((tmp_path / "out" / "arima_GOOG.json").read_text())
    m = ckpt["model"]
    assert m["order"] == [1, 0, 1] and len(m["phi"]) == 1 and len(m["theta"]) == 1
    assert isinstance(m["intercept"], float)
    assert len(ckpt["fingerprint"]) == 16
    report = (tmp_path / "out" / "arima_GOOG_report.txt").read_text()
    assert "ar.L1" in report and "ma.L1" in report and "residual lags inside band" in report


def test_fit_arima_selects_ar1(write_config, tmp_path):
    hits = 0
    for seed in range(10):
        csv = _synthetic_csv(tmp_path, f"A{seed}", 50 + simulate_arma([0.7], [], 800, rng=seed))
        cfg = write_config({"data": {"tickers": {"A": str(csv)}}, "arima": {"d": 0},
                            "out_dir": str(tmp_path / f"o{seed}")}, f"c{seed}.yaml")
        order = pipeline.cmd_fit_arima(load_config(cfg))["A"]["ARIMA"].order
        hits += (order.p, order.q) == (1, 0)
    assert hits >= 8


def test_fit_arima_extra_orders(tiny, tmp_path):
    cfg = tiny(arima={"order": None, "d": 0, "extra_orders": [[1, 0, 0], [0, 0, 1]]})
    assert main(["fit-arima", "--config", str(cfg)]) == 0
    names = {p.name for p in (tmp_path / "out").iterdir()}
    assert {"arima_GOOG.json", "arima_GOOG_ARIMA-0-0-1.json", "grid_GOOG.csv"} <= names


def test_unwritable_output_leaves_nothing(tiny, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = tiny()
    assert main(["fit-arima", "--config", str(cfg), "--out", str(blocker / "sub")]) == 2
    assert blocker.read_text() == "x"
    assert not (tmp_path / "out").exists()


def test_failed_run_writes_no_partial_files(tiny, tmp_path, monkeypatch):
    cfg = tiny(tickers=("AAPL", "GOOG"))
    calls = []

    def boom(*a, **k):
        calls.append(1)
        if len(calls) == 2:
            raise pipeline.ar.ConvergenceError("cell (1,1) did not converge")
        return real(*a, **k)

    real = pipeline.ar.fit
    monkeypatch.setattr(pipeline.ar, "fit", boom)
    assert main(["fit-arima", "--config", str(cfg)]) == 3
    assert not (tmp_path / "out").exists()


# ---------------------------------------------------------------- train-lstm

def test_train_lstm_sine(tiny, tmp_path):
    cfg = tiny(tickers=("SINE",), lstm={"epochs": 4})
    assert main(["train-lstm", "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    loss = np.loadtxt(out / "loss_SINE.csv", delimiter=",", skiprows=1)
    assert loss.shape == (4, 3)
    assert loss[-1, 1] < loss[0, 1] and loss[-1, 2] < loss[0, 2]
    ckpt = json.loads((out / "lstm_SINE.json").read_text())
    assert ckpt["kind"] == "lstm" and ckpt["scores"]["val"] < 1e-2
    assert set(ckpt["scaler"]) == {"min", "max"}


def test_train_lstm_twice_is_identical(tiny, tmp_path):
    cfg = tiny()
    assert main(["train-lstm", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["train-lstm", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_window_longer_than_training_fails_before_training(tiny, tmp_path, monkeypatch):
    monkeypatch.setattr(pipeline.lm, "train", lambda *a, **k: pytest.fail("trained"))
    cfg = tiny(lstm={"window": 5000})
    assert main(["train-lstm", "--config", str(cfg)]) == 2
    assert not (tmp_path / "out").exists()


# ---------------------------------------------------------------- sweep

def _sweep_rows(path):
    return [l.split(",") for l in path.read_text().splitlines()[1:]]


def test_sweep_dropout_table(tiny, tmp_path):
    cfg = tiny()
    assert main(["sweep", "--config", str(cfg), "--dimension", "dropout",
                 "--values", "0.1", "0.2", "0.5"]) == 0
    rows = _sweep_rows(tmp_path / "out" / "sweep_dropout_GOOG.csv")
    assert [r[0] for r in rows] == ["0.1", "0.2", "0.5"]
    assert all(np.isfinite([float(x) for x in r[1:4]]).all() and r[4] == "ok" for r in rows)
    text = (tmp_path / "out" / "sweep_dropout_GOOG.txt").read_text()
    assert "train score" in text and "test score" in text


def test_single_value_sweep_matches_training_run(tiny, tmp_path):
    cfg = tiny()
    assert main(["sweep", "--config", str(cfg), "--dimension", "dropout", "--values", "0"]) == 0
    assert main(["train-lstm", "--config", str(cfg)]) == 0
    row = _sweep_rows(tmp_path / "out" / "sweep_dropout_GOOG.csv")[0]
    scores = json.loads((tmp_path / "out" / "lstm_GOOG.json").read_text())["scores"]
    assert [float(x) for x in row[1:4]] == [scores["train"], scores["val"], scores["test"]]


def test_sweep_layers_table(tiny, tmp_path):
    cfg = tiny(lstm={"epochs": 1})
    assert main(["sweep", "--config", str(cfg), "--dimension", "layers", "--values", "3", "4"]) == 0
    assert len(_sweep_rows(tmp_path / "out" / "sweep_layers_GOOG.csv")) == 2


def test_sweep_records_failed_cells(tiny, tmp_path, monkeypatch):
    real = pipeline.lm.train

    def flaky(stack, *a, **k):
        if stack.dropout_rates[0] == 0.2:
            raise pipeline.lm.TrainingDiverged("non-finite loss")
        return real(stack, *a, **k)

    monkeypatch.setattr(pipeline.lm, "train", flaky)
    cfg = tiny(lstm={"epochs": 1})
    assert main(["sweep", "--config", str(cfg), "--dimension", "dropout",
                 "--values", "0.1", "0.2"]) == 0
    rows = _sweep_rows(tmp_path / "out" / "sweep_dropout_GOOG.csv")
    assert rows[0][4] == "ok" and rows[1][4].startswith("failed")


def test_sweep_rejects_fractional_layers(tiny):
    assert main(["sweep", "--config", str(tiny()), "--dimension", "layers", "--values", "2.5"]) == 1


# ---------------------------------------------------------------- backtest

FOUR = ("GOOG", "AAPL", "AMZN", "NFLX")


def test_backtest_end_to_end_four_tickers(tiny, tmp_path):
    cfg = tiny(tickers=FOUR, lstm={"epochs": 1})
    assert main(["backtest", "--config", str(cfg), "--end-to-end", "--no-plots"]) == 0
    rows = [l.split(",") for l in (tmp_path / "out" / "metrics.csv").read_text().splitlines()[1:]]
    per_ticker = [r for r in rows if r[0] != "POOLED"]
    assert sorted({r[0] for r in per_ticker}) == sorted(FOUR)
    assert sorted({r[1] for r in per_ticker}) == ["ARIMA", "LSTM"]
    assert len(per_ticker) == 8 and all(len(r) == 6 for r in per_ticker)
    assert {r[1] for r in rows if r[0] == "POOLED"} == {"ARIMA", "LSTM"}
    names = {p.name for p in (tmp_path / "out").iterdir()}
    assert {"lstm_GOOG.json", "arima_NFLX.json", "trace_AMZN_LSTM.csv"} <= names


def test_backtest_from_checkpoints_matches_end_to_end(tiny, tmp_path):
    cfg = tiny()
    for cmd in ("fit-arima", "train-lstm", "backtest"):
        assert main([cmd, "--config", str(cfg)]) == 0
    assert main(["backtest", "--config", str(cfg), "--end-to-end",
                 "--out", str(tmp_path / "e2e")]) == 0
    for name in ("metrics.csv", "trace_GOOG_ARIMA.csv", "trace_GOOG_LSTM.csv"):
        assert (tmp_path / "out" / name).read_bytes() == (tmp_path / "e2e" / name).read_bytes()


def test_backtest_rejects_stale_checkpoints(tiny, tmp_path, capsys):
    cfg = tiny()
    for cmd in ("fit-arima", "train-lstm"):
        assert main([cmd, "--config", str(cfg)]) == 0
    assert main(["backtest", "--config", str(cfg), "--seed", "7"]) == 1
    assert "fingerprint" in capsys.readouterr().err


def test_backtest_without_checkpoints(tiny):
    assert main(["backtest", "--config", str(tiny())]) == 1


def test_backtest_perfect_oracle_scores_zero(tiny, tmp_path, monkeypatch):
    monkeypatch.setattr(pipeline.ar, "rolling_forecast", lambda m, train, test, *a: np.array(test))
    cfg = tiny(lstm={"epochs": 1})
    assert main(["backtest", "--config", str(cfg), "--end-to-end", "--no-plots"]) == 0
    rows = [l.split(",") for l in (tmp_path / "out" / "metrics.csv").read_text().splitlines()]
    arima = [r for r in rows if r[:2] == ["GOOG", "ARIMA"]][0]
    assert [float(x) for x in arima[2:5]] == [0.0, 0.0, 0.0]


def test_misaligned_test_windows_rejected(tiny):
    cfg = tiny(splits={"arima": {"test_end": "2018-06-29"}})
    assert main(["backtest", "--config", str(cfg), "--end-to-end"]) == 1


# ---------------------------------------------------------------- entry point

def test_usage_errors_exit_1(tmp_path):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["analyze", "--config", str(tmp_path / "none.yaml")]) == 1


def test_bad_data_exits_2(write_config, tmp_path):
    csv = tmp_path / "bad.csv"
    csv.write_text("Date,High\n2018-01-02,null\n")
    cfg = write_config({"data": {"tickers": {"B": str(csv)}}})
    assert main(["analyze", "--config", str(cfg)]) == 2
