import datetime as dt

import pytest

from stockcast.config import ConfigError, load_config
from stockcast.dataset import ARIMA_SPLIT, LSTM_SPLIT

from conftest import CONFIGS, FIXTURES


def _raw(**over):
    raw = {"data": {"tickers": {"GOOG": str(FIXTURES / "GOOG.csv")}}}
    raw.update(over)
    return raw


def test_defaults(write_config):
    cfg = load_config(write_config(_raw()))
    assert cfg.column == "High" and cfg.seed == 0
    assert cfg.lstm_split == LSTM_SPLIT and cfg.arima_split == ARIMA_SPLIT
    assert cfg.lstm.units == [100, 100, 100] and cfg.lstm.dropout == 0.1
    assert cfg.lstm.window == 60 and cfg.lstm.epochs == 50 and cfg.lstm.batch_size == 32
    assert cfg.arima.d == "auto" and cfg.arima.criterion == "bic"
    assert cfg.arima.refit_every is None


def test_paths_resolve_relative_to_config(tmp_path):
    cfg = load_config(CONFIGS / "compare.yaml")
    assert cfg.tickers["GOOG"] == (FIXTURES / "GOOG.csv").resolve()
    assert cfg.arima.order == (1, 0, 1)


def test_shipped_configs_load():
    for path in CONFIGS.glob("*.yaml"):
        load_config(path)


def test_split_override(write_config):
    cfg = load_config(write_config(_raw(splits={"lstm": {"val_end": "2017-06-30"}})))
    assert cfg.lstm_split.val_end == dt.date(2017, 6, 30)
    assert cfg.lstm_split.train_end == LSTM_SPLIT.train_end


@pytest.mark.parametrize(
    "over, match",
    [
        ({"lstm": {"unit": 3}}, "unknown"),
        ({"bogus": 1}, "unknown"),
        ({"arima": {"d": 3}}, "arima.d"),
        ({"arima": {"d": "one"}}, "arima.d"),
        ({"arima": {"criterion": "hqic"}}, "criterion"),
        ({"lstm": {"dropout": 1.0}}, "dropout"),
        ({"lstm": {"epochs": 0}}, "epochs"),
        ({"splits": {"lstm": {"val_end": "2015-01-01"}}}, "splits.lstm"),
        ({"splits": {"arima": {"train_end": "31/12/2017"}}}, "YYYY-MM-DD"),
        ({"seed": "zero"}, "seed"),
        ({"data": {"tickers": {"X": "missing.csv"}}}, "not found"),
        ({"data": {}}, "tickers"),
    ],
)
def test_invalid_configs(write_config, over, match):
    with pytest.raises(ConfigError, match=match):
        load_config(write_config(_raw(**over)))


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("data: [unclosed\n")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(bad)


def test_fingerprints_track_relevant_settings(write_config):
    base = load_config(write_config(_raw(), "a.yaml"))
    lstm_change = load_config(write_config(_raw(lstm={"dropout": 0.2}), "b.yaml"))
    arima_change = load_config(write_config(_raw(arima={"p_max": 3}), "c.yaml"))
    fp = lambda c, f: c.fingerprint("GOOG", f)
    assert fp(base, "lstm") != fp(lstm_change, "lstm")
    assert fp(base, "arima") == fp(lstm_change, "arima")
    assert fp(base, "arima") != fp(arima_change, "arima")
    assert fp(base, "lstm") == fp(load_config(write_config(_raw(), "d.yaml")), "lstm")


def test_fingerprint_tracks_data_content(tmp_path, write_config):
    csv = tmp_path / "x.csv"
    csv.write_bytes((FIXTURES / "GOOG.csv").read_bytes())
    cfg = load_config(write_config({"data": {"tickers": {"GOOG": str(csv)}}}))
    before = cfg.fingerprint("GOOG", "arima")
    csv.write_text(csv.read_text().replace("2018-12-31,", "2018-12-31,1", 1))
    assert cfg.fingerprint("GOOG", "arima") != before


def test_select_ticker(write_config):
    cfg = load_config(CONFIGS / "compare.yaml")
    assert list(cfg.select("AAPL").tickers) == ["AAPL"]
    with pytest.raises(ConfigError, match="unknown ticker"):
        cfg.select("MSFT")
