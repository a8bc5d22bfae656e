"""Run configuration: a single YAML file with defaults for every setting.

Schema (all keys optional except ``data.tickers``)::

    seed: 0
    out_dir: runs/default
    data:
      column: High
      tickers: {GOOG: path/to/GOOG.csv, ...}   # relative to the config file
    splits:
      lstm:  {train_end: 2015-12-31, val_end: 2017-12-31, test_end: 2018-12-31}
      arima: {train_start: 2015-12-31, train_end: 2017-12-31, test_end: 2018-12-31}
    arima:
      d: auto            # or 0, 1, 2
      order: [1, 0, 1]   # explicit order; omit or null to grid search
      p_max: 2
      q_max: 2
      criterion: bic
      extra_orders: [[1, 0, 0]]
      refit_every: null
      correlogram_lags: 20
    lstm:
      window: 60
      units: [100, 100, 100]
      dropout: 0.1
      epochs: 50
      batch_size: 32
      learning_rate: 0.001
      adam_beta1: 0.9
      adam_beta2: 0.999
      adam_epsilon: 1.0e-8
      shuffle: true
"""
from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import yaml

from .dataset import ARIMA_SPLIT, DEFAULT_COLUMN, DEFAULT_WINDOW, LSTM_SPLIT, SplitSpec
from .lstm import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class ArimaSettings:
    d: Union[int, str] = "auto"
    order: Optional[tuple] = None
    p_max: int = 2
    q_max: int = 2
    criterion: str = "bic"
    extra_orders: list = field(default_factory=list)
    refit_every: Optional[int] = None
    correlogram_lags: int = 20


@dataclass
class LstmSettings:
    window: int = DEFAULT_WINDOW
    units: list = field(default_factory=lambda: [100, 100, 100])
    dropout: float = 0.1
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    shuffle: bool = True

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_epsilon=self.adam_epsilon,
            seed=seed,
            shuffle=self.shuffle,
        )


@dataclass
class RunConfig:
    tickers: dict  # ticker -> resolved Path
    column: str = DEFAULT_COLUMN
    lstm_split: SplitSpec = LSTM_SPLIT
    arima_split: SplitSpec = ARIMA_SPLIT
    arima: ArimaSettings = field(default_factory=ArimaSettings)
    lstm: LstmSettings = field(default_factory=LstmSettings)
    out_dir: Path = Path("runs/default")
    seed: int = 0
    source: Optional[Path] = None

    def select(self, ticker: Optional[str]) -> "RunConfig":
        """Copy restricted to one ticker (None keeps all)."""
        if ticker is None:
            return self
        if ticker not in self.tickers:
            raise ConfigError(f"unknown ticker {ticker!r}; configured: {sorted(self.tickers)}")
        return dataclasses.replace(self, tickers={ticker: self.tickers[ticker]})

    def _data_part(self, ticker):
        path = self.tickers[ticker]
        return {
            "ticker": ticker,
            "column": self.column,
            "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
        }

    def fingerprint(self, ticker: str, family: str) -> str:
        """Hash of every resolved setting that affects ``family`` artifacts for ``ticker``."""
        payload = {"data": self._data_part(ticker), "seed": self.seed}
        if family == "lstm":
            payload["split"] = _split_dict(self.lstm_split)
            payload["lstm"] = dataclasses.asdict(self.lstm)
        elif family == "arima":
            payload["split"] = _split_dict(self.arima_split)
            payload["arima"] = dataclasses.asdict(self.arima)
        else:
            raise ValueError(family)
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def run_fingerprint(self) -> str:
        parts = {t: [self.fingerprint(t, "arima"), self.fingerprint(t, "lstm")]
                 for t in sorted(self.tickers)}
        return hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest()[:16]


def _split_dict(s: SplitSpec) -> dict:
    return {k: (None if v is None else v.isoformat()) for k, v in dataclasses.asdict(s).items()}


def _date(v, key):
    if v is None or isinstance(v, dt.date):
        return v
    try:
        return dt.date.fromisoformat(str(v))
    except ValueError:
        raise ConfigError(f"{key}: expected YYYY-MM-DD, got {v!r}") from None


def _split(raw: Optional[dict], default: SplitSpec, key: str) -> SplitSpec:
    if raw is None:
        return default
    if not isinstance(raw, dict):
        raise ConfigError(f"{key} must be a mapping")
    unknown = set(raw) - {"train_start", "train_end", "val_end", "test_end"}
    if unknown:
        raise ConfigError(f"{key}: unknown keys {sorted(unknown)}")
    merged = {**dataclasses.asdict(default), **{k: _date(v, f"{key}.{k}") for k, v in raw.items()}}
    try:
        return SplitSpec(**merged)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _settings(cls, raw, key):
    raw = raw or {}
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"{key}: unknown keys {sorted(unknown)}")
    return cls(**raw)


def from_dict(raw: dict, base_dir: Path = Path(".")) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - {"seed", "out_dir", "data", "splits", "arima", "lstm"}
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    data = raw.get("data") or {}
    tickers_raw = data.get("tickers")
    if not tickers_raw or not isinstance(tickers_raw, dict):
        raise ConfigError("data.tickers must map ticker symbols to CSV paths")
    tickers = {}
    for t, p in tickers_raw.items():
        path = Path(p)
        if not path.is_absolute():
            path = base_dir / path
        if not path.is_file():
            raise ConfigError(f"data.tickers.{t}: file not found: {path}")
        tickers[str(t)] = path.resolve()

    splits = raw.get("splits") or {}
    arima = _settings(ArimaSettings, raw.get("arima"), "arima")
    if isinstance(arima.d, str) and arima.d != "auto":
        raise ConfigError("arima.d must be 'auto' or an integer 0..2")
    if not isinstance(arima.d, str) and not 0 <= arima.d <= 2:
        raise ConfigError("arima.d must be 'auto' or an integer 0..2")
    if arima.order is not None:
        if len(arima.order) != 3:
            raise ConfigError("arima.order must be [p, d, q]")
        arima.order = tuple(int(v) for v in arima.order)
    arima.extra_orders = [tuple(int(v) for v in o) for o in arima.extra_orders]
    if arima.criterion.lower() not in ("aic", "bic"):
        raise ConfigError("arima.criterion must be aic or bic")
    arima.criterion = arima.criterion.lower()

    lstm = _settings(LstmSettings, raw.get("lstm"), "lstm")
    if isinstance(lstm.units, int):
        lstm.units = [lstm.units] * 3
    lstm.units = [int(u) for u in lstm.units]
    try:
        lstm.train_config(0)
    except ValueError as exc:
        raise ConfigError(f"lstm: {exc}") from None
    if not 0 <= lstm.dropout < 1:
        raise ConfigError("lstm.dropout must lie in [0, 1)")
    if lstm.window < 1 or not lstm.units or min(lstm.units) < 1:
        raise ConfigError("lstm.window and lstm.units must be positive")

    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    out_dir = Path(raw.get("out_dir", "runs/default"))
    if not out_dir.is_absolute():
        out_dir = base_dir / out_dir
    return RunConfig(
        tickers=tickers,
        column=data.get("column", DEFAULT_COLUMN),
        lstm_split=_split(splits.get("lstm"), LSTM_SPLIT, "splits.lstm"),
        arima_split=_split(splits.get("arima"), ARIMA_SPLIT, "splits.arima"),
        arima=arima,
        lstm=lstm,
        out_dir=out_dir,
        seed=seed,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    cfg = from_dict(raw, base_dir=path.parent)
    cfg.source = path.resolve()
    return cfg
