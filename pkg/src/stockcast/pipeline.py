"""End-to-end commands: diagnostics, ARIMA fitting, LSTM training, sweeps, backtests.

Each command writes its files into a private staging directory and only
moves them into the output directory once everything has been computed,
so a failing run leaves no partial artifacts behind.
"""
from __future__ import annotations

import contextlib
import hashlib
import io
import json
import logging
import os
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import arima as ar
from . import lstm as lm
from .config import ConfigError, RunConfig
from .dataset import (
    DataError,
    PriceSeries,
    Scaler,
    denormalize,
    fit_scaler,
    load_csv,
    make_windows,
    normalize,
    split,
    windows_for_partition,
)
from .evaluate import Trace, _table, compare, emit_report, plot_heatmap_svg
from .stationarity import acf, adf_test, difference, pacf, select_d

log = logging.getLogger(__name__)

SWEEP_DIMENSIONS = ("dropout", "layers", "units")


# ---------------------------------------------------------------- file plumbing

@contextlib.contextmanager
def staged_output(out_dir, command: str, fingerprints: dict):
    """Yield a scratch directory; on success move its files into ``out_dir``.

    A ``manifest_<command>.json`` listing every file's sha256 and the config
    fingerprints is written alongside.
    """
    out_dir = Path(out_dir)
    with tempfile.TemporaryDirectory(prefix="stockcast-") as tmp:
        tmp = Path(tmp)
        yield tmp
        files = sorted(p for p in tmp.iterdir() if p.is_file())
        manifest = {
            "command": command,
            "fingerprints": fingerprints,
            "files": {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in files},
        }
        (tmp / f"manifest_{command}.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        )
        files = sorted(p for p in tmp.iterdir() if p.is_file())
        out_dir.mkdir(parents=True, exist_ok=True)
        for p in files:
            part = out_dir / f".{p.name}.part"
            shutil.copyfile(p, part)
            os.replace(part, out_dir / p.name)


def _write_series_csv(path: Path, dates, values):
    lines = ["date,value"] + [f"{d},{float(v)!r}" for d, v in zip(dates, values)]
    path.write_text("\n".join(lines) + "\n")


def _header(fingerprint: str, title: str) -> str:
    return f"# {title}\n# fingerprint: {fingerprint}\n"


# ---------------------------------------------------------------- data helpers

def load_series(cfg: RunConfig, ticker: str) -> PriceSeries:
    return load_csv(cfg.tickers[ticker], column=cfg.column, ticker=ticker)


@dataclass
class LstmData:
    scaler: Scaler
    train: PriceSeries
    val: PriceSeries
    test: PriceSeries
    train_set: object
    val_set: object
    test_set: object

    def test_seed_window(self, window: int) -> np.ndarray:
        context = normalize(np.concatenate([self.train.values, self.val.values]), self.scaler)
        return context[-window:]


def lstm_data(cfg: RunConfig, ticker: str, series: Optional[PriceSeries] = None) -> LstmData:
    series = series if series is not None else load_series(cfg, ticker)
    if cfg.lstm_split.val_end is None:
        raise ConfigError("splits.lstm needs val_end: training keeps the best-validation snapshot")
    train, val, test = split(series, cfg.lstm_split)
    scaler = fit_scaler(train)
    w = cfg.lstm.window
    tr, va, te = (normalize(p.values, scaler) for p in (train, val, test))
    train_set = make_windows(tr, w)
    val_set = windows_for_partition(tr, va, w)
    test_set = windows_for_partition(np.concatenate([tr, va]), te, w)
    return LstmData(scaler, train, val, test, train_set, val_set, test_set)


def arima_partitions(cfg: RunConfig, ticker: str, series: Optional[PriceSeries] = None):
    series = series if series is not None else load_series(cfg, ticker)
    train, _, test = split(series, cfg.arima_split)
    return train, test


# ---------------------------------------------------------------- ARIMA

@dataclass
class OrderSelection:
    order: ar.ArimaOrder
    d_source: str  # "config", "adf" or "explicit"
    adf: list
    grid: Optional[ar.GridSearchResult]


def resolve_d(cfg: RunConfig, values) -> tuple[int, str, list]:
    if cfg.arima.d == "auto":
        d, results = select_d(values)
        return d, "adf", results
    return int(cfg.arima.d), "config", []


def select_order(cfg: RunConfig, values, seed: int) -> OrderSelection:
    if cfg.arima.order is not None:
        return OrderSelection(ar.ArimaOrder(*cfg.arima.order), "explicit", [], None)
    d, source, results = resolve_d(cfg, values)
    grid = ar.grid_search(values, cfg.arima.p_max, cfg.arima.q_max, d, cfg.arima.criterion, seed)
    return OrderSelection(grid.best_order, source, results, grid)


def model_label(order: ar.ArimaOrder) -> str:
    return f"ARIMA-{order.p}-{order.d}-{order.q}"


def fit_arima_models(cfg: RunConfig, ticker: str, train_values) -> tuple[OrderSelection, dict]:
    """Primary model under key "ARIMA" plus one entry per extra order."""
    sel = select_order(cfg, train_values, cfg.seed)
    # standalone fit: the grid's cells condition on p_max values, not p
    primary = ar.fit(train_values, sel.order, seed=cfg.seed)
    models = {"ARIMA": primary}
    for o in cfg.arima.extra_orders:
        order = ar.ArimaOrder(*o)
        if order != sel.order:
            models[model_label(order)] = ar.fit(train_values, order, seed=cfg.seed)
    return sel, models


def arima_report_text(fingerprint: str, ticker: str, label: str, model: ar.ArimaModel,
                      sel: Optional[OrderSelection], resid: ar.ResidualCheck) -> str:
    out = io.StringIO()
    out.write(_header(fingerprint, f"{ticker} {label} ARIMA{model.order}"))
    if sel is not None and label == "ARIMA":
        out.write(f"order_source: {sel.d_source if sel.grid is not None else 'explicit'}\n")
        if sel.grid is not None:
            out.write(f"criterion: {sel.grid.criterion}\n")
    out.write(f"sigma2: {model.sigma2!r}\nloglik: {model.loglik!r}\n")
    out.write(f"aic: {ar.aic(model)!r}\nbic: {ar.bic(model)!r}\n")
    out.write(f"stationary: {str(model.stationary).lower()}\n")
    out.write(f"invertible: {str(model.invertible).lower()}\n\n")
    try:
        rows = ar.t_test(model)
        out.write(_table(
            ["param", "estimate", "stderr", "t", "significant"],
            [[r["name"], f"{r['estimate']:.6f}", f"{r['stderr']:.6f}", f"{r['t_stat']:.3f}",
              "yes" if r["significant"] else "no"] for r in rows],
        ))
    except ar.ArimaError as exc:
        out.write(f"t-test unavailable: {exc}\n")
    out.write(
        f"\nresidual lags inside band: {resid.fraction_inside:.3f} "
        f"({'white' if resid.passed else 'NOT white'})\n"
    )
    return out.getvalue()


def cmd_analyze(cfg: RunConfig) -> Path:
    fps = {t: cfg.fingerprint(t, "arima") for t in sorted(cfg.tickers)}
    lags = cfg.arima.correlogram_lags
    with staged_output(cfg.out_dir, "analyze", fps) as tmp:
        for ticker in sorted(cfg.tickers):
            train, _ = arima_partitions(cfg, ticker)
            x = train.values
            d_sel, _ = select_d(x)
            d = d_sel if cfg.arima.d == "auto" else int(cfg.arima.d)
            text = [_header(fps[ticker], f"{ticker} augmented Dickey-Fuller (constant, no trend)")]
            for k in range(3):
                w = difference(x, k)
                label = "level" if k == 0 else f"difference {k}"
                text.append("\n" + adf_test(w).to_text(label))
            text.append(f"\nrecommended_d: {d_sel}\nused_d: {d}\n")
            (tmp / f"adf_{ticker}.txt").write_text("".join(text))
            for k in (1, 2):
                _write_series_csv(tmp / f"diff{k}_{ticker}.csv", train.dates[k:], difference(x, k))
            w = difference(x, d)
            acf(w, lags).to_csv(tmp / f"acf_{ticker}.csv")
            pacf(w, lags).to_csv(tmp / f"pacf_{ticker}.csv")
            grid = ar.grid_search(x, cfg.arima.p_max, cfg.arima.q_max, d, "bic", cfg.seed)
            grid.to_csv(tmp / f"bic_{ticker}.csv", "bic")
            grid.to_csv(tmp / f"aic_{ticker}.csv", "aic")
            plot_heatmap_svg(tmp / f"bic_{ticker}.svg", grid.bic_matrix,
                             f"{ticker}: BIC by ARMA order (d={d})")
    return cfg.out_dir


def cmd_fit_arima(cfg: RunConfig) -> dict:
    fps = {t: cfg.fingerprint(t, "arima") for t in sorted(cfg.tickers)}
    fitted = {}
    with staged_output(cfg.out_dir, "fit-arima", fps) as tmp:
        for ticker in sorted(cfg.tickers):
            train, _ = arima_partitions(cfg, ticker)
            sel, models = fit_arima_models(cfg, ticker, train.values)
            if sel.grid is not None:
                sel.grid.to_csv(tmp / f"grid_{ticker}.csv")
            for label, model in models.items():
                resid = ar.residual_diagnostics(model, train.values, cfg.arima.correlogram_lags)
                stem = f"arima_{ticker}" if label == "ARIMA" else f"arima_{ticker}_{label}"
                ar.save_model(
                    model, tmp / f"{stem}.json",
                    fingerprint=fps[ticker], ticker=ticker, label=label,
                    residual_fraction_inside=resid.fraction_inside,
                    residual_white=resid.passed,
                )
                (tmp / f"{stem}_report.txt").write_text(
                    arima_report_text(fps[ticker], ticker, label, model, sel, resid)
                )
                resid.correlogram.to_csv(tmp / f"{stem}_resid_acf.csv")
            fitted[ticker] = models
    return fitted


# ---------------------------------------------------------------- LSTM

@dataclass
class LstmRun:
    stack: lm.LstmStack
    history: lm.TrainHistory
    scores: dict  # train / val / test MSE on the normalized scale
    data: LstmData


def train_lstm_run(cfg: RunConfig, ticker: str, units=None, dropout=None,
                   data: Optional[LstmData] = None, progress=None) -> LstmRun:
    units = list(cfg.lstm.units if units is None else units)
    dropout = cfg.lstm.dropout if dropout is None else dropout
    data = data if data is not None else lstm_data(cfg, ticker)
    stack = lm.init_stack(units, dropout, cfg.lstm.window, seed=cfg.seed)
    best, history = lm.train(stack, data.train_set, data.val_set,
                             cfg.lstm.train_config(cfg.seed), progress=progress)
    scores = {
        name: lm.mse_loss(lm.predict(best, ds.inputs), ds.targets)
        for name, ds in (("train", data.train_set), ("val", data.val_set), ("test", data.test_set))
    }
    return LstmRun(best, history, scores, data)


def _save_lstm(cfg, ticker, run: LstmRun, tmp: Path, fingerprint: str):
    lm.save_checkpoint(
        run.stack, tmp / f"lstm_{ticker}.json", cfg.lstm.train_config(cfg.seed),
        fingerprint=fingerprint, ticker=ticker,
        scaler={"min": run.data.scaler.min, "max": run.data.scaler.max},
        best_epoch=run.history.best_epoch, scores=run.scores,
    )
    run.history.to_csv(tmp / f"loss_{ticker}.csv")


def cmd_train_lstm(cfg: RunConfig, progress=None) -> dict:
    fps = {t: cfg.fingerprint(t, "lstm") for t in sorted(cfg.tickers)}
    runs = {}
    # precondition checks (windowing, splits) for every ticker before any training
    data = {t: lstm_data(cfg, t) for t in sorted(cfg.tickers)}
    with staged_output(cfg.out_dir, "train-lstm", fps) as tmp:
        for ticker in sorted(cfg.tickers):
            run = train_lstm_run(cfg, ticker, data=data[ticker], progress=progress)
            _save_lstm(cfg, ticker, run, tmp, fps[ticker])
            runs[ticker] = run
    return runs


def _sweep_setting(cfg: RunConfig, dimension: str, value):
    if dimension == "dropout":
        return {"dropout": float(value)}
    if dimension == "layers":
        return {"units": [cfg.lstm.units[0]] * int(value)}
    if dimension == "units":
        return {"units": [int(value)] * len(cfg.lstm.units)}
    raise ConfigError(f"sweep dimension must be one of {SWEEP_DIMENSIONS}")


def cmd_sweep(cfg: RunConfig, dimension: str, values) -> dict:
    """One model per value with the shared seed; failed cells are recorded, not fatal."""
    if dimension not in SWEEP_DIMENSIONS:
        raise ConfigError(f"sweep dimension must be one of {SWEEP_DIMENSIONS}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    settings = [_sweep_setting(cfg, dimension, v) for v in values]
    fps = {t: cfg.fingerprint(t, "lstm") for t in sorted(cfg.tickers)}
    tables = {}
    with staged_output(cfg.out_dir, f"sweep-{dimension}", fps) as tmp:
        for ticker in sorted(cfg.tickers):
            data = lstm_data(cfg, ticker)
            rows = []
            for value, kw in zip(values, settings):
                try:
                    run = train_lstm_run(cfg, ticker, data=data, **kw)
                    rows.append({"value": value, **run.scores, "status": "ok"})
                except (lm.TrainingDiverged, ValueError) as exc:
                    log.warning("sweep %s=%s failed: %s", dimension, value, exc)
                    rows.append({"value": value, "train": float("nan"), "val": float("nan"),
                                 "test": float("nan"), "status": f"failed: {exc}"})
            tables[ticker] = rows
            lines = [f"{dimension},train_score,val_score,test_score,status"]
            lines += [f"{r['value']},{r['train']!r},{r['val']!r},{r['test']!r},{r['status']}"
                      for r in rows]
            (tmp / f"sweep_{dimension}_{ticker}.csv").write_text("\n".join(lines) + "\n")
            text = _header(fps[ticker], f"{ticker} sweep over {dimension} (MSE, normalized scale)")
            text += _table(
                [dimension, "train score", "val score", "test score"],
                [[str(r["value"])] + [f"{r[k]:.6f}" for k in ("train", "val", "test")]
                 for r in rows],
            )
            (tmp / f"sweep_{dimension}_{ticker}.txt").write_text(text)
    return tables


# ---------------------------------------------------------------- backtest

def _checked(meta: dict, expected: str, path: Path):
    got = meta.get("fingerprint")
    if got != expected:
        raise ConfigError(
            f"{path.name} was produced by a different config (fingerprint {got}, "
            f"expected {expected}); re-run fit-arima/train-lstm or pass --end-to-end"
        )


def cmd_backtest(cfg: RunConfig, end_to_end: bool = False, plots: bool = True):
    tickers = sorted(cfg.tickers)
    fps = {t: {"arima": cfg.fingerprint(t, "arima"), "lstm": cfg.fingerprint(t, "lstm")}
           for t in tickers}
    traces = {}
    arima_models, lstm_stacks = {}, {}
    for ticker in tickers:
        series = load_series(cfg, ticker)
        a_train, a_test = arima_partitions(cfg, ticker, series)
        data = lstm_data(cfg, ticker, series)
        if end_to_end:
            _, models = fit_arima_models(cfg, ticker, a_train.values)
            run = train_lstm_run(cfg, ticker, data=data)
            stack = run.stack
            lstm_stacks[ticker] = run
        else:
            path = cfg.out_dir / f"arima_{ticker}.json"
            lpath = cfg.out_dir / f"lstm_{ticker}.json"
            for p in (path, lpath):
                if not p.is_file():
                    raise ConfigError(f"missing checkpoint {p}; run fit-arima and train-lstm "
                                      "first or pass --end-to-end")
            model, meta = ar.load_model(path)
            _checked(meta, fps[ticker]["arima"], path)
            models = {"ARIMA": model}
            for o in cfg.arima.extra_orders:
                label = model_label(ar.ArimaOrder(*o))
                extra = cfg.out_dir / f"arima_{ticker}_{label}.json"
                if extra.is_file():
                    m, meta = ar.load_model(extra)
                    _checked(meta, fps[ticker]["arima"], extra)
                    models[label] = m
            stack, meta = lm.load_checkpoint(lpath)
            _checked(meta, fps[ticker]["lstm"], lpath)
            sc = meta["scaler"]
            if (sc["min"], sc["max"]) != (data.scaler.min, data.scaler.max):
                raise ConfigError(f"{lpath.name}: scaler does not match the training partition")
        arima_models[ticker] = models

        if list(a_test.dates) != list(data.test.dates):
            raise ConfigError(f"{ticker}: ARIMA and LSTM test windows differ; align the splits")
        actual = a_test.values
        per_model = {}
        for label, m in models.items():
            pred = ar.rolling_forecast(m, a_train.values, actual, cfg.arima.refit_every, cfg.seed)
            per_model[label] = Trace(a_test.dates, actual, pred)
        norm = lm.multi_sequence_predict(stack, data.test_seed_window(cfg.lstm.window),
                                         normalize(actual, data.scaler))
        per_model["LSTM"] = Trace(a_test.dates, actual, denormalize(norm, data.scaler))
        traces[ticker] = per_model

    flat = {f"{t}.{fam}": fp for t in tickers for fam, fp in fps[t].items()}
    flat["seed"] = cfg.seed
    report = compare(traces, fingerprint=flat)
    with staged_output(cfg.out_dir, "backtest", flat) as tmp:
        if end_to_end:
            for ticker in tickers:
                for label, model in arima_models[ticker].items():
                    stem = f"arima_{ticker}" if label == "ARIMA" else f"arima_{ticker}_{label}"
                    ar.save_model(model, tmp / f"{stem}.json",
                                  fingerprint=fps[ticker]["arima"], ticker=ticker, label=label)
                _save_lstm(cfg, ticker, lstm_stacks[ticker], tmp, fps[ticker]["lstm"])
        emit_report(report, tmp, plots=plots)
    return report


__all__ = [
    "DataError", "cmd_analyze", "cmd_fit_arima", "cmd_train_lstm", "cmd_sweep", "cmd_backtest",
]
