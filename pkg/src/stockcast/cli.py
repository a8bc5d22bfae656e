"""Command-line entry point.

Exit codes: 0 success, 1 usage or config error, 2 data or I/O error,
3 numeric failure (non-convergence, divergence).
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import pipeline
from .arima import ArimaError
from .config import ConfigError, load_config
from .dataset import DataError
from .lstm import TrainingDiverged
from .stationarity import StationarityError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("stockcast")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--seed", type=int, help="global seed (overrides seed)")
    p.add_argument("--ticker", help="restrict the run to one configured ticker")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stockcast", description="ARIMA and stacked-LSTM price forecasting"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("analyze", help="ADF, differencing, correlograms, BIC grid"))
    _common(sub.add_parser("fit-arima", help="select, fit and diagnose ARIMA models"))
    _common(sub.add_parser("train-lstm", help="train the stacked LSTM per ticker"))
    sw = sub.add_parser("sweep", help="train one LSTM per hyperparameter value")
    _common(sw)
    sw.add_argument("--dimension", required=True, choices=pipeline.SWEEP_DIMENSIONS)
    sw.add_argument("--values", required=True, nargs="+", type=float)
    bt = sub.add_parser("backtest", help="compare ARIMA and LSTM on the shared test window")
    _common(bt)
    bt.add_argument("--end-to-end", action="store_true",
                    help="fit and train in-process instead of loading checkpoints")
    bt.add_argument("--no-plots", action="store_true")
    return parser


def _resolve(args):
    cfg = load_config(args.config).select(args.ticker)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out_dir=Path(args.out))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _sweep_values(dimension, values):
    if dimension == "dropout":
        return [float(v) for v in values]
    if any(v != int(v) or v < 1 for v in values):
        raise ConfigError(f"{dimension} values must be positive integers")
    return [int(v) for v in values]


def run(args) -> int:
    cfg = _resolve(args)
    if args.command == "analyze":
        pipeline.cmd_analyze(cfg)
    elif args.command == "fit-arima":
        for ticker, models in pipeline.cmd_fit_arima(cfg).items():
            for label, m in models.items():
                print(f"{ticker} {label}: ARIMA{m.order} sigma2={m.sigma2:.6g}")
    elif args.command == "train-lstm":
        def progress(epoch, tr, va):
            log.info("epoch %d train_mse %.6g val_mse %.6g", epoch, tr, va)

        for ticker, r in pipeline.cmd_train_lstm(cfg, progress=progress).items():
            print(f"{ticker}: best epoch {r.history.best_epoch} "
                  + " ".join(f"{k}={v:.6g}" for k, v in r.scores.items()))
    elif args.command == "sweep":
        values = _sweep_values(args.dimension, args.values)
        tables = pipeline.cmd_sweep(cfg, args.dimension, values)
        for ticker, rows in tables.items():
            for r in rows:
                print(f"{ticker} {args.dimension}={r['value']}: train={r['train']:.6g} "
                      f"val={r['val']:.6g} test={r['test']:.6g} {r['status']}")
    elif args.command == "backtest":
        report = pipeline.cmd_backtest(cfg, end_to_end=args.end_to_end, plots=not args.no_plots)
        print(report.to_text())
    print(f"outputs in {cfg.out_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, StationarityError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArimaError, TrainingDiverged) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
