"""Full pipeline at the reference settings: analyze, fit-arima, train-lstm, backtest.

Slow: the 3x100 LSTM trains for 50 epochs per ticker (expect well over an hour).
"""
import argparse
import sys
from pathlib import Path

from stockcast.cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "reproduction.yaml"))
    ap.add_argument("--ticker", default=None)
    args = ap.parse_args()
    common = ["--config", args.config, "-v"] + (["--ticker", args.ticker] if args.ticker else [])
    for verb in ("analyze", "fit-arima", "train-lstm", "backtest"):
        rc = main([verb, *common])
        if rc:
            sys.exit(rc)
