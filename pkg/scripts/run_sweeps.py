"""Dropout, depth and width sweeps on one ticker, one score table per dimension."""
import argparse
import sys
from pathlib import Path

from stockcast.cli import main

ROOT = Path(__file__).resolve().parents[1]
GRIDS = {"dropout": ["0.1", "0.2", "0.5"], "layers": ["2", "3", "4"], "units": ["32", "64", "100"]}

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "compare.yaml"))
    ap.add_argument("--ticker", default="GOOG")
    ap.add_argument("--dimensions", nargs="+", default=list(GRIDS), choices=list(GRIDS))
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    extra = ["--out", args.out] if args.out else []
    for dim in args.dimensions:
        rc = main(["sweep", "--config", args.config, "--ticker", args.ticker,
                   "--dimension", dim, "--values", *GRIDS[dim], *extra])
        if rc:
            sys.exit(rc)
