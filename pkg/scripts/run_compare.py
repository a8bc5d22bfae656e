"""Multi-seed ARIMA vs LSTM backtest; writes a per-seed pooled RMSE table."""
import argparse
import csv
import dataclasses
import time
from pathlib import Path

from stockcast import pipeline
from stockcast.config import load_config

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "compare.yaml"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", default=None, help="defaults to the config's out_dir")
    args = ap.parse_args()

    base = load_config(args.config)
    out = Path(args.out) if args.out else base.out_dir
    rows = []
    for seed in args.seeds:
        t0 = time.perf_counter()
        cfg = dataclasses.replace(base, seed=seed, out_dir=out / f"seed{seed}")
        report = pipeline.cmd_backtest(cfg, end_to_end=True)
        row = {"seed": seed, **{f"{m}_rmse": report.pooled[m].rmse for m in report.models}}
        row["lstm_wins"] = int(row["LSTM_rmse"] < row["ARIMA_rmse"])
        rows.append(row)
        print(f"seed {seed}: " + "  ".join(f"{k}={v:.4f}" for k, v in row.items()
                                            if k.endswith("rmse"))
              + f"  ({time.perf_counter() - t0:.0f}s)", flush=True)

    out.mkdir(parents=True, exist_ok=True)
    with (out / "seeds.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(f"LSTM lower pooled RMSE in {sum(r['lstm_wins'] for r in rows)}/{len(rows)} seeds")
