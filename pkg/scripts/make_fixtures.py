"""Regenerate the shipped CSV fixtures (deterministic)."""
import argparse
from pathlib import Path

from stockcast.synthetic import write_fixture_set

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "fixtures"))
    ap.add_argument("--seed", type=int, default=100)
    args = ap.parse_args()
    for p in write_fixture_set(args.out, args.seed):
        print(p)
