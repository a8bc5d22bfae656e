"""Seeded synthetic price series and Yahoo-style CSV export for offline fixtures."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .arima import simulate_arma

YAHOO_HEADER = ("Date", "Open", "High", "Low", "Close", "Adj Close", "Volume")


def business_days(start: dt.date, end: dt.date) -> list[dt.date]:
    """Weekdays in [start, end]; holidays are not modelled."""
    days = np.arange(np.datetime64(start), np.datetime64(end) + 1)
    days = days[np.is_busday(days)]
    return [d.item() for d in days]


@dataclass(frozen=True)
class TrendNoiseSpec:
    """Price = base * (1 + drift*t + swing*sin(...)) + AR(1) noise, t in years."""
    base: float = 100.0
    drift: float = 0.05  # per year, relative to base
    swing: float = 0.15  # amplitude of the slow oscillation, relative to base
    swing_period: float = 3.0  # years
    cycle: float = 0.0  # amplitude of a short cycle, relative to base
    cycle_period: float = 20.0  # trading days
    ar_coefs: tuple = (0.9,)
    noise: float = 0.01  # innovation sd, relative to base
    phase: float = 0.0


def trend_noise_series(spec: TrendNoiseSpec, n: int, rng) -> np.ndarray:
    rng = np.random.default_rng(rng)
    t = np.arange(n, dtype=np.float64)
    years = t / 252.0
    trend = 1.0 + spec.drift * years + spec.swing * np.sin(
        2 * np.pi * years / spec.swing_period + spec.phase
    )
    if spec.cycle:
        trend += spec.cycle * np.sin(2 * np.pi * t / spec.cycle_period + spec.phase)
    noise = simulate_arma(list(spec.ar_coefs), [], n, sigma=spec.noise, rng=rng)
    return spec.base * (trend + noise)


def sine_series(n: int, period: float = 50.0, amplitude: float = 1.0, offset: float = 2.0):
    return offset + amplitude * np.sin(2 * np.pi * np.arange(n) / period)


def write_yahoo_csv(path, dates, close, rng=None) -> Path:
    """OHLC rows around ``close``: High >= max(Open, Close), Low <= min(Open, Close)."""
    rng = np.random.default_rng(rng)
    close = np.asarray(close, dtype=np.float64)
    prev = np.concatenate([[close[0]], close[:-1]])
    open_ = prev + 0.25 * (close - prev)
    spread = np.abs(rng.normal(0.0, 0.004, len(close))) * np.abs(close)
    high = np.maximum(open_, close) + spread
    low = np.minimum(open_, close) - spread
    volume = rng.integers(1_000_000, 5_000_000, len(close))
    path = Path(path)
    lines = [",".join(YAHOO_HEADER)]
    for row in zip(dates, open_, high, low, close, volume):
        d, o, h, lo, c, v = row
        lines.append(f"{d},{o:.6f},{h:.6f},{lo:.6f},{c:.6f},{c:.6f},{v}")
    path.write_text("\n".join(lines) + "\n")
    return path


FIXTURE_START = dt.date(2010, 1, 4)
FIXTURE_END = dt.date(2018, 12, 31)

# (ticker, base price, phase of the slow swing); noise is AR(2) with a
# damped ~14-day oscillation, which an ARMA(1,1) cannot represent
FIXTURE_TICKERS = (("GOOG", 500.0, 0.0), ("AAPL", 100.0, 1.3), ("AMZN", 300.0, 2.6),
                   ("NFLX", 150.0, 4.0))
FIXTURE_SPEC = TrendNoiseSpec(drift=0.02, ar_coefs=(1.6, -0.8))


def write_fixture_set(out_dir, seed: int = 100) -> list[Path]:
    """The four trend-plus-AR-noise tickers plus a noiseless sine, as Yahoo CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dates = business_days(FIXTURE_START, FIXTURE_END)
    paths = []
    for i, (ticker, base, phase) in enumerate(FIXTURE_TICKERS):
        spec = TrendNoiseSpec(**{**FIXTURE_SPEC.__dict__, "base": base, "phase": phase})
        close = trend_noise_series(spec, len(dates), seed + i)
        paths.append(write_yahoo_csv(out / f"{ticker}.csv", dates, close, seed + 100 + i))
    paths.append(write_yahoo_csv(out / "SINE.csv", dates, sine_series(len(dates)), seed + 200))
    return paths
