"""Price ingestion, date-bounded splits, min-max scaling and sliding windows.

Everything here is shared by the ARIMA and LSTM pipelines.  Series are
treated as evenly spaced by trading day; calendar gaps are ignored.
"""
from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_COLUMN = "High"
DEFAULT_WINDOW = 60
_MISSING = {"", "null", "nan", "na", "n/a", "none"}


class DataError(ValueError):
    """Raised for unusable input data (bad files, empty partitions, ...)."""


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PriceSeries:
    ticker: str
    dates: tuple[dt.date, ...]
    values: np.ndarray = field(repr=False)
    dropped_rows: int = 0

    def __post_init__(self):
        values = _frozen(self.values)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dates", tuple(self.dates))
        if values.ndim != 1 or len(values) != len(self.dates):
            raise DataError("dates and values must be 1-D and of equal length")
        if len(values) == 0:
            raise DataError(f"{self.ticker}: empty series")
        if not np.all(np.isfinite(values)):
            raise DataError(f"{self.ticker}: non-finite values")
        for a, b in zip(self.dates, self.dates[1:]):
            if not a < b:
                raise DataError(f"{self.ticker}: dates not strictly increasing at {b}")

    def __len__(self) -> int:
        return len(self.values)

    def restrict(self, start: Optional[dt.date], end: Optional[dt.date]) -> "PriceSeries":
        """Rows with start < date <= end (either bound may be None)."""
        keep = [
            i for i, d in enumerate(self.dates)
            if (start is None or d > start) and (end is None or d <= end)
        ]
        if not keep:
            raise DataError(f"{self.ticker}: no rows in ({start}, {end}]")
        return PriceSeries(
            self.ticker, [self.dates[i] for i in keep], self.values[keep]
        )


@dataclass(frozen=True)
class SplitSpec:
    train_end: dt.date
    test_end: dt.date
    val_end: Optional[dt.date] = None
    train_start: Optional[dt.date] = None  # exclusive; None keeps all history

    def __post_init__(self):
        bounds = [self.train_start, self.train_end, self.val_end, self.test_end]
        bounds = [b for b in bounds if b is not None]
        if any(not a < b for a, b in zip(bounds, bounds[1:])):
            raise ValueError(f"split dates must be strictly increasing: {bounds}")


# Defaults for the two model families: LSTM trains on 2010-2015 and validates
# on 2016-2017; ARIMA trains on 2016-2017.  Both test on 2018.
LSTM_SPLIT = SplitSpec(dt.date(2015, 12, 31), dt.date(2018, 12, 31), dt.date(2017, 12, 31))
ARIMA_SPLIT = SplitSpec(
    dt.date(2017, 12, 31), dt.date(2018, 12, 31), train_start=dt.date(2015, 12, 31)
)


@dataclass(frozen=True)
class Scaler:
    min: float
    max: float

    def __post_init__(self):
        if not (np.isfinite(self.min) and np.isfinite(self.max)):
            raise ValueError("scaler bounds must be finite")
        if not self.max > self.min:
            raise ValueError(f"scaler requires max > min, got min={self.min} max={self.max}")

    @property
    def span(self) -> float:
        return self.max - self.min


@dataclass(frozen=True)
class WindowedDataset:
    window: int
    inputs: np.ndarray  # (samples, window)
    targets: np.ndarray  # (samples,)

    def __len__(self) -> int:
        return len(self.targets)


def load_csv(path, column: str = DEFAULT_COLUMN, ticker: Optional[str] = None) -> PriceSeries:
    """Read a Yahoo-style export (``Date,Open,High,Low,Close,...``).

    Rows whose value is empty or ``null`` are dropped; the count is kept on
    the returned series as ``dropped_rows``.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    ticker = ticker or path.stem
    rows: list[tuple[dt.date, float]] = []
    dropped = 0
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        reader.fieldnames = header
        if "Date" not in header:
            raise DataError(f"{path}: no Date column in header {header}")
        if column not in header:
            raise DataError(f"{path}: no {column!r} column in header {header}")
        for lineno, row in enumerate(reader, start=2):
            raw_date = (row.get("Date") or "").strip()
            try:
                date = dt.date.fromisoformat(raw_date)
            except ValueError:
                raise DataError(f"{path}:{lineno}: unparseable date {raw_date!r}") from None
            raw = (row.get(column) or "").strip()
            if raw.lower() in _MISSING:
                dropped += 1
                continue
            try:
                value = float(raw)
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad {column} value {raw!r}") from None
            if not np.isfinite(value):
                dropped += 1
                continue
            rows.append((date, value))
    if not rows:
        raise DataError(f"{path}: zero usable rows in column {column!r}")
    rows.sort(key=lambda r: r[0])
    dates = [r[0] for r in rows]
    for a, b in zip(dates, dates[1:]):
        if a == b:
            raise DataError(f"{path}: duplicate date {a}")
    if dropped:
        log.info("%s: dropped %d rows with missing %s", path.name, dropped, column)
    return PriceSeries(ticker, dates, [r[1] for r in rows], dropped_rows=dropped)


def split(series: PriceSeries, spec: SplitSpec):
    """Partition ``series`` by date into ``(train, val, test)``.

    ``val`` is None when the split has no validation bound.  Rows after
    ``test_end`` (and on or before ``train_start``) are ignored.
    """
    def part(lo, hi, name):
        try:
            return series.restrict(lo, hi)
        except DataError:
            raise DataError(f"{series.ticker}: empty {name} partition ({lo}, {hi}]") from None

    train = part(spec.train_start, spec.train_end, "train")
    val = None
    test_start = spec.train_end
    if spec.val_end is not None:
        val = part(spec.train_end, spec.val_end, "validation")
        test_start = spec.val_end
    test = part(test_start, spec.test_end, "test")
    return train, val, test


def fit_scaler(series) -> Scaler:
    values = series.values if isinstance(series, PriceSeries) else np.asarray(series, float)
    if len(values) < 2:
        raise DataError("need at least two values to fit a scaler")
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi == lo:
        raise DataError(f"constant series (value {lo}) cannot be min-max normalized")
    return Scaler(lo, hi)


def normalize(values, scaler: Scaler) -> np.ndarray:
    # Values outside [min, max] map outside [0, 1]; intended when the scaler
    # comes from the training partition only.
    return (np.asarray(values, dtype=np.float64) - scaler.min) / scaler.span


def denormalize(values, scaler: Scaler) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * scaler.span + scaler.min


def make_windows(values: Sequence[float], window: int = DEFAULT_WINDOW) -> WindowedDataset:
    """Sample i is ``values[i:i+window] -> values[i+window]``."""
    values = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be positive")
    if len(values) <= window:
        raise DataError(
            f"sequence of length {len(values)} too short for window {window}"
        )
    inputs = np.lib.stride_tricks.sliding_window_view(values, window)[:-1].copy()
    return WindowedDataset(window, inputs, values[window:].copy())


def windows_for_partition(context: np.ndarray, part: np.ndarray, window: int) -> WindowedDataset:
    """Windows whose targets are exactly ``part``.

    Inputs may reach back into ``context`` (the values preceding the
    partition), so validation and test windows straddle the boundary.
    """
    context = np.asarray(context, dtype=np.float64)
    if len(context) < window:
        raise DataError(
            f"need {window} values of context before the partition, have {len(context)}"
        )
    joined = np.concatenate([context[len(context) - window:], np.asarray(part, np.float64)])
    return make_windows(joined, window)
