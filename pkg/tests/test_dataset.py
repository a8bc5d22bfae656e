import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stockcast.dataset import (
    ARIMA_SPLIT,
    LSTM_SPLIT,
    DataError,
    PriceSeries,
    Scaler,
    SplitSpec,
    denormalize,
    fit_scaler,
    load_csv,
    make_windows,
    normalize,
    split,
    windows_for_partition,
)
from stockcast.synthetic import business_days

from conftest import FIXTURES, write_price_csv


def D(s):
    return dt.date.fromisoformat(s)


# ---------------------------------------------------------------- load_csv

def test_load_two_rows(tmp_path):
    p = write_price_csv(tmp_path / "x.csv", ["2018-01-02", "2018-01-03"], [10.0, 11.0])
    s = load_csv(p)
    assert len(s) == 2
    assert list(s.values) == [10.0, 11.0]
    assert list(s.dates) == [D("2018-01-02"), D("2018-01-03")]


def test_load_sorts_reverse_file(tmp_path):
    a = load_csv(write_price_csv(tmp_path / "a.csv", ["2018-01-02", "2018-01-03"], [10.0, 11.0]))
    b = load_csv(write_price_csv(tmp_path / "b.csv", ["2018-01-03", "2018-01-02"], [11.0, 10.0]))
    assert a.dates == b.dates
    np.testing.assert_array_equal(a.values, b.values)


def test_all_null_column_is_an_error(tmp_path):
    p = tmp_path / "n.csv"
    p.write_text("Date,High\n2018-01-02,null\n2018-01-03,null\n")
    with pytest.raises(DataError, match="usable"):
        load_csv(p)


def test_missing_rows_dropped_and_counted(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("Date,High\n2018-01-02,1.0\n2018-01-03,null\n2018-01-04,\n2018-01-05,2.0\n")
    s = load_csv(p)
    assert len(s) == 2 and s.dropped_rows == 2


@pytest.mark.parametrize(
    "body, match",
    [
        ("Date,Low\n2018-01-02,1\n", "column"),
        ("Date,High\n02/01/2018,1\n", "date"),
        ("Date,High\n2018-01-02,1\n2018-01-02,2\n", "duplicate"),
    ],
)
def test_load_errors(tmp_path, body, match):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(DataError, match=match):
        load_csv(p)


def test_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_csv(tmp_path / "absent.csv")


def test_yahoo_fixture_layout():
    s = load_csv(FIXTURES / "GOOG.csv")
    assert s.ticker == "GOOG"
    assert s.dates[0] == D("2010-01-04") and s.dates[-1] == D("2018-12-31")
    close = load_csv(FIXTURES / "GOOG.csv", column="Close")
    assert np.all(s.values >= close.values)


# ---------------------------------------------------------------- split

def _series(start="2010-01-04", end="2018-12-31", ticker="T"):
    dates = business_days(D(start), D(end))
    return PriceSeries(ticker, dates, np.arange(len(dates), dtype=float) + 1.0)


def test_lstm_split_three_parts():
    train, val, test = split(_series(), LSTM_SPLIT)
    assert train.dates[-1] <= D("2015-12-31") < val.dates[0]
    assert val.dates[-1] <= D("2017-12-31") < test.dates[0]
    assert test.dates[0] == D("2018-01-01") and test.dates[-1] == D("2018-12-31")


def test_arima_split_two_parts():
    s = _series("2016-01-01", "2018-12-31")
    train, val, test = split(s, SplitSpec(D("2017-12-31"), D("2018-12-31")))
    assert val is None
    assert train.dates[0] == D("2016-01-01") and train.dates[-1] == D("2017-12-29")
    assert len(train) + len(test) == len(s)


def test_arima_default_split_restricts_training_start():
    train, _, _ = split(_series(), ARIMA_SPLIT)
    assert train.dates[0] == D("2016-01-01")


def test_train_end_before_data_is_an_error():
    with pytest.raises(DataError, match="train"):
        split(_series(), SplitSpec(D("2009-01-01"), D("2018-12-31")))


def test_split_spec_must_increase():
    with pytest.raises(ValueError):
        SplitSpec(D("2018-01-01"), D("2017-01-01"))


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(30, 400),
    cuts=st.lists(st.integers(1, 28), min_size=3, max_size=3, unique=True),
    with_val=st.booleans(),
)
def test_split_is_a_partition(n, cuts, with_val):
    s = _series("2015-01-01", "2017-12-31")
    s = PriceSeries("T", s.dates[:n], s.values[:n])
    a, b, c = sorted(cuts)
    d = s.dates
    idx = [a * n // 30, b * n // 30, c * n // 30]
    spec = (SplitSpec(d[idx[0]], d[idx[2]], val_end=d[idx[1]]) if with_val
            else SplitSpec(d[idx[0]], d[idx[2]]))
    parts = [p for p in split(s, spec) if p is not None]
    joined = [x for p in parts for x in p.dates]
    assert joined == [x for x in d if x <= spec.test_end]


# ---------------------------------------------------------------- scaling

@pytest.mark.parametrize("values, lo, hi", [([1, 2, 3], 1, 3), ([-2, 0, 4], -2, 4)])
def test_fit_scaler(values, lo, hi):
    assert fit_scaler(values) == Scaler(lo, hi)


def test_constant_series_cannot_be_scaled():
    with pytest.raises(DataError, match="constant"):
        fit_scaler([5, 5, 5])


def test_normalize_examples():
    np.testing.assert_array_equal(normalize([1, 2, 3], Scaler(1, 3)), [0, 0.5, 1])
    np.testing.assert_array_equal(normalize([4], Scaler(1, 3)), [1.5])
    np.testing.assert_array_equal(denormalize([0, 1], Scaler(10, 20)), [10, 20])
    np.testing.assert_array_equal(denormalize([0.5], Scaler(0, 4)), [2])
    np.testing.assert_allclose(denormalize(normalize([7.3, 9.1], Scaler(-3, 11)), Scaler(-3, 11)),
                               [7.3, 9.1], atol=1e-9)


finite = st.floats(-1e4, 1e4, allow_nan=False)


@st.composite
def scalers(draw):
    lo = draw(finite)
    return Scaler(lo, lo + draw(st.floats(0.1, 1e4)))


@given(scalers(), st.lists(finite, min_size=1, max_size=50))
def test_round_trips(scaler, xs):
    xs = np.array(xs)
    np.testing.assert_allclose(denormalize(normalize(xs, scaler), scaler), xs, rtol=0, atol=1e-9)
    z = normalize(xs, scaler)
    np.testing.assert_allclose(normalize(denormalize(z, scaler), scaler), z, rtol=0, atol=1e-9)


@given(scalers(), finite, finite)
def test_normalize_monotone(scaler, x, y):
    lo, hi = sorted((x, y))
    a, b = normalize([lo, hi], scaler)
    assert a <= b
    # strict once the gap survives the subtraction of scaler.min
    if hi - lo > 1e-12 * max(1.0, abs(lo), abs(hi), abs(scaler.min), abs(scaler.max)):
        assert a < b


# ---------------------------------------------------------------- windows

def test_make_windows_enumeration():
    ds = make_windows([1, 2, 3, 4], 2)
    np.testing.assert_array_equal(ds.inputs, [[1, 2], [2, 3]])
    np.testing.assert_array_equal(ds.targets, [3, 4])


def test_window_counts_at_the_boundary():
    assert len(make_windows(np.arange(61.0), 60)) == 1
    with pytest.raises(DataError, match="too short"):
        make_windows(np.arange(60.0), 60)


@given(st.integers(1, 30), st.integers(1, 80))
def test_window_count_formula(window, extra):
    n = window + extra
    ds = make_windows(np.arange(n, dtype=float), window)
    assert len(ds) == n - window
    # every target is the value right after its window
    np.testing.assert_array_equal(ds.targets, ds.inputs[:, -1] + 1)


def test_partition_windows_reach_into_context():
    ds = windows_for_partition(np.arange(10.0), np.array([10.0, 11.0]), 3)
    np.testing.assert_array_equal(ds.targets, [10, 11])
    np.testing.assert_array_equal(ds.inputs, [[7, 8, 9], [8, 9, 10]])
    with pytest.raises(DataError):
        windows_for_partition(np.arange(2.0), np.array([1.0]), 3)
