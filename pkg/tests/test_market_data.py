import datetime as dt

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deeptrade.market_data import (
    Bar,
    DataError,
    DateRange,
    EmptySliceError,
    PriceSeries,
    load_csv,
    slice_series,
    write_csv,
)
from deeptrade.synthetic import business_days, random_walk_series


def test_two_valid_rows(csv_factory):
    path = csv_factory(
        [
            "2020-01-03,10,11,9,10.5,10.4,1000",
            "2020-01-02,10,10.5,9.5,10,9.9,2000",
        ]
    )
    s = load_csv(path)
    assert len(s) == 2
    assert s.dates == [dt.date(2020, 1, 2), dt.date(2020, 1, 3)]
    assert s.ticker == "TEST"
    assert list(s.closes) == [10.0, 10.5]


def test_adj_close_switch(csv_factory):
    path = csv_factory(["2020-01-02,10,10.5,9.5,10,9.9,2000"])
    assert load_csv(path, use_adj_close=True).closes[0] == 9.9


def test_duplicate_date_named(csv_factory):
    path = csv_factory(["2020-01-02,10,11,9,10,10,1", "2020-01-02,10,11,9,10,10,1"])
    with pytest.raises(DataError, match="duplicate date 2020-01-02"):
        load_csv(path)


def test_non_positive_price(csv_factory):
    path = csv_factory(["2020-01-02,1,1,-2,-1.0,1,1"])
    with pytest.raises(DataError, match="non-positive"):
        load_csv(path)


@pytest.mark.parametrize(
    "row, needle",
    [
        ("2020-01-02,10,11,9,abc,10,1", ":2: malformed Close"),
        ("2020/01/02,10,11,9,10,10,1", ":2: malformed date"),
        ("2020-01-02,10,11,9,10", ":2: expected 7 fields"),
        ("2020-01-02,10,11,9,12,12,1", ":2: inconsistent OHLC"),
    ],
)
def test_malformed_row_reports_line(csv_factory, row, needle):
    with pytest.raises(DataError, match=needle):
        load_csv(csv_factory([row]))


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="missing data file"):
        load_csv(tmp_path / "nope.csv")


def test_bad_header(csv_factory):
    with pytest.raises(DataError, match="expected header"):
        load_csv(csv_factory(["2020-01-02,10,11,9,10,10,1"], header="date,close"))


def test_series_rejects_unsorted():
    bars = [Bar(dt.date(2020, 1, 3), 1, 1, 1, 1, 0), Bar(dt.date(2020, 1, 2), 1, 1, 1, 1, 0)]
    with pytest.raises(DataError):
        PriceSeries("X", tuple(bars))


def test_slice_examples():
    s = random_walk_series(10, seed=1)
    assert slice_series(s, s.span) == s
    days = s.dates
    part = slice_series(s, DateRange(days[2], days[4]))
    assert len(part) == 3
    assert part.bars == s.bars[2:5]
    with pytest.raises(EmptySliceError):
        slice_series(s, DateRange(days[-1] + dt.timedelta(days=1), days[-1] + dt.timedelta(days=30)))


def test_date_range_validation():
    with pytest.raises(ValueError):
        DateRange(dt.date(2020, 1, 2), dt.date(2020, 1, 1))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 60), seed=st.integers(0, 10_000))
def test_roundtrip_idempotent(tmp_path_factory, n, seed):
    s = random_walk_series(n, seed=seed, ticker="RT")
    p1 = tmp_path_factory.mktemp("rt") / "RT.csv"
    write_csv(s, p1)
    loaded = load_csv(p1)
    p2 = p1.with_name("RT2.csv")
    write_csv(loaded, p2)
    again = load_csv(p2, ticker="RT")
    assert loaded.bars == s.bars
    assert again.bars == loaded.bars
    assert p1.read_text() == p2.read_text()


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 50), cut=st.integers(0, 48))
def test_complementary_slices_reassemble(n, cut):
    cut = min(cut, n - 2)
    s = random_walk_series(n, seed=n)
    days = business_days(s.dates[0], n)
    left = slice_series(s, DateRange(days[0], days[cut]))
    right = slice_series(s, DateRange(days[cut + 1], days[-1]))
    assert left.bars + right.bars == s.bars
