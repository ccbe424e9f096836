"""Daily OHLCV price history: loading, validation and date slicing."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CSV_HEADER = ("Date", "Open", "High", "Low", "Close", "Adj Close", "Volume")


class DataError(ValueError):
    """Raised for missing, malformed or inconsistent market data."""


class EmptySliceError(DataError):
    pass


@dataclass(frozen=True)
class Bar:
    """One trading day for one ticker."""

    date: dt.date
    open: float
    high: float
    low: float
    close: float
    volume: float
    adj_close: float | None = None

    def __post_init__(self) -> None:
        prices = (self.open, self.high, self.low, self.close)
        if not all(np.isfinite(prices)) or min(prices) <= 0:
            raise DataError(f"non-positive price on {self.date}: {prices}")
        if self.adj_close is not None and not self.adj_close > 0:
            raise DataError(f"non-positive price on {self.date}: adj close {self.adj_close}")
        if not (self.low <= self.open <= self.high and self.low <= self.close <= self.high):
            raise DataError(f"inconsistent OHLC on {self.date}: {prices}")
        if not self.volume >= 0:
            raise DataError(f"negative volume on {self.date}: {self.volume}")


@dataclass(frozen=True)
class DateRange:
    start: dt.date
    end: dt.date  # inclusive

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise ValueError(f"date range start {self.start} is after end {self.end}")

    def __contains__(self, day: dt.date) -> bool:
        return self.start <= day <= self.end

    def overlaps(self, other: DateRange) -> bool:
        return self.start <= other.end and other.start <= self.end

    @property
    def years(self) -> float:
        return (self.end - self.start).days / 365.25

    @classmethod
    def parse(cls, start: str, end: str) -> DateRange:
        return cls(dt.date.fromisoformat(start), dt.date.fromisoformat(end))


@dataclass(frozen=True)
class PriceSeries:
    """Immutable, strictly date-ordered bars for a single ticker.

    ``use_adj_close`` switches the price reported by :attr:`closes` (and hence
    the trading price) to the ``Adj Close`` column.
    """

    ticker: str
    bars: tuple[Bar, ...]
    use_adj_close: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "bars", tuple(self.bars))
        for prev, cur in zip(self.bars, self.bars[1:]):
            if cur.date == prev.date:
                raise DataError(f"{self.ticker}: duplicate date {cur.date}")
            if cur.date < prev.date:
                raise DataError(f"{self.ticker}: dates not increasing at {cur.date}")
        if self.use_adj_close and any(b.adj_close is None for b in self.bars):
            raise DataError(f"{self.ticker}: adj close requested but missing")

    def __len__(self) -> int:
        return len(self.bars)

    @property
    def dates(self) -> list[dt.date]:
        return [b.date for b in self.bars]

    @property
    def closes(self) -> np.ndarray:
        if self.use_adj_close:
            return np.array([b.adj_close for b in self.bars], dtype=float)
        return np.array([b.close for b in self.bars], dtype=float)

    @property
    def highs(self) -> np.ndarray:
        return np.array([b.high for b in self.bars], dtype=float)

    @property
    def lows(self) -> np.ndarray:
        return np.array([b.low for b in self.bars], dtype=float)

    @property
    def span(self) -> DateRange:
        return DateRange(self.bars[0].date, self.bars[-1].date)


def _parse_float(text: str, field: str, lineno: int, path: Path) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{path}:{lineno}: malformed {field} value {text!r}") from None


def load_csv(path: str | Path, ticker: str | None = None, use_adj_close: bool = False) -> PriceSeries:
    """Read a Yahoo-Finance style daily export.

    Rows may arrive unsorted; they are ordered by date. Duplicate dates and
    non-positive prices are rejected with the offending row or date named.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing data file: {path}")
    ticker = ticker or path.stem
    bars: list[Bar] = []
    seen: dict[dt.date, int] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise DataError(f"{path}:1: expected header {','.join(CSV_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise DataError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                day = dt.date.fromisoformat(row[0].strip())
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed date {row[0]!r}") from None
            if day in seen:
                raise DataError(f"{path}:{lineno}: duplicate date {day} (first seen on line {seen[day]})")
            seen[day] = lineno
            o, h, l, c, adj, vol = (
                _parse_float(cell, name, lineno, path) for cell, name in zip(row[1:], CSV_HEADER[1:])
            )
            if min(o, h, l, c, adj) <= 0:
                raise DataError(f"{path}:{lineno}: non-positive price on {day}")
            try:
                bars.append(Bar(day, o, h, l, c, vol, adj_close=adj))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if not bars:
        raise DataError(f"{path}: no data rows")
    bars.sort(key=lambda b: b.date)
    return PriceSeries(ticker, tuple(bars), use_adj_close=use_adj_close)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(series: PriceSeries, path: str | Path) -> None:
    """Serialize in the same column order :func:`load_csv` expects."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for b in series.bars:
            adj = b.close if b.adj_close is None else b.adj_close
            writer.writerow(
                [b.date.isoformat(), _fmt(b.open), _fmt(b.high), _fmt(b.low), _fmt(b.close), _fmt(adj), _fmt(b.volume)]
            )


def slice_series(series: PriceSeries, rng: DateRange) -> PriceSeries:
    """Bars with ``rng.start <= date <= rng.end``; raises on an empty result."""
    bars = tuple(b for b in series.bars if b.date in rng)
    if not bars:
        raise EmptySliceError(f"{series.ticker}: no bars between {rng.start} and {rng.end}")
    return PriceSeries(series.ticker, bars, use_adj_close=series.use_adj_close)


def index_range(series: PriceSeries, rng: DateRange) -> tuple[int, int]:
    """Half-open bar index interval ``[lo, hi)`` covered by ``rng``."""
    idx = [i for i, b in enumerate(series.bars) if b.date in rng]
    if not idx:
        raise EmptySliceError(f"{series.ticker}: no bars between {rng.start} and {rng.end}")
    return idx[0], idx[-1] + 1


def from_arrays(
    ticker: str,
    dates: Sequence[dt.date],
    closes: Iterable[float],
    highs: Iterable[float] | None = None,
    lows: Iterable[float] | None = None,
    opens: Iterable[float] | None = None,
    volumes: Iterable[float] | None = None,
) -> PriceSeries:
    """Build a series from parallel arrays; missing OHLC columns default to the close."""
    closes = [float(c) for c in closes]
    n = len(closes)
    highs = list(highs) if highs is not None else closes
    lows = list(lows) if lows is not None else closes
    opens = list(opens) if opens is not None else closes
    volumes = list(volumes) if volumes is not None else [0.0] * n
    bars = tuple(
        Bar(d, float(o), float(h), float(l), c, float(v), adj_close=c)
        for d, o, h, l, c, v in zip(dates, opens, highs, lows, closes, volumes)
    )
    if len(bars) != n:
        raise DataError("parallel arrays differ in length")
    return PriceSeries(ticker, bars)
