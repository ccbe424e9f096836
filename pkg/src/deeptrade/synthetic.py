"""Deterministic synthetic price series for tests, demos and smoke runs."""

from __future__ import annotations

import datetime as dt
from pathlib import Path

import numpy as np

from .market_data import PriceSeries, from_arrays, write_csv


def business_days(start: dt.date, n: int) -> list[dt.date]:
    days, d = [], start
    while len(days) < n:
        if d.weekday() < 5:
            days.append(d)
        d += dt.timedelta(days=1)
    return days


def uptrend_series(
    n: int = 500,
    start_price: float = 50.0,
    daily_growth: float = 0.003,
    ripple: float = 0.01,
    ripple_period: float = 20.0,
    ticker: str = "UPTREND",
    start: dt.date = dt.date(2015, 1, 1),
) -> PriceSeries:
    """Geometric drift times a small sinusoidal ripple; high/low bracket the close by 0.5%."""
    t = np.arange(n)
    closes = start_price * (1.0 + daily_growth) ** t * (1.0 + ripple * np.sin(2 * np.pi * t / ripple_period))
    opens = np.concatenate([[closes[0]], closes[:-1]])
    highs = np.maximum(opens, closes) * 1.005
    lows = np.minimum(opens, closes) * 0.995
    return from_arrays(ticker, business_days(start, n), closes, highs, lows, opens, np.full(n, 1e6))


def random_walk_series(
    n: int,
    seed: int,
    start_price: float = 100.0,
    vol: float = 0.02,
    drift: float = 0.0,
    ticker: str = "WALK",
    start: dt.date = dt.date(2015, 1, 1),
    days: list[dt.date] | None = None,
) -> PriceSeries:
    rng = np.random.default_rng(seed)
    closes = start_price * np.exp(np.cumsum(rng.normal(drift, vol, n)))
    opens = np.concatenate([[start_price], closes[:-1]])
    spread = np.abs(rng.normal(0.0, vol / 2, n)) + 1e-4
    highs = np.maximum(opens, closes) * (1.0 + spread)
    lows = np.minimum(opens, closes) * (1.0 - spread)
    volumes = rng.integers(1_000, 1_000_000, n).astype(float)
    return from_arrays(ticker, days or business_days(start, n), closes, highs, lows, opens, volumes)


def write_synthetic_universe(
    data_dir: str | Path,
    tickers: list[str],
    start: dt.date = dt.date(2012, 10, 1),
    end: dt.date = dt.date(2022, 12, 30),
    seed: int = 0,
) -> list[Path]:
    """One drifting random-walk CSV per ticker covering ``start..end``."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    n = np.busday_count(start, end + dt.timedelta(days=1))
    days = business_days(start, int(n))
    paths = []
    for i, ticker in enumerate(tickers):
        series = random_walk_series(
            len(days), seed + i, start_price=40.0 + 10 * i, vol=0.015, drift=0.0005, ticker=ticker, days=days
        )
        path = data_dir / f"{ticker}.csv"
        write_csv(series, path)
        paths.append(path)
    return paths
