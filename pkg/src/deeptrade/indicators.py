"""MACD, RSI, CCI and ADX features.

Each indicator is computed as a full causal series (``nan`` during warm-up):
the value at index ``t`` only reads bars ``0..t``. The scalar functions return
the value at the last bar of their input.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .market_data import PriceSeries


class InsufficientHistoryError(ValueError):
    pass


@dataclass(frozen=True)
class IndicatorConfig:
    macd_fast: int = 12
    macd_slow: int = 26
    macd_signal: int = 9  # kept for completeness; the feature is the MACD line
    rsi_period: int = 14
    cci_period: int = 20
    adx_period: int = 14

    def __post_init__(self) -> None:
        periods = (self.macd_fast, self.macd_slow, self.macd_signal, self.rsi_period, self.cci_period, self.adx_period)
        if min(periods) < 1:
            raise ValueError("indicator periods must be >= 1")
        if self.macd_fast >= self.macd_slow:
            raise ValueError("macd_fast must be smaller than macd_slow")

    @property
    def warmup(self) -> int:
        """Index of the first bar at which all four indicators are defined."""
        return max(self.macd_slow - 1, self.rsi_period, self.cci_period - 1, 2 * self.adx_period - 1)


@dataclass(frozen=True)
class IndicatorSet:
    macd: float
    rsi: float
    cci: float
    adx: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.macd, self.rsi, self.cci, self.adx)


def _require(n: int, needed: int, name: str) -> None:
    if n < needed:
        raise InsufficientHistoryError(f"{name} needs at least {needed} bars, got {n}")


def ema_series(values: np.ndarray, period: int) -> np.ndarray:
    """EMA seeded with the simple mean of the first ``period`` values."""
    out = np.full(len(values), np.nan)
    if len(values) < period:
        return out
    k = 2.0 / (period + 1)
    e = float(np.mean(values[:period]))
    out[period - 1] = e
    for i in range(period, len(values)):
        e = values[i] * k + e * (1.0 - k)
        out[i] = e
    return out


def macd_series(closes, cfg: IndicatorConfig = IndicatorConfig()) -> np.ndarray:
    closes = np.asarray(closes, dtype=float)
    return ema_series(closes, cfg.macd_fast) - ema_series(closes, cfg.macd_slow)


def rsi_series(closes, cfg: IndicatorConfig = IndicatorConfig()) -> np.ndarray:
    closes = np.asarray(closes, dtype=float)
    n = cfg.rsi_period
    out = np.full(len(closes), np.nan)
    if len(closes) < n + 1:
        return out
    delta = np.diff(closes)
    gains = np.where(delta > 0, delta, 0.0)
    losses = np.where(delta < 0, -delta, 0.0)
    avg_gain = float(np.mean(gains[:n]))
    avg_loss = float(np.mean(losses[:n]))
    out[n] = _rsi_value(avg_gain, avg_loss)
    for i in range(n, len(delta)):
        avg_gain = (avg_gain * (n - 1) + gains[i]) / n
        avg_loss = (avg_loss * (n - 1) + losses[i]) / n
        out[i + 1] = _rsi_value(avg_gain, avg_loss)
    return out


def _rsi_value(avg_gain: float, avg_loss: float) -> float:
    if avg_loss == 0.0:
        return 50.0 if avg_gain == 0.0 else 100.0
    return 100.0 - 100.0 / (1.0 + avg_gain / avg_loss)


def cci_series(highs, lows, closes, cfg: IndicatorConfig = IndicatorConfig()) -> np.ndarray:
    tp = (np.asarray(highs, float) + np.asarray(lows, float) + np.asarray(closes, float)) / 3.0
    n = cfg.cci_period
    out = np.full(len(tp), np.nan)
    for i in range(n - 1, len(tp)):
        window = tp[i - n + 1 : i + 1]
        sma = window.mean()
        mad = np.abs(window - sma).mean()
        out[i] = 0.0 if mad == 0.0 else (tp[i] - sma) / (0.015 * mad)
    return out


def adx_series(highs, lows, closes, cfg: IndicatorConfig = IndicatorConfig()) -> np.ndarray:
    """Wilder ADX; first value at index ``2 * adx_period - 1``."""
    high = np.asarray(highs, float)
    low = np.asarray(lows, float)
    close = np.asarray(closes, float)
    n = cfg.adx_period
    size = len(close)
    out = np.full(size, np.nan)
    if size < 2 * n:
        return out

    up = high[1:] - high[:-1]
    down = low[:-1] - low[1:]
    plus_dm = np.where((up > down) & (up > 0), up, 0.0)
    minus_dm = np.where((down > up) & (down > 0), down, 0.0)
    tr = np.maximum.reduce([high[1:] - low[1:], np.abs(high[1:] - close[:-1]), np.abs(low[1:] - close[:-1])])

    # element j of the diff arrays belongs to bar j + 1
    s_tr, s_plus, s_minus = tr[:n].sum(), plus_dm[:n].sum(), minus_dm[:n].sum()
    dx = [_dx(s_tr, s_plus, s_minus)]
    for j in range(n, len(tr)):
        s_tr = s_tr - s_tr / n + tr[j]
        s_plus = s_plus - s_plus / n + plus_dm[j]
        s_minus = s_minus - s_minus / n + minus_dm[j]
        dx.append(_dx(s_tr, s_plus, s_minus))

    # dx[m] belongs to bar n + m
    adx = float(np.mean(dx[:n]))
    out[2 * n - 1] = adx
    for m in range(n, len(dx)):
        adx = (adx * (n - 1) + dx[m]) / n
        out[n + m] = adx
    return out


def _dx(s_tr: float, s_plus: float, s_minus: float) -> float:
    if s_tr <= 0.0:
        return 0.0
    plus_di = 100.0 * s_plus / s_tr
    minus_di = 100.0 * s_minus / s_tr
    total = plus_di + minus_di
    return 0.0 if total == 0.0 else 100.0 * abs(plus_di - minus_di) / total


def macd(closes, cfg: IndicatorConfig = IndicatorConfig()) -> float:
    _require(len(closes), cfg.macd_slow, "MACD")
    return float(macd_series(closes, cfg)[-1])


def rsi(closes, cfg: IndicatorConfig = IndicatorConfig()) -> float:
    _require(len(closes), cfg.rsi_period + 1, "RSI")
    return float(rsi_series(closes, cfg)[-1])


def _hlc(bars: PriceSeries | np.ndarray):
    if isinstance(bars, PriceSeries):
        return bars.highs, bars.lows, bars.closes
    arr = np.asarray(bars, dtype=float)
    return arr[:, 0], arr[:, 1], arr[:, 2]


def cci(bars, cfg: IndicatorConfig = IndicatorConfig()) -> float:
    """``bars`` is a PriceSeries or an ``(n, 3)`` array of high, low, close."""
    h, l, c = _hlc(bars)
    _require(len(c), cfg.cci_period, "CCI")
    return float(cci_series(h, l, c, cfg)[-1])


def adx(bars, cfg: IndicatorConfig = IndicatorConfig()) -> float:
    h, l, c = _hlc(bars)
    _require(len(c), 2 * cfg.adx_period, "ADX")
    return float(adx_series(h, l, c, cfg)[-1])


def indicator_row(bars, cfg: IndicatorConfig = IndicatorConfig()) -> IndicatorSet:
    """Indicators at the last bar of ``bars`` (everything passed is treated as history)."""
    h, l, c = _hlc(bars)
    _require(len(c), cfg.warmup + 1, "indicator row")
    return IndicatorSet(macd(c, cfg), rsi(c, cfg), cci(np.column_stack([h, l, c]), cfg), adx(np.column_stack([h, l, c]), cfg))


@dataclass(frozen=True)
class IndicatorTable:
    """Per-bar indicator columns aligned with a PriceSeries; ``nan`` before warm-up."""

    macd: np.ndarray
    rsi: np.ndarray
    cci: np.ndarray
    adx: np.ndarray

    def __len__(self) -> int:
        return len(self.macd)

    def row(self, t: int) -> IndicatorSet:
        return IndicatorSet(float(self.macd[t]), float(self.rsi[t]), float(self.cci[t]), float(self.adx[t]))

    def as_array(self) -> np.ndarray:
        return np.column_stack([self.macd, self.rsi, self.cci, self.adx])

    @property
    def first_valid(self) -> int:
        ok = np.flatnonzero(np.all(np.isfinite(self.as_array()), axis=1))
        if len(ok) == 0:
            raise InsufficientHistoryError("no bar has all four indicators defined")
        return int(ok[0])


def indicator_table(series: PriceSeries, cfg: IndicatorConfig = IndicatorConfig()) -> IndicatorTable:
    h, l, c = series.highs, series.lows, series.closes
    return IndicatorTable(macd_series(c, cfg), rsi_series(c, cfg), cci_series(h, l, c, cfg), adx_series(h, l, c, cfg))


def write_indicator_csv(series: PriceSeries, table: IndicatorTable, path: str | Path) -> int:
    """Dump post-warm-up rows as ``date,macd,rsi,cci,adx``; returns the row count."""
    start = table.first_valid
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "macd", "rsi", "cci", "adx"])
        for t in range(start, len(table)):
            writer.writerow([series.bars[t].date.isoformat(), *(repr(v) for v in table.row(t).as_tuple())])
    return len(table) - start
