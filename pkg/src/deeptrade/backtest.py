"""Experiment harness: date splits, repeated seeded trials, profit metrics and reports."""

from __future__ import annotations

import csv
import datetime as dt
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .agents import (
    ALGOS,
    CurvePoint,
    Hyperparams,
    TradingTask,
    fit_scaler,
    greedy_chooser,
    make_evaluator,
    train,
    write_curve_csv,
)
from .env import EnvConfig, TradingEnv, Trajectory, buy_and_hold_policy, hold_policy, run_episode
from .indicators import IndicatorConfig, indicator_table
from .market_data import DataError, DateRange, PriceSeries, index_range, load_csv
from .neural import Mlp

DEFAULT_TICKERS = ("GOOG", "AAPL", "TSLA", "META", "MSFT", "IBM")
BASELINES = ("hold", "buyhold")
PERCENTILES = (0, 25, 50, 75, 100)

SCENARIOS: dict[str, tuple[DateRange, DateRange]] = {
    "before2021": (
        DateRange(dt.date(2013, 1, 8), dt.date(2019, 1, 2)),
        DateRange(dt.date(2019, 1, 3), dt.date(2020, 12, 30)),
    ),
    "after2021": (
        DateRange(dt.date(2013, 1, 8), dt.date(2020, 12, 8)),
        DateRange(dt.date(2020, 12, 9), dt.date(2022, 12, 1)),
    ),
}
NAMED_SCENARIO_YEARS = 2.0


def scenario_ranges(
    scenario: str, train: DateRange | None = None, test: DateRange | None = None
) -> tuple[DateRange, DateRange]:
    if scenario in SCENARIOS:
        return SCENARIOS[scenario]
    if scenario != "custom":
        raise ValueError(f"unknown scenario {scenario!r}")
    if train is None or test is None:
        raise ValueError("custom scenario needs explicit train and test ranges")
    if train.overlaps(test):
        raise ValueError(f"train range {train} overlaps test range {test}")
    if train.start > test.start:
        raise ValueError("train range must precede the test range")
    return train, test


def annual_rate(profit: float, initial: float, years: float) -> float:
    """Simple (non-compounded) annual return in percent."""
    if not initial > 0 or not years > 0:
        raise ValueError("initial balance and span must be positive")
    return profit / initial * 100.0 / years


@dataclass(frozen=True)
class ExperimentSpec:
    tickers: tuple[str, ...] = DEFAULT_TICKERS
    scenario: str = "before2021"
    algo: str = "qlearn"
    repetitions: int = 20
    base_seed: int = 0
    env: EnvConfig = EnvConfig()
    hyperparams: Hyperparams = Hyperparams()
    indicators: IndicatorConfig = IndicatorConfig()
    train_range: DateRange | None = None
    test_range: DateRange | None = None
    use_adj_close: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "tickers", tuple(self.tickers))
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.algo not in ALGOS + BASELINES:
            raise ValueError(f"unknown algo {self.algo!r}")
        if not self.tickers:
            raise ValueError("need at least one ticker")
        self.ranges()

    def ranges(self) -> tuple[DateRange, DateRange]:
        return scenario_ranges(self.scenario, self.train_range, self.test_range)

    @property
    def test_years(self) -> float:
        if self.scenario in SCENARIOS:
            return NAMED_SCENARIO_YEARS
        return self.ranges()[1].years


@dataclass
class TrialResult:
    ticker: str
    algo: str
    seed: int
    profit: float
    annual_rate: float
    curve: list[CurvePoint] = field(default_factory=list)
    trajectory: Trajectory | None = None
    net: Mlp | None = None


@dataclass
class BacktestReport:
    spec: ExperimentSpec
    trials: list[TrialResult]
    mean_profit: dict[str, float]
    mean_rate: dict[str, float]
    total_profit: float
    total_rate: float
    percentiles: dict[str, tuple[float, ...]]


def build_envs(series: PriceSeries, spec: ExperimentSpec) -> tuple[TradingEnv, TradingEnv]:
    """Train and test environments over one series.

    Indicators are computed once over the whole (causal) series, so bars
    before the test start serve as its indicator history.
    """
    train_range, test_range = spec.ranges()
    table = indicator_table(series, spec.indicators)
    tr_lo, tr_hi = index_range(series, train_range)
    te_lo, te_hi = index_range(series, test_range)
    return (
        TradingEnv(series, table, spec.env, start=tr_lo, stop=tr_hi),
        TradingEnv(series, table, spec.env, start=te_lo, stop=te_hi),
    )


def run_trial(spec: ExperimentSpec, series: PriceSeries, seed: int) -> TrialResult:
    train_env, test_env = build_envs(series, spec)
    if spec.algo in BASELINES:
        policy = hold_policy if spec.algo == "hold" else buy_and_hold_policy(spec.env.k)
        traj = run_episode(test_env, policy, np.random.default_rng(seed))
        profit, curve, net = traj.profit, [], None
    else:
        scaler = fit_scaler(train_env, seed)
        train_task, test_task = TradingTask(train_env, scaler), TradingTask(test_env, scaler)
        result = train(spec.algo, train_task, spec.hyperparams, seed, make_evaluator(train_task, test_task))
        rollout = test_task.rollout(greedy_chooser(result.net))
        traj, profit, curve, net = rollout.trajectory, rollout.profit, result.curve, result.net
    rate = annual_rate(profit, spec.env.initial_balance, spec.test_years)
    return TrialResult(series.ticker, spec.algo, seed, profit, rate, curve, traj, net)


def nearest_rank(values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * N)-th smallest value (min for pct = 0)."""
    ordered = sorted(values)
    if not ordered:
        raise ValueError("no values")
    rank = max(1, math.ceil(pct / 100.0 * len(ordered)))
    return ordered[rank - 1]


def percentile_table(results: Sequence[TrialResult]) -> dict[str, tuple[float, ...]]:
    by_ticker: dict[str, list[float]] = {}
    for r in results:
        by_ticker.setdefault(r.ticker, []).append(r.profit)
    return {t: tuple(nearest_rank(v, p) for p in PERCENTILES) for t, v in by_ticker.items()}


def aggregate(spec: ExperimentSpec, trials: list[TrialResult]) -> BacktestReport:
    trials = sorted(trials, key=lambda r: (spec.tickers.index(r.ticker), r.seed))
    mean_profit, mean_rate = {}, {}
    for ticker in spec.tickers:
        profits = [r.profit for r in trials if r.ticker == ticker]
        mean_profit[ticker] = math.fsum(profits) / len(profits)
        mean_rate[ticker] = annual_rate(mean_profit[ticker], spec.env.initial_balance, spec.test_years)
    total = math.fsum(mean_profit.values())
    total_rate = annual_rate(total, len(spec.tickers) * spec.env.initial_balance, spec.test_years)
    return BacktestReport(spec, trials, mean_profit, mean_rate, total, total_rate, percentile_table(trials))


def load_universe(spec: ExperimentSpec, data_dir: str | Path) -> dict[str, PriceSeries]:
    data_dir = Path(data_dir)
    universe = {}
    for ticker in spec.tickers:
        path = data_dir / f"{ticker}.csv"
        if not path.is_file():
            raise DataError(f"missing data file for ticker {ticker}: {path}")
        universe[ticker] = load_csv(path, ticker, use_adj_close=spec.use_adj_close)
    return universe


def _run_job(job: tuple[ExperimentSpec, PriceSeries, int]) -> TrialResult:
    return run_trial(*job)


def run_experiment(
    spec: ExperimentSpec,
    data_dir: str | Path,
    workers: int = 1,
    progress: Callable[[TrialResult], None] | None = None,
) -> BacktestReport:
    """Train and evaluate every ticker x repetition; trial ``i`` uses seed ``base_seed + i``."""
    universe = load_universe(spec, data_dir)
    for series in universe.values():
        build_envs(series, spec)  # fail fast on short or missing ranges
    jobs = [(spec, universe[t], spec.base_seed + i) for t in spec.tickers for i in range(spec.repetitions)]
    trials = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for result in pool.map(_run_job, jobs):
                trials.append(result)
                if progress:
                    progress(result)
    else:
        for job in jobs:
            result = _run_job(job)
            trials.append(result)
            if progress:
                progress(result)
    return aggregate(spec, trials)


# -- report output ---------------------------------------------------------------

ALGO_LABELS = {
    "qlearn": "Deep Q-Learning",
    "sarsa": "Deep SARSA",
    "pg": "Policy Gradient",
    "hold": "Always Hold",
    "buyhold": "Buy and Hold",
}


def format_report(report: BacktestReport) -> str:
    spec = report.spec
    train_range, test_range = spec.ranges()
    cols = [*spec.tickers, "Total"]
    profits = [f"${report.mean_profit[t]:.2f}" for t in spec.tickers] + [f"${report.total_profit:.2f}"]
    rates = [f"{report.mean_rate[t]:.4f}%" for t in spec.tickers] + [f"{report.total_rate:.4f}%"]
    label = ALGO_LABELS[spec.algo]
    rows = [["Method", *cols], [f"{label} | Profit", *profits], ["Annual Rate", *rates]]
    widths = [max(len(r[i]) for r in rows) for i in range(len(cols) + 1)]
    lines = [
        f"scenario: {spec.scenario}  train {train_range.start}..{train_range.end}  "
        f"test {test_range.start}..{test_range.end}",
        f"algo: {spec.algo}  repetitions: {spec.repetitions}  base seed: {spec.base_seed}",
        "",
    ]
    for i, row in enumerate(rows):
        lines.append(" | ".join(cell.rjust(w) for cell, w in zip(row, widths)))
        if i == 0:
            lines.append("-+-".join("-" * w for w in widths))
    lines += ["", "Profit percentiles across repetitions (nearest rank)"]
    head = ["Ticker", "min", "p25", "p50", "p75", "max"]
    prow = [head] + [[t, *(f"{v:.2f}" for v in report.percentiles[t])] for t in spec.tickers]
    pw = [max(len(r[i]) for r in prow) for i in range(len(head))]
    lines += [" | ".join(c.rjust(w) for c, w in zip(r, pw)) for r in prow]
    return "\n".join(lines) + "\n"


def write_report(report: BacktestReport, out_dir: str | Path) -> list[Path]:
    """Write the text table, trial CSV, percentile CSV and per-trial learning curves."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    text = out / "report.txt"
    text.write_text(format_report(report))
    written.append(text)

    trials_csv = out / "trials.csv"
    with trials_csv.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "algo", "seed", "profit", "annual_rate"])
        for r in report.trials:
            w.writerow([r.ticker, r.algo, r.seed, repr(r.profit), repr(r.annual_rate)])
    written.append(trials_csv)

    pct_csv = out / "percentiles.csv"
    with pct_csv.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "algo", "min", "p25", "p50", "p75", "max"])
        for t in report.spec.tickers:
            w.writerow([t, report.spec.algo, *(repr(v) for v in report.percentiles[t])])
    written.append(pct_csv)

    curves = out / "curves"
    for r in report.trials:
        if r.curve:
            curves.mkdir(exist_ok=True)
            path = curves / f"{r.algo}_{r.ticker}_seed{r.seed}.csv"
            write_curve_csv(r.curve, path)
            written.append(path)
    return written
