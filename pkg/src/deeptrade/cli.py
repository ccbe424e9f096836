"""Command-line entry point: ``deeptrade {ingest-check,indicators,train,backtest}``.

Settings come from an optional flat ``key = value`` config file and are
overridden by flags. Exit codes: 0 ok, 1 usage, 2 data, 3 runtime/numeric.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .agents import ALGOS, Hyperparams, TradingTask, fit_scaler, greedy_chooser, make_evaluator, train, write_curve_csv
from .backtest import BASELINES, ExperimentSpec, build_envs, format_report, run_experiment, write_report
from .env import EnvConfig, EnvError, write_trajectory_csv
from .indicators import IndicatorConfig, InsufficientHistoryError, indicator_table, write_indicator_csv
from .market_data import DataError, DateRange, load_csv
from .neural import save_checkpoint

log = logging.getLogger("deeptrade")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def read_config(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    config = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        config[key.replace("-", "_")] = value
    return config


def _coerce(value: str, default):
    if isinstance(default, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, tuple):
        return tuple(int(v) for v in value.replace(",", " ").split())
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float) or default is None:
        return float(value)
    return value


def _build(cls, settings: dict[str, str]):
    kwargs = {}
    for f in fields(cls):
        if f.name in settings:
            try:
                kwargs[f.name] = _coerce(settings[f.name], f.default)
            except ValueError:
                raise UsageError(f"bad value for {f.name}: {settings[f.name]!r}") from None
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


GENERAL_KEYS = {
    "data_dir": "data",
    "out": "out",
    "algo": "qlearn",
    "ticker": "",
    "scenario": "before2021",
    "train_start": "",
    "train_end": "",
    "test_start": "",
    "test_end": "",
    "start": "",
    "end": "",
    "reps": "20",
    "seed": "0",
    "workers": "1",
    "use_adj_close": "false",
}


def effective_settings(args: argparse.Namespace) -> dict[str, str]:
    settings = dict(GENERAL_KEYS)
    if args.config:
        settings.update(read_config(args.config))
    for key, value in vars(args).items():
        if key in ("command", "config", "set") or value is None:
            continue
        settings[key] = ",".join(value) if isinstance(value, list) else str(value)
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        settings[key.strip().replace("-", "_")] = value.strip()
    return settings


def _tickers(settings: dict[str, str]) -> tuple[str, ...]:
    tickers = tuple(t.strip() for t in settings["ticker"].replace(" ", ",").split(",") if t.strip())
    if not tickers:
        raise UsageError("no ticker given (--ticker)")
    return tickers


def _spec(settings: dict[str, str]) -> ExperimentSpec:
    dates = [settings[k] for k in ("train_start", "train_end", "test_start", "test_end")]
    scenario = settings["scenario"]
    train_range = test_range = None
    if any(dates):
        if not all(dates):
            raise UsageError("custom ranges need all of --train-start/--train-end/--test-start/--test-end")
        try:
            train_range = DateRange.parse(dates[0], dates[1])
            test_range = DateRange.parse(dates[2], dates[3])
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        scenario = "custom"
    try:
        return ExperimentSpec(
            tickers=_tickers(settings),
            scenario=scenario,
            algo=settings["algo"],
            repetitions=int(settings["reps"]),
            base_seed=int(settings["seed"]),
            env=_build(EnvConfig, settings),
            hyperparams=_build(Hyperparams, settings),
            indicators=_build(IndicatorConfig, settings),
            train_range=train_range,
            test_range=test_range,
            use_adj_close=_coerce(settings["use_adj_close"], False),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def write_manifest(settings: dict[str, str], spec: ExperimentSpec | None, path: Path) -> None:
    """Echo the effective configuration as ``key = value`` lines."""
    merged = dict(settings)
    if spec is not None:
        for part in (spec.env, spec.hyperparams, spec.indicators):
            for key, value in asdict(part).items():
                merged[key] = ",".join(map(str, value)) if isinstance(value, tuple) else str(value)
        train_range, test_range = spec.ranges()
        merged.update(
            scenario=spec.scenario,
            train_start=str(train_range.start),
            train_end=str(train_range.end),
            test_start=str(test_range.start),
            test_end=str(test_range.end),
            optimizer="sgd" if spec.algo == "pg" else ("adam" if spec.algo in ALGOS else "none"),
        )
    path.write_text("".join(f"{k} = {merged[k]}\n" for k in sorted(merged)))


# -- commands ----------------------------------------------------------------------


def cmd_ingest_check(settings: dict[str, str]) -> int:
    for ticker in _tickers(settings):
        series = load_csv(Path(settings["data_dir"]) / f"{ticker}.csv", ticker)
        span = series.span
        print(f"{ticker}: {len(series)} bars {span.start}..{span.end} ok")
    return EXIT_OK


def cmd_indicators(settings: dict[str, str]) -> int:
    cfg = _build(IndicatorConfig, settings)
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    for ticker in _tickers(settings):
        series = load_csv(Path(settings["data_dir"]) / f"{ticker}.csv", ticker)
        table = indicator_table(series, cfg)
        if settings["start"] or settings["end"]:
            lo = settings["start"] or str(series.span.start)
            hi = settings["end"] or str(series.span.end)
            keep = DateRange.parse(lo, hi)
            mask = np.array([d not in keep for d in series.dates])
            for col in (table.macd, table.rsi, table.cci, table.adx):
                col[mask] = np.nan
        path = out / f"{ticker}_indicators.csv"
        rows = write_indicator_csv(series, table, path)
        print(f"{ticker}: wrote {rows} rows to {path}")
    return EXIT_OK


def cmd_train(settings: dict[str, str]) -> int:
    spec = _spec(settings)
    if spec.algo not in ALGOS:
        raise UsageError(f"train needs --algo in {ALGOS}")
    if len(spec.tickers) != 1:
        raise UsageError("train takes exactly one --ticker")
    ticker = spec.tickers[0]
    series = load_csv(Path(settings["data_dir"]) / f"{ticker}.csv", ticker, use_adj_close=spec.use_adj_close)
    train_env, test_env = build_envs(series, spec)
    seed = spec.base_seed
    scaler = fit_scaler(train_env, seed)
    train_task, test_task = TradingTask(train_env, scaler), TradingTask(test_env, scaler)
    result = train(spec.algo, train_task, spec.hyperparams, seed, make_evaluator(train_task, test_task))

    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{spec.algo}_{ticker}_seed{seed}"
    save_checkpoint(result.net, out / f"{stem}.ckpt")
    (out / f"{stem}.scaler.json").write_text(
        json.dumps({"mean": result_list(scaler.mean), "std": result_list(scaler.std)}) + "\n"
    )
    write_curve_csv(result.curve, out / f"{stem}.curve.csv")
    test_roll = test_task.rollout(greedy_chooser(result.net))
    write_trajectory_csv(test_env, test_roll.trajectory, out / f"{stem}.test_trajectory.csv")
    write_manifest(settings, spec, out / f"{stem}.manifest.txt")
    last = result.curve[-1]
    print(f"{ticker} {spec.algo} seed {seed}: train profit {last.train_profit:.2f}  test profit {test_roll.profit:.2f}")
    return EXIT_OK


def result_list(arr: np.ndarray) -> list[float]:
    return [float(v) for v in arr]


def cmd_backtest(settings: dict[str, str]) -> int:
    spec = _spec(settings)
    out = Path(settings["out"])
    existed = out.exists()
    written: list[Path] = []

    def progress(r) -> None:
        log.info("%s seed %d: profit %.2f", r.ticker, r.seed, r.profit)

    try:
        report = run_experiment(spec, settings["data_dir"], workers=int(settings["workers"]), progress=progress)
        written = write_report(report, out)
        manifest = out / "manifest.txt"
        write_manifest(settings, spec, manifest)
        written.append(manifest)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        if not existed and out.exists():
            shutil.rmtree(out, ignore_errors=True)
        raise
    print(format_report(report), end="")
    return EXIT_OK


COMMANDS = {
    "ingest-check": cmd_ingest_check,
    "indicators": cmd_indicators,
    "train": cmd_train,
    "backtest": cmd_backtest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deeptrade", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value settings file")
        p.add_argument("--data-dir", dest="data_dir")
        p.add_argument("--out", help="output directory")
        p.add_argument("--ticker", action="append", help="ticker symbol; repeat or comma-separate")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
        if name == "indicators":
            p.add_argument("--start")
            p.add_argument("--end")
        if name in ("train", "backtest"):
            p.add_argument("--algo", choices=ALGOS + (BASELINES if name == "backtest" else ()))
            p.add_argument("--scenario", choices=("before2021", "after2021"))
            p.add_argument("--train-start", dest="train_start")
            p.add_argument("--train-end", dest="train_end")
            p.add_argument("--test-start", dest="test_start")
            p.add_argument("--test-end", dest="test_end")
            p.add_argument("--seed", type=int)
            p.add_argument("--use-adj-close", dest="use_adj_close", action="store_const", const="true")
        if name == "backtest":
            p.add_argument("--reps", type=int)
            p.add_argument("--workers", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        settings = effective_settings(args)
        return COMMANDS[args.command](settings)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, InsufficientHistoryError, EnvError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
