import datetime as dt
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from deeptrade.market_data import write_csv
from deeptrade.synthetic import random_walk_series, uptrend_series


@pytest.fixture
def walk():
    return random_walk_series(200, seed=3)


@pytest.fixture
def uptrend():
    return uptrend_series(500)


@pytest.fixture
def csv_factory(tmp_path):
    def make(rows, name="TEST.csv", header="Date,Open,High,Low,Close,Adj Close,Volume"):
        path = tmp_path / name
        path.write_text("\n".join([header, *rows]) + "\n")
        return path

    return make


@pytest.fixture
def data_dir(tmp_path):
    """Two synthetic tickers spanning both named scenarios."""
    d = tmp_path / "data"
    d.mkdir()
    for i, ticker in enumerate(["AAA", "BBB"]):
        s = random_walk_series(2600, seed=10 + i, drift=0.0005, vol=0.015, ticker=ticker, start=dt.date(2012, 11, 1))
        write_csv(s, d / f"{ticker}.csv")
    return d


ACCEPTANCE: list[str] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion; returns the flag for asserting."""

    def record(ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {request.node.name}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
