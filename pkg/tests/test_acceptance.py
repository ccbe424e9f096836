"""Acceptance criteria, each run at its stated tolerance.

Every test records a single PASS/FAIL line (shown with ``-s`` and in the
terminal summary) before asserting.
"""

import datetime as dt
import math
import os
import shutil
import time
from pathlib import Path

import numpy as np
import oracles
import pytest

from deeptrade import cli
from deeptrade.agents import (
    Hyperparams,
    TradingTask,
    epsilon_greedy,
    fit_scaler,
    greedy_chooser,
    make_evaluator,
    train,
    train_policy_agent,
    train_value_agent,
)
from deeptrade.backtest import DEFAULT_TICKERS, ExperimentSpec, annual_rate, run_experiment
from deeptrade.env import EnvConfig, TradingEnv, buy_and_hold_policy, random_policy, run_episode
from deeptrade.indicators import adx, indicator_table, rsi
from deeptrade.market_data import from_arrays, write_csv
from deeptrade.neural import HuberQLoss, ReinforceLoss, forward, grad_check
from deeptrade.synthetic import business_days, random_walk_series, uptrend_series
from deeptrade.toy import BanditTask, three_state_cycle

SIX = DEFAULT_TICKERS  # six-ticker universe used by the named scenarios


def test_annual_rate_reference_values(verdict):
    a = annual_rate(366.86, 1000.0, 2.0)
    b = annual_rate(253.38, 1000.0, 2.0)
    ok = round(a, 3) == 18.343 and round(b, 3) == 12.669
    assert verdict(ok, f"{a:.3f} and {b:.3f} (want 18.343, 12.669)")


def test_gradients_on_random_small_nets(verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = {}
    for head in ("identity", "softmax"):
        cases = oracles.random_gradcheck_cases(rng, head)
        errs = []
        for _ in range(100):
            net, x = next(cases)
            n_out = net.layer_dims[-1]
            if head == "identity":
                loss = HuberQLoss([int(rng.integers(n_out))], [float(rng.normal(0, 3))])
            else:
                rows = x.shape[0]
                loss = ReinforceLoss(rng.integers(n_out, size=rows), rng.normal(size=rows))
            errs.append(grad_check(net, x, loss))
        worst[head] = max(errs)
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 10.0
    assert verdict(ok, f"worst rel err Q {worst['identity']:.2e}, PG {worst['softmax']:.2e}; {elapsed:.1f}s")


def test_random_policy_invariants(verdict):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    steps, episodes, worst_gap = 0, 0, 0.0
    min_b, min_h = math.inf, math.inf
    while steps < 100_000:
        series = random_walk_series(
            int(rng.integers(60, 400)), seed=int(rng.integers(1 << 30)), vol=float(rng.uniform(0.005, 0.05))
        )
        cfg = EnvConfig(k=int(rng.integers(1, 8)), fee_rate=float(rng.choice([0.0, 0.001, 0.01])))
        env = TradingEnv(series, cfg=cfg)
        traj = run_episode(env, random_policy(cfg.k), rng)
        for tr in traj.transitions:
            min_b = min(min_b, tr.next_state.b)
            min_h = min(min_h, tr.next_state.h)
        worst_gap = max(worst_gap, abs(sum(traj.rewards) - (traj.final_asset - traj.initial_asset)))
        steps += len(traj.transitions)
        episodes += 1
    elapsed = time.perf_counter() - t0
    ok = min_b >= -100.0 and min_h >= 0 and worst_gap <= 1e-6 and elapsed < 30.0
    detail = f"{steps} steps / {episodes} episodes; min b {min_b:.2f}, min h {min_h}, "
    detail += f"reward-sum gap {worst_gap:.1e}; {elapsed:.1f}s"
    assert verdict(ok, detail)


def test_indicators_match_reference(verdict):
    series = random_walk_series(200, seed=11)
    table = indicator_table(series)
    c, h, lo = list(series.closes), list(series.highs), list(series.lows)
    worst = 0.0
    for t in range(table.first_valid, len(c)):
        ref = (
            oracles.macd_at(c, t),
            oracles.rsi_at(c, t),
            oracles.cci_at(h, lo, c, t),
            oracles.adx_at(h, lo, c, t),
        )
        got = (table.macd[t], table.rsi[t], table.cci[t], table.adx[t])
        worst = max(worst, max(abs(g - r) for g, r in zip(got, ref)))

    up = 10.0 + np.arange(40.0)
    rsi_up = rsi(up)
    days = business_days(dt.date(2020, 1, 1), 40)
    flat = from_arrays("FLAT", days, [5.0] * 40, [5.0] * 40, [5.0] * 40, [5.0] * 40)
    adx_flat = adx(flat)
    ok = worst <= 1e-9 and rsi_up == 100.0 and adx_flat == 0.0
    assert verdict(ok, f"max |diff| {worst:.1e} over 200 bars; RSI(up) {rsi_up}, ADX(flat) {adx_flat}")


def test_epsilon_greedy_frequency(verdict):
    rng = np.random.default_rng(5)
    q = rng.normal(size=11)
    best = int(np.argmax(q))
    n = 100_000
    hits = sum(epsilon_greedy(q, 0.8, rng) == best for _ in range(n))
    p = 0.2 + 0.8 / 11
    sigma = math.sqrt(p * (1 - p) / n)
    freq = hits / n
    ok = abs(freq - p) <= 3 * sigma
    assert verdict(ok, f"P(a*) {freq:.5f} vs {p:.5f} (3 sigma = {3 * sigma:.5f})")


@pytest.mark.slow
def test_agents_learn_uptrend_and_toy(verdict):
    t0 = time.perf_counter()
    series = uptrend_series(500)
    train_env, test_env = TradingEnv(series, stop=350), TradingEnv(series, start=350)
    bh = run_episode(test_env, buy_and_hold_policy(test_env.cfg.k)).profit
    hp = Hyperparams()
    means = {}
    for algo in ("qlearn", "sarsa", "pg"):
        profits = []
        for seed in range(5):
            scaler = fit_scaler(train_env, seed)
            train_task, test_task = TradingTask(train_env, scaler), TradingTask(test_env, scaler)
            net = train(algo, train_task, hp, seed, make_evaluator(train_task, None)).net
            profits.append(test_task.rollout(greedy_chooser(net)).profit)
        means[algo] = float(np.mean(profits))

    toy = three_state_cycle()
    optimal = toy.optimal_policy(hp.gamma)
    choose = greedy_chooser(train_value_agent("qlearn", toy, Hyperparams(nn_learning_rate=1e-3), 0).net)
    learned = tuple(choose(toy.features(s)) for s in range(toy.n_states))
    elapsed = time.perf_counter() - t0

    ok = all(m > 0 and m >= 0.5 * bh for m in means.values()) and learned == optimal and elapsed < 300
    detail = ", ".join(f"{a} {m:.1f}" for a, m in means.items())
    detail += f" vs buy-and-hold {bh:.1f}; toy policy {learned} (optimal {optimal}); {elapsed:.0f}s"
    assert verdict(ok, detail)


def test_policy_gradient_bandit(verdict):
    t0 = time.perf_counter()
    task = BanditTask(rewards=(1.0, -1.0))
    hp = Hyperparams(episodes=200)
    probs = [float(forward(train_policy_agent(task, hp, seed).net, task.x)[0]) for seed in range(5)]
    elapsed = time.perf_counter() - t0
    ok = all(p > 0.9 for p in probs) and elapsed < 10.0
    assert verdict(ok, f"P(good arm) {[round(p, 4) for p in probs]}; {elapsed:.1f}s")


@pytest.mark.slow
def test_backtest_cli_is_reproducible(verdict, data_dir, tmp_path):
    t0 = time.perf_counter()
    out = tmp_path / "bt"
    argv = [
        "backtest", "--data-dir", str(data_dir), "--out", str(out), "--ticker", "AAA,BBB",
        "--algo", "qlearn", "--reps", "2", "--seed", "42",
        "--train-start", "2014-01-01", "--train-end", "2014-12-31",
        "--test-start", "2015-01-01", "--test-end", "2015-06-30",
    ]  # fmt: skip
    runs = []
    for _ in range(2):
        assert cli.main(argv) == 0
        runs.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
        shutil.rmtree(out)
    elapsed = time.perf_counter() - t0
    ok = runs[0] == runs[1] and len(runs[0]) > 3 and elapsed < 120
    assert verdict(ok, f"{len(runs[0])} output files identical across runs: {runs[0] == runs[1]}; {elapsed:.0f}s")


@pytest.mark.slow
def test_six_ticker_backtest_completes(verdict, tmp_path):
    """Full-size run on real CSVs when DEEPTRADE_DATA_DIR points at them, else a reduced synthetic run."""
    real = os.environ.get("DEEPTRADE_DATA_DIR")
    if real and all((Path(real) / f"{t}.csv").exists() for t in SIX):
        data, hp, source = Path(real), Hyperparams(), "real data"
    else:
        data = tmp_path / "six"
        data.mkdir()
        for i, t in enumerate(SIX):
            s = random_walk_series(2600, seed=100 + i, drift=4e-4, vol=0.018, ticker=t, start=dt.date(2012, 10, 1))
            write_csv(s, data / f"{t}.csv")
        hp, source = Hyperparams(episodes=2, nn_epochs=1), "synthetic data, 2 episodes x 1 epoch"
    spec = ExperimentSpec(tickers=SIX, scenario="before2021", algo="qlearn", repetitions=20, hyperparams=hp)
    report = run_experiment(spec, data, workers=min(4, os.cpu_count() or 1))
    parts = sum(report.mean_profit.values())
    rate_parts = parts / (len(SIX) * spec.env.initial_balance) * 100 / spec.test_years
    ok = (
        len(report.trials) == 120
        and abs(report.total_profit - parts) <= 1e-9 * max(1.0, abs(parts))
        and abs(report.total_rate - rate_parts) <= 1e-9 * max(1.0, abs(rate_parts))
    )
    assert verdict(ok, f"{source}: total {report.total_profit:.2f} = sum of six means {parts:.2f}")
