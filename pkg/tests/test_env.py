import dataclasses
import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deeptrade.env import (
    EnvConfig,
    EnvState,
    EpisodeDoneError,
    SeriesTooShortError,
    TradingEnv,
    buy_and_hold_policy,
    hold_policy,
    legal_action,
    random_policy,
    run_episode,
    write_trajectory_csv,
)
from deeptrade.indicators import IndicatorTable
from deeptrade.market_data import from_arrays
from deeptrade.synthetic import business_days, random_walk_series

CFG = EnvConfig()


def price_env(prices, cfg=CFG):
    """Env over explicit closes with all-zero indicators (no warm-up)."""
    n = len(prices)
    series = from_arrays("P", business_days(dt.date(2020, 1, 1), n), prices)
    zeros = np.zeros(n)
    return TradingEnv(series, IndicatorTable(zeros, zeros, zeros, zeros), cfg)


def state(p=100.0, b=1000.0, h=0, t=0):
    return EnvState(p, b, h, 0.0, 50.0, 0.0, 0.0, t)


def test_config_defaults_and_validation():
    assert (CFG.k, CFG.initial_balance, CFG.balance_tolerance, CFG.fee_rate) == (5, 1000.0, -100.0, 0.001)
    assert CFG.n_actions == 11
    with pytest.raises(ValueError):
        EnvConfig(k=0)
    with pytest.raises(ValueError):
        EnvConfig(balance_tolerance=10.0)
    with pytest.raises(ValueError):
        EnvConfig(fee_rate=-0.1)


def test_reset_after_warmup():
    series = random_walk_series(100, seed=0)
    env = TradingEnv(series)
    s = env.reset()
    assert s.t == 27
    assert (s.b, s.h) == (1000.0, 0)
    assert s.total_asset == 1000.0
    assert env.reset() == s


def test_series_too_short():
    with pytest.raises(SeriesTooShortError):
        TradingEnv(random_walk_series(28, seed=0))
    assert TradingEnv(random_walk_series(29, seed=0)).n_steps == 1


def test_legal_action_examples():
    assert legal_action(state(h=0), -5, CFG) == 0
    assert legal_action(state(h=3), -5, CFG) == -3
    assert legal_action(state(b=1000.0), 5, CFG) == 5
    assert legal_action(state(b=0.0), 5, CFG) == 0
    # headroom 1100 buys floor(1100 / 100.1) = 10 shares at most
    assert legal_action(state(b=1000.0), 5, EnvConfig(k=20)) == 5
    assert legal_action(state(b=1000.0), 20, EnvConfig(k=20)) == 10
    with pytest.raises(ValueError):
        legal_action(state(), 6, CFG)


def test_legal_action_exact_boundary():
    # cost of 1 share is exactly the headroom: b - 100 - 0.1 == -100
    assert legal_action(state(b=0.1), 1, CFG) == 1
    assert legal_action(state(b=0.0999), 1, CFG) == 0


def test_step_examples():
    env = price_env([100.0, 102.0, 103.0])
    tr = env.step(state(p=100.0, b=700.0, h=3), 0)
    assert tr.reward == pytest.approx(6.0)
    assert tr.fee_paid == 0.0

    env = price_env([100.0, 100.0, 100.0])
    tr = env.step(state(), 5)
    assert tr.next_state.b == pytest.approx(499.5)
    assert tr.reward == pytest.approx(-0.5)
    assert (tr.action_requested, tr.action_executed, tr.next_state.h) == (5, 5, 5)

    env = price_env([50.0, 10.0, 10.0])
    tr = env.step(state(p=50.0, b=0.0, h=2), -2)
    assert tr.fee_paid == pytest.approx(0.10)
    assert tr.next_state.b == pytest.approx(99.90)
    assert tr.next_state.h == 0


def test_step_after_done():
    env = price_env([100.0, 101.0])
    tr = env.step(env.reset(), 1)
    assert tr.done
    with pytest.raises(EpisodeDoneError):
        env.step(tr.next_state, 0)


def test_run_episode_examples():
    env = TradingEnv(random_walk_series(120, seed=2))
    assert run_episode(env, hold_policy).profit == 0.0
    assert run_episode(env, hold_policy).final_asset == 1000.0

    pol = random_policy(CFG.k)
    a = run_episode(env, pol, np.random.default_rng(5))
    b = run_episode(env, pol, np.random.default_rng(5))
    assert a.transitions == b.transitions

    prices = [40.0, 41.0, 45.0, 47.0, 50.0]
    traj = run_episode(price_env(prices), buy_and_hold_policy(1))
    assert traj.profit == pytest.approx(10.0 - 0.001 * 40.0)


def test_sarsa_next_actions_recorded():
    env = TradingEnv(random_walk_series(60, seed=1))
    traj = run_episode(env, random_policy(5), np.random.default_rng(0))
    assert traj.next_actions[-1] is None
    for tr, nxt in zip(traj.transitions[1:], traj.next_actions[:-1]):
        assert tr.action_requested == nxt


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    k=st.integers(1, 8),
    tol=st.floats(-500, 0),
    fee=st.floats(0, 0.01),
    vol=st.floats(0.005, 0.1),
)
def test_random_policy_invariants(seed, k, tol, fee, vol):
    cfg = EnvConfig(k=k, balance_tolerance=tol, fee_rate=fee)
    env = TradingEnv(random_walk_series(80, seed=seed, vol=vol), cfg=cfg)
    traj = run_episode(env, random_policy(k), np.random.default_rng(seed))
    for tr in traj.transitions:
        ns = tr.next_state
        assert ns.b >= cfg.balance_tolerance
        assert ns.h >= 0
        assert legal_action(tr.state, tr.action_executed, cfg) == tr.action_executed
        assert tr.fee_paid == pytest.approx(fee * tr.state.p * abs(tr.action_executed))
        assert tr.reward == pytest.approx(ns.total_asset - tr.state.total_asset)
    assert traj.rewards.sum() == pytest.approx(traj.profit, abs=1e-6)
    assert traj.transitions[-1].done and not any(tr.done for tr in traj.transitions[:-1])


def test_zero_trade_rewards_are_zero():
    env = TradingEnv(random_walk_series(80, seed=4), cfg=EnvConfig(fee_rate=0.0))
    assert np.all(run_episode(env, hold_policy).rewards == 0.0)


def test_no_peeking():
    base = random_walk_series(80, seed=9)
    t = 50
    later = np.where(np.arange(80) > t + 1, 3.0, 1.0)
    altered = from_arrays("X", base.dates, base.closes * later, base.highs * later, base.lows * later)
    e1, e2 = TradingEnv(base), TradingEnv(altered)
    s = dataclasses.replace(e1.reset(), t=t, p=float(base.closes[t]))
    assert e1.step(s, 2) == e2.step(s, 2)


def test_trajectory_csv(tmp_path):
    env = TradingEnv(random_walk_series(60, seed=1))
    traj = run_episode(env, random_policy(5), np.random.default_rng(0))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(env, traj, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,date,price,action_requested,action_executed,fee,balance,shares,reward"
    assert len(lines) == len(traj) + 1
