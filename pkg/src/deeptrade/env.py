"""Single-ticker trading MDP with integer share trades, fees and a balance floor."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .indicators import IndicatorConfig, IndicatorTable, indicator_table
from .market_data import PriceSeries


class EnvError(RuntimeError):
    pass


class SeriesTooShortError(EnvError):
    pass


class EpisodeDoneError(EnvError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    k: int = 5
    initial_balance: float = 1000.0
    balance_tolerance: float = -100.0
    fee_rate: float = 0.001

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.fee_rate < 0:
            raise ValueError("fee_rate must be >= 0")
        if not self.balance_tolerance <= 0 <= self.initial_balance:
            raise ValueError("need balance_tolerance <= 0 <= initial_balance")

    @property
    def n_actions(self) -> int:
        return 2 * self.k + 1


@dataclass(frozen=True)
class EnvState:
    p: float
    b: float
    h: int
    macd: float
    rsi: float
    cci: float
    adx: float
    t: int

    @property
    def total_asset(self) -> float:
        return self.b + self.p * self.h

    def features(self) -> np.ndarray:
        return np.array([self.p, self.b, self.h, self.macd, self.rsi, self.cci, self.adx], dtype=float)


@dataclass(frozen=True)
class Transition:
    state: EnvState
    action_requested: int
    action_executed: int
    reward: float
    next_state: EnvState
    fee_paid: float
    done: bool


def fee(price: float, shares: int, cfg: EnvConfig) -> float:
    return cfg.fee_rate * price * abs(shares)


def legal_action(state: EnvState, requested: int, cfg: EnvConfig) -> int:
    """Clamp a requested share delta to what the portfolio can execute.

    Sales are limited to the shares held; purchases to the largest quantity
    whose cost plus fee keeps the balance at or above the tolerance.
    """
    requested = int(requested)
    if abs(requested) > cfg.k:
        raise ValueError(f"action {requested} outside [-{cfg.k}, {cfg.k}]")
    if requested <= 0:
        return max(requested, -state.h)

    def affordable(q: int) -> bool:
        return state.b - q * state.p - cfg.fee_rate * state.p * q >= cfg.balance_tolerance

    headroom = state.b - cfg.balance_tolerance
    q = min(requested, max(0, math.floor(headroom / (state.p * (1.0 + cfg.fee_rate)))))
    # the division can be off by one ulp either way
    while q > 0 and not affordable(q):
        q -= 1
    while q < requested and affordable(q + 1):
        q += 1
    return q


class TradingEnv:
    """Deterministic MDP over ``series[start:stop]``.

    Bars before ``start`` only serve as indicator history. ``start`` defaults
    to the first bar at which every indicator is defined; trading requires at
    least two tradable days.
    """

    def __init__(
        self,
        series: PriceSeries,
        indicators: IndicatorTable | None = None,
        cfg: EnvConfig = EnvConfig(),
        start: int | None = None,
        stop: int | None = None,
        indicator_cfg: IndicatorConfig = IndicatorConfig(),
    ):
        self.series = series
        self.cfg = cfg
        self.indicators = indicators if indicators is not None else indicator_table(series, indicator_cfg)
        if len(self.indicators) != len(series):
            raise EnvError("indicator table is not aligned with the price series")
        self.prices = series.closes
        self._ind = self.indicators.as_array()
        stop = len(series) if stop is None else stop
        try:
            first = self.indicators.first_valid
        except ValueError:
            first = len(series)
        start = first if start is None else max(start, first)
        if stop - start < 2:
            raise SeriesTooShortError(
                f"{series.ticker}: {stop - start} tradable days after indicator warm-up (need >= 2)"
            )
        self.start, self.stop = start, stop

    @property
    def n_steps(self) -> int:
        return self.stop - self.start - 1

    def _state(self, t: int, b: float, h: int) -> EnvState:
        m, r, c, a = self._ind[t]
        return EnvState(float(self.prices[t]), b, h, float(m), float(r), float(c), float(a), t)

    def reset(self) -> EnvState:
        return self._state(self.start, float(self.cfg.initial_balance), 0)

    def is_done(self, state: EnvState) -> bool:
        return state.t >= self.stop - 1

    def legal_action(self, state: EnvState, requested: int) -> int:
        return legal_action(state, requested, self.cfg)

    def step(self, state: EnvState, requested: int) -> Transition:
        if self.is_done(state):
            raise EpisodeDoneError(f"step called on terminal state at t={state.t}")
        executed = legal_action(state, requested, self.cfg)
        paid = fee(state.p, executed, self.cfg)
        b = state.b - state.p * executed - paid
        nxt = self._state(state.t + 1, b, state.h + executed)
        reward = nxt.total_asset - state.total_asset
        return Transition(state, int(requested), executed, reward, nxt, paid, self.is_done(nxt))


Policy = Callable[[EnvState, np.random.Generator], int]


@dataclass
class Trajectory:
    transitions: list[Transition] = field(default_factory=list)
    next_actions: list[int | None] = field(default_factory=list)
    returns: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([tr.reward for tr in self.transitions])

    @property
    def initial_asset(self) -> float:
        return self.transitions[0].state.total_asset

    @property
    def final_asset(self) -> float:
        return self.transitions[-1].next_state.total_asset

    @property
    def profit(self) -> float:
        return self.final_asset - self.initial_asset


def run_episode(env: TradingEnv, policy: Policy, rng: np.random.Generator | None = None) -> Trajectory:
    """Roll ``policy`` from reset to the last day.

    The action the policy picks at each next state is the one actually taken
    there, and is also stored as that step's SARSA next action.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    traj = Trajectory()
    state = env.reset()
    action = int(policy(state, rng))
    while True:
        tr = env.step(state, action)
        traj.transitions.append(tr)
        if tr.done:
            traj.next_actions.append(None)
            return traj
        state = tr.next_state
        action = int(policy(state, rng))
        traj.next_actions.append(action)


def hold_policy(state: EnvState, rng: np.random.Generator) -> int:
    return 0


def buy_and_hold_policy(k: int) -> Policy:
    """Request ``k`` shares on the first tradable day, then hold."""
    first: list[int] = []

    def policy(state: EnvState, rng: np.random.Generator) -> int:
        if not first:
            first.append(state.t)
        return k if state.t == first[0] else 0

    return policy


def random_policy(k: int) -> Policy:
    def policy(state: EnvState, rng: np.random.Generator) -> int:
        return int(rng.integers(-k, k + 1))

    return policy


def write_trajectory_csv(env: TradingEnv, traj: Trajectory, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["t", "date", "price", "action_requested", "action_executed", "fee", "balance", "shares", "reward"]
        )
        for tr in traj.transitions:
            s = tr.state
            writer.writerow(
                [
                    s.t,
                    env.series.bars[s.t].date.isoformat(),
                    repr(s.p),
                    tr.action_requested,
                    tr.action_executed,
                    repr(tr.fee_paid),
                    repr(tr.next_state.b),
                    tr.next_state.h,
                    repr(tr.reward),
                ]
            )
