"""Deep Q-learning, deep SARSA and REINFORCE agents for the trading MDP.

Training loops are written against a small ``Task`` protocol (feature size,
action count, ``rollout``) so the same code drives the trading environment
and the toy MDPs used in tests.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .env import EnvState, TradingEnv, Trajectory, random_policy, run_episode
from .neural import (
    GradientBundle,
    Mlp,
    ReinforceLoss,
    backward,
    forward,
    forward_cache,
    init_mlp,
    loss_and_grad,
    make_optimizer,
    apply_update,
)

VALUE_KINDS = ("qlearn", "sarsa")
ALGOS = ("qlearn", "sarsa", "pg")


@dataclass(frozen=True)
class Hyperparams:
    episodes: int = 30
    gamma: float = 0.6
    alpha: float = 0.7
    epsilon_init: float = 0.8
    epsilon_min: float = 0.2
    epsilon_decay_factor: float = 0.9
    epsilon_schedule: str = "multiplicative"  # or "linear"
    nn_epochs: int = 10
    nn_learning_rate: float = 1e-5
    hidden_sizes: tuple[int, ...] = (64, 32)
    # SGD step for the policy-gradient agent; None means use alpha
    pg_learning_rate: float | None = None

    def __post_init__(self) -> None:
        if self.episodes < 1 or self.nn_epochs < 1:
            raise ValueError("episodes and nn_epochs must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 <= self.epsilon_min <= self.epsilon_init <= 1.0:
            raise ValueError("need 0 <= epsilon_min <= epsilon_init <= 1")
        if not 0.0 < self.epsilon_decay_factor <= 1.0:
            raise ValueError("epsilon_decay_factor must lie in (0, 1]")
        if self.epsilon_schedule not in ("multiplicative", "linear"):
            raise ValueError(f"unknown epsilon schedule {self.epsilon_schedule!r}")
        if not self.nn_learning_rate > 0:
            raise ValueError("nn_learning_rate must be positive")
        if self.pg_learning_rate is not None and not self.pg_learning_rate > 0:
            raise ValueError("pg_learning_rate must be positive")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))

    @property
    def policy_learning_rate(self) -> float:
        """Policy-gradient SGD step: alpha is the gradient step size of that algorithm."""
        return self.alpha if self.pg_learning_rate is None else self.pg_learning_rate


# -- exploration ------------------------------------------------------------------


def epsilon_greedy_probs(q_values, epsilon: float) -> np.ndarray:
    q = np.asarray(q_values, dtype=float)
    probs = np.full(len(q), epsilon / len(q))
    probs[int(np.argmax(q))] += 1.0 - epsilon
    return probs


def epsilon_greedy(q_values, epsilon: float, rng: np.random.Generator) -> int:
    """Greedy action index with prob ``1 - eps + eps/|A|``, any other with ``eps/|A|``.

    Ties in ``q_values`` go to the lowest index.
    """
    n = len(q_values)
    if rng.random() < epsilon:
        return int(rng.integers(n))
    return int(np.argmax(q_values))


def decay_epsilon(epsilon: float, hp: Hyperparams) -> float:
    if hp.epsilon_schedule == "linear":
        epsilon -= (1.0 - hp.epsilon_decay_factor) * hp.epsilon_init
    else:
        epsilon *= hp.epsilon_decay_factor
    return max(hp.epsilon_min, epsilon)


# -- targets and returns -------------------------------------------------------------


def q_target(q_sa: float, reward: float, next_target_q, done: bool, hp: Hyperparams) -> float:
    """``q + alpha * (R + gamma * max_a' qhat(s', a') - q)``; no bootstrap on the last step."""
    boot = 0.0 if done else float(np.max(next_target_q))
    return q_sa + hp.alpha * (reward + hp.gamma * boot - q_sa)


def sarsa_target(
    q_sa: float, reward: float, next_target_q, next_action: int | None, done: bool, hp: Hyperparams
) -> float:
    """``q + alpha * (R + gamma * qhat(s', a') - q)`` with ``a'`` taken by the behaviour policy."""
    if done:
        boot = 0.0
    elif next_action is None or next_action < 0:
        raise ValueError("SARSA target needs the next action on a non-terminal step")
    else:
        boot = float(np.asarray(next_target_q)[next_action])
    return q_sa + hp.alpha * (reward + hp.gamma * boot - q_sa)


def compute_returns(rewards, gamma: float) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=float)
    out = np.empty_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


# -- state features -----------------------------------------------------------------


@dataclass(frozen=True)
class FeatureScaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features, floor: float = 1e-8) -> FeatureScaler:
        x = np.atleast_2d(np.asarray(features, dtype=float))
        return cls(x.mean(axis=0), np.maximum(x.std(axis=0), floor))

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.std


def normalize_state(state: EnvState, scaler: FeatureScaler) -> np.ndarray:
    return scaler.transform(state.features())


def fit_scaler(env: TradingEnv, seed: int) -> FeatureScaler:
    """Feature statistics from one uniform-random rollout over ``env``.

    ``b`` and ``h`` have no fixed distribution, so a random trader supplies
    representative values; ``env`` must be the training environment.
    """
    traj = run_episode(env, random_policy(env.cfg.k), np.random.default_rng(seed))
    rows = [tr.state.features() for tr in traj.transitions] + [traj.transitions[-1].next_state.features()]
    return FeatureScaler.fit(rows)


# -- tasks ---------------------------------------------------------------------------

Chooser = Callable[[np.ndarray], int]


@dataclass
class Rollout:
    """One episode in network coordinates: action indices and scaled features."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    next_actions: np.ndarray  # -1 on the terminal step
    trajectory: Trajectory | None = None

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def profit(self) -> float:
        if self.trajectory is not None:
            return self.trajectory.profit
        return float(self.rewards.sum())


class Task(Protocol):
    n_features: int
    n_actions: int

    def rollout(self, choose: Chooser) -> Rollout: ...


class TradingTask:
    """Adapter exposing a :class:`TradingEnv` through scaled features and action indices.

    Output unit ``i`` means a share delta of ``i - k``.
    """

    def __init__(self, env: TradingEnv, scaler: FeatureScaler):
        self.env = env
        self.scaler = scaler
        self.k = env.cfg.k
        self.n_features = 7
        self.n_actions = env.cfg.n_actions

    def rollout(self, choose: Chooser) -> Rollout:
        k = self.k
        traj = Trajectory()
        states, actions = [], []
        state = self.env.reset()
        x = self.scaler.transform(state.features())
        a = int(choose(x))
        while True:
            tr = self.env.step(state, a - k)
            traj.transitions.append(tr)
            states.append(x)
            actions.append(a)
            if tr.done:
                traj.next_actions.append(None)
                break
            state = tr.next_state
            x = self.scaler.transform(state.features())
            a = int(choose(x))
            traj.next_actions.append(a - k)
        last = self.scaler.transform(traj.transitions[-1].next_state.features())
        states_arr = np.array(states)
        actions_arr = np.array(actions, dtype=int)
        dones = np.zeros(len(actions_arr), dtype=bool)
        dones[-1] = True
        return Rollout(
            states=states_arr,
            actions=actions_arr,
            rewards=traj.rewards,
            next_states=np.vstack([states_arr[1:], last]),
            dones=dones,
            next_actions=np.append(actions_arr[1:], -1),
            trajectory=traj,
        )


# -- policies -------------------------------------------------------------------------


def greedy_chooser(net: Mlp) -> Chooser:
    """Deterministic argmax over the network output (lowest index on ties)."""

    def choose(x: np.ndarray) -> int:
        return int(np.argmax(forward(net, x)))

    return choose


def greedy_policy(net: Mlp, scaler: FeatureScaler, k: int) -> Callable[[EnvState, np.random.Generator], int]:
    """Env-level policy returning a share delta; ignores the rng."""

    def policy(state: EnvState, rng: np.random.Generator | None = None) -> int:
        return int(np.argmax(forward(net, scaler.transform(state.features())))) - k

    return policy


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> int:
    idx = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
    return min(idx, len(probs) - 1)


# -- training -------------------------------------------------------------------------


@dataclass
class CurvePoint:
    episode: int
    epsilon: float
    train_profit: float
    test_profit: float


@dataclass
class TrainResult:
    net: Mlp
    curve: list[CurvePoint] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)


Evaluator = Callable[[Mlp], tuple[float, float]]


def bootstrap_values(kind: str, target_net: Mlp, roll: Rollout) -> np.ndarray:
    """Per-step bootstrap term from the frozen target network, zero on the terminal step.

    Q-learning takes ``max_a' qhat(s', a')``; SARSA takes ``qhat(s', a')`` for
    the action the behaviour policy actually chose next.
    """
    target_q = forward(target_net, roll.next_states)
    if kind == "qlearn":
        boot = target_q.max(axis=1)
    else:
        if np.any((roll.next_actions < 0) & ~roll.dones):
            raise ValueError("SARSA target needs the next action on a non-terminal step")
        boot = target_q[np.arange(len(roll)), np.maximum(roll.next_actions, 0)]
    return np.where(roll.dones, 0.0, boot)


def train_value_agent(
    kind: str,
    task: Task,
    hp: Hyperparams,
    seed: int,
    evaluate: Evaluator | None = None,
) -> TrainResult:
    """Deep Q-learning (``kind="qlearn"``) or deep SARSA (``kind="sarsa"``).

    Each episode: roll out the behaviour policy (uniform at first, then
    epsilon-greedy on the current network), freeze a copy of the network as
    the bootstrap target, then sweep every recorded step ``nn_epochs`` times
    with one Huber-loss Adam update per step. Epsilon decays once per
    episode. ``evaluate`` is called after every episode and should return
    ``(train_profit, test_profit)`` of the greedy policy.
    """
    if kind not in VALUE_KINDS:
        raise ValueError(f"unknown value agent {kind!r}")
    rng = np.random.default_rng(seed)
    net = init_mlp([task.n_features, *hp.hidden_sizes, task.n_actions], "identity", rng)
    opt = make_optimizer("adam", hp.nn_learning_rate, net)
    grads = GradientBundle(net.layer_dims)
    result = TrainResult(net)

    behaviour_eps = 1.0
    epsilon = hp.epsilon_init
    for episode in range(1, hp.episodes + 1):
        eps = behaviour_eps
        roll = task.rollout(lambda x: epsilon_greedy(forward(net, x), eps, rng))
        discounted = roll.rewards + hp.gamma * bootstrap_values(kind, net.copy(), roll)

        total = 0.0
        grad_out = np.zeros(task.n_actions)
        for _ in range(hp.nn_epochs):
            for x, a, d in zip(roll.states, roll.actions, discounted.tolist()):
                cache = forward_cache(net, x)
                q_sa = float(cache.output[a])
                target = q_sa + hp.alpha * (d - q_sa)
                # Huber(q_sa, target), delta = 1
                e = q_sa - target
                total += 0.5 * e * e if abs(e) <= 1.0 else abs(e) - 0.5
                grad_out[a] = min(1.0, max(-1.0, e))
                apply_update(net, backward(net, cache, grad_out, out=grads), opt)
                grad_out[a] = 0.0
        result.losses.append(total / (hp.nn_epochs * len(roll)))

        train_profit, test_profit = evaluate(net) if evaluate else (roll.profit, float("nan"))
        result.curve.append(CurvePoint(episode, eps, train_profit, test_profit))
        behaviour_eps = epsilon
        epsilon = decay_epsilon(epsilon, hp)
    return result


def train_policy_agent(
    task: Task,
    hp: Hyperparams,
    seed: int,
    evaluate: Evaluator | None = None,
) -> TrainResult:
    """REINFORCE with a softmax head and plain SGD.

    Each episode samples one trajectory from the current policy, computes the
    discounted returns and takes ``nn_epochs`` full-trajectory gradient steps
    on ``-(1/T) * sum_t G_t * ln pi(a_t | s_t)``.
    """
    rng = np.random.default_rng(seed)
    net = init_mlp([task.n_features, *hp.hidden_sizes, task.n_actions], "softmax", rng)
    opt = make_optimizer("sgd", hp.policy_learning_rate, net)
    result = TrainResult(net)
    for episode in range(1, hp.episodes + 1):
        roll = task.rollout(lambda x: sample_action(forward(net, x), rng))
        loss = ReinforceLoss(roll.actions, compute_returns(roll.rewards, hp.gamma))
        for _ in range(hp.nn_epochs):
            value, grads = loss_and_grad(net, roll.states, loss)
            apply_update(net, grads, opt)
        result.losses.append(value)
        train_profit, test_profit = evaluate(net) if evaluate else (roll.profit, float("nan"))
        result.curve.append(CurvePoint(episode, 0.0, train_profit, test_profit))
    return result


def train(algo: str, task: Task, hp: Hyperparams, seed: int, evaluate: Evaluator | None = None) -> TrainResult:
    if algo == "pg":
        return train_policy_agent(task, hp, seed, evaluate)
    return train_value_agent(algo, task, hp, seed, evaluate)


def make_evaluator(train_task: TradingTask, test_task: TradingTask | None) -> Evaluator:
    def evaluate(net: Mlp) -> tuple[float, float]:
        choose = greedy_chooser(net)
        train_profit = train_task.rollout(choose).profit
        test_profit = test_task.rollout(choose).profit if test_task is not None else float("nan")
        return train_profit, test_profit

    return evaluate


def write_curve_csv(curve: Sequence[CurvePoint], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["episode", "epsilon", "train_profit", "test_profit"])
        for c in curve:
            writer.writerow([c.episode, repr(c.epsilon), repr(c.train_profit), repr(c.test_profit)])
