"""Tiny tasks with known optimal behaviour, used to sanity-check the learners."""

from __future__ import annotations

import itertools

import numpy as np

from .agents import Chooser, Rollout


def _one_hot(i: int, n: int) -> np.ndarray:
    x = np.zeros(n)
    x[i] = 1.0
    return x


class TabularTask:
    """Deterministic finite MDP with one-hot state features.

    ``transitions[s][a] = (next_state, reward)``. Episodes start in
    ``start`` and are cut after ``horizon`` steps.
    """

    def __init__(self, transitions: list[list[tuple[int, float]]], start: int = 0, horizon: int = 20):
        self.transitions = transitions
        self.n_states = len(transitions)
        self.n_actions = len(transitions[0])
        self.n_features = self.n_states
        self.start = start
        self.horizon = horizon

    def features(self, s: int) -> np.ndarray:
        return _one_hot(s, self.n_states)

    def rollout(self, choose: Chooser) -> Rollout:
        s = self.start
        xs, acts, rews, nxt = [], [], [], []
        for _ in range(self.horizon):
            x = self.features(s)
            a = int(choose(x))
            s2, r = self.transitions[s][a]
            xs.append(x)
            acts.append(a)
            rews.append(r)
            nxt.append(self.features(s2))
            s = s2
        dones = np.zeros(self.horizon, dtype=bool)
        dones[-1] = True
        actions = np.array(acts, dtype=int)
        return Rollout(np.array(xs), actions, np.array(rews), np.array(nxt), dones, np.append(actions[1:], -1))

    def policy_value(self, policy: tuple[int, ...], gamma: float) -> np.ndarray:
        """Exact infinite-horizon discounted value of a deterministic policy."""
        P = np.zeros((self.n_states, self.n_states))
        R = np.zeros(self.n_states)
        for s, a in enumerate(policy):
            s2, r = self.transitions[s][a]
            P[s, s2] = 1.0
            R[s] = r
        return np.linalg.solve(np.eye(self.n_states) - gamma * P, R)

    def optimal_policy(self, gamma: float) -> tuple[int, ...]:
        """Brute force over every deterministic policy; best value in every state."""
        best, best_v = None, None
        for policy in itertools.product(range(self.n_actions), repeat=self.n_states):
            v = self.policy_value(policy, gamma)
            if best_v is None or np.all(v >= best_v - 1e-12) and np.any(v > best_v + 1e-12):
                best, best_v = policy, v
        return best


def three_state_cycle(horizon: int = 20) -> TabularTask:
    """0 -right-> 1 -right-> 2 -left(+3)-> 0; 'left' elsewhere pays a myopic +0.2."""
    return TabularTask(
        [
            [(0, 0.2), (1, 0.0)],
            [(0, 0.2), (2, 0.0)],
            [(0, 3.0), (2, 0.0)],
        ],
        horizon=horizon,
    )


class BanditTask:
    """One-step, one-state task; action ``i`` pays ``rewards[i]``."""

    def __init__(self, rewards=(1.0, -1.0)):
        self.rewards = np.asarray(rewards, dtype=float)
        self.n_actions = len(self.rewards)
        self.n_features = 1
        self.x = np.ones(1)

    def rollout(self, choose: Chooser) -> Rollout:
        a = int(choose(self.x))
        return Rollout(
            self.x[None, :],
            np.array([a]),
            np.array([self.rewards[a]]),
            self.x[None, :],
            np.array([True]),
            np.array([-1]),
        )
