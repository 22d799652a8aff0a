"""Tiny synthetic problems with known answers, used to sanity-check learning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def constant_action_dataset(n: int, action, state_dim: int = 1, rng=None):
    """States ~ U[-1, 1]; every action equals ``action``."""
    rng = rng if rng is not None else np.random.default_rng(0)
    a = np.asarray(action, dtype=np.float64)
    return rng.uniform(-1.0, 1.0, (n, state_dim)), np.tile(a, (n, 1))


def unimodal_mean(s) -> np.ndarray:
    return 0.5 * np.asarray(s, dtype=np.float64)


def unimodal_dataset(n: int, std: float = 0.1, rng=None):
    """1-D states ~ U[-1, 1] with actions ~ N(0.5 s, std^2)."""
    rng = rng if rng is not None else np.random.default_rng(0)
    s = rng.uniform(-1.0, 1.0, (n, 1))
    return s, unimodal_mean(s) + std * rng.standard_normal((n, 1))


def bimodal_dataset(n: int, modes=(-0.8, 0.8), rng=None):
    """One fixed state (zero); actions split evenly between the two modes."""
    rng = rng if rng is not None else np.random.default_rng(0)
    pick = rng.integers(2, size=n)
    return np.zeros((n, 1)), np.asarray(modes, dtype=np.float64)[pick][:, None]


@dataclass(frozen=True)
class TwoStateMdp:
    """Deterministic MDP: the action picks the next state.

    rewards[s][a] is paid for taking action a in state s. States are fed to
    networks one-hot; actions as the scalars -1 (a=0) and +1 (a=1).
    """

    rewards: tuple = ((0.0, 1.0), (2.0, 0.0))
    gamma: float = 0.5

    def next_state(self, s: int, a: int) -> int:
        return a

    def value_iteration(self, tol: float = 1e-12) -> np.ndarray:
        r = np.asarray(self.rewards, dtype=np.float64)
        q = np.zeros((2, 2))
        while True:
            v = q.max(axis=1)
            new = r + self.gamma * v[np.array([[0, 1], [0, 1]])]
            if np.max(np.abs(new - q)) < tol:
                return new
            q = new

    @staticmethod
    def encode_state(s) -> np.ndarray:
        return np.eye(2)[np.asarray(s)]

    @staticmethod
    def encode_action(a) -> np.ndarray:
        return (2.0 * np.asarray(a, dtype=np.float64) - 1.0).reshape(-1, 1)

    def all_pairs(self):
        s = np.array([0, 0, 1, 1])
        a = np.array([0, 1, 0, 1])
        r = np.asarray(self.rewards, dtype=np.float64)[s, a]
        s_next = np.array([self.next_state(i, j) for i, j in zip(s, a)])
        return s, a, r, s_next
