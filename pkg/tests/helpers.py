"""Shared independent oracles for the test suite.

Everything here is deliberately written as plain loops, separate from the
library implementations it checks.
"""

import numpy as np


def gae_double_sum(rewards, values, next_values, terminated, episode_end, gamma, lam):
    """Advantage oracle: A_t = sum_l (gamma * lam)^l * delta_{t+l} over the
    episode segment containing t, with delta from the stored next values."""
    n = len(rewards)
    deltas = np.empty(n)
    for t in range(n):
        bootstrap = 0.0 if terminated[t] else next_values[t]
        deltas[t] = rewards[t] + gamma * bootstrap - values[t]
    advantages = np.zeros(n)
    for t in range(n):
        acc = 0.0
        weight = 1.0
        l = t
        while True:
            acc += weight * deltas[l]
            if episode_end[l]:
                break
            weight *= gamma * lam
            l += 1
        advantages[t] = acc
    return advantages


class ChainMdp:
    """Deterministic 5-state chain: RIGHT walks toward the terminal state
    (reward 1 on arrival), LEFT walks away. One-hot observations."""

    LEFT = 0
    RIGHT = 1

    def __init__(self, n_states=5):
        self.n_states = n_states
        self.terminal = n_states - 1

    def step(self, state, action):
        nxt = min(state + 1, self.terminal) if action == self.RIGHT else max(state - 1, 0)
        reward = 1.0 if nxt == self.terminal else 0.0
        return nxt, reward, nxt == self.terminal

    def one_hot(self, state):
        v = np.zeros(self.n_states)
        v[state] = 1.0
        return v

    def value_iteration(self, gamma, sweeps=500):
        q = np.zeros((self.n_states, 2))
        for _ in range(sweeps):
            new = np.zeros_like(q)
            for s in range(self.terminal):
                for a in (self.LEFT, self.RIGHT):
                    nxt, r, done = self.step(s, a)
                    new[s, a] = r + (0.0 if done else gamma * q[nxt].max())
            q = new
        return q
