"""Clipped-surrogate policy optimization with generalized advantage estimation.

A rollout is a fixed-length on-policy slice of experience; episodes reset
automatically inside it and the final step bootstraps from the value of the
next observation. Advantages come from the exponentially weighted sum of TD
residuals

    delta_t = r_t + gamma * (0 if terminated_t else V(s_{t+1})) - V(s_t)
    A_t     = delta_t + gamma * lam * (0 if episode_end_t else A_{t+1})

computed backward per episode segment. Value targets are ``A_t + V(s_t)``
using the raw advantages; optional per-rollout normalization applies to the
advantages only. The policy objective is the pessimistic clipped surrogate
plus an entropy bonus, maximized with Adam; the value head minimizes mean
squared error against the frozen targets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .actions import N_ACTIONS
from .errors import CheckpointMismatchError, TrainingDivergenceError
from .nets import (
    AdamState,
    NetworkSpec,
    ParameterSet,
    adam_from_bytes,
    adam_step,
    adam_to_bytes,
    backward,
    forward,
    init_params,
    log_softmax,
    network_from_bytes,
    network_to_bytes,
    read_archive,
    softmax,
    write_archive,
)


@dataclass(frozen=True)
class PpoConfig:
    clip_epsilon: float = 0.2
    gae_lambda: float = 0.95
    gamma: float = 0.99
    rollout_length: int = 2048
    epochs: int = 10
    minibatch_size: int = 256
    policy_lr: float = 0.0003
    value_lr: float = 0.001
    entropy_coef: float = 0.01
    normalize_advantages: bool = True
    hidden_sizes: tuple[int, ...] = (128, 128)

    def __post_init__(self) -> None:
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must be in (0, 1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if self.rollout_length < 1 or self.minibatch_size < 1:
            raise ValueError("rollout_length and minibatch_size must be >= 1")
        if self.rollout_length % self.minibatch_size != 0:
            raise ValueError("rollout_length must be divisible by minibatch_size")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.policy_lr <= 0 or self.value_lr <= 0:
            raise ValueError("learning rates must be > 0")
        if self.entropy_coef < 0:
            raise ValueError("entropy_coef must be >= 0")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))


@dataclass
class RolloutBatch:
    """Parallel per-step series collected under one frozen policy.

    ``terminated`` marks real environment termination (V of the successor is
    zero there); ``episode_end`` additionally marks truncations and the
    rollout cut, where the advantage recursion stops and the stored
    ``next_values`` bootstrap. ``log_probs`` are of the collection-time
    policy and are never recomputed once updates begin.
    """

    obs: np.ndarray  # (T, obs_dim)
    actions: np.ndarray  # (T,) int64
    rewards: np.ndarray  # (T,)
    values: np.ndarray  # (T,)
    next_values: np.ndarray  # (T,) value of the true successor observation
    log_probs: np.ndarray  # (T,)
    terminated: np.ndarray  # (T,) bool
    episode_end: np.ndarray  # (T,) bool
    advantages: np.ndarray | None = None
    value_targets: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.obs.shape[0])


def compute_gae(
    batch: RolloutBatch,
    gamma: float,
    lam: float,
    normalize: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Backward advantage recursion per episode segment.

    Returns (advantages, value_targets). Targets always use the raw
    advantages; when ``normalize`` is set the returned advantages are shifted
    and scaled to mean 0 and standard deviation 1 (plus 1e-8) per rollout.
    """
    n = len(batch)
    advantages = np.zeros(n, dtype=np.float64)
    running = 0.0
    for t in range(n - 1, -1, -1):
        next_value = 0.0 if batch.terminated[t] else batch.next_values[t]
        delta = batch.rewards[t] + gamma * next_value - batch.values[t]
        if batch.episode_end[t]:
            running = delta
        else:
            running = delta + gamma * lam * running
        advantages[t] = running
    value_targets = advantages + batch.values
    if normalize:
        std = advantages.std()
        advantages = (advantages - advantages.mean()) / (std + 1e-8)
    return advantages, value_targets


def clipped_surrogate(
    ratios: np.ndarray, advantages: np.ndarray, clip_epsilon: float
) -> np.ndarray:
    """Per-sample pessimistic surrogate min(r*A, clip(r, 1-e, 1+e)*A)."""
    r = np.asarray(ratios, dtype=np.float64)
    a = np.asarray(advantages, dtype=np.float64)
    clipped = np.clip(r, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
    return np.minimum(r * a, clipped * a)


def ppo_objective(
    policy_spec: NetworkSpec,
    policy_params: ParameterSet,
    obs: np.ndarray,
    actions: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    clip_epsilon: float,
    entropy_coef: float,
) -> tuple[float, np.ndarray, dict]:
    """Surrogate-plus-entropy objective, its ascent gradient, and stats.

    The gradient is of the objective (to be maximized); samples on the
    clipped-and-worse branch contribute zero policy gradient. Stats report
    the clip fraction (share of samples where the clipped branch is strictly
    the lower bound) and the mean policy entropy.
    """
    n = obs.shape[0]
    rows = np.arange(n)
    logits = forward(policy_spec, policy_params, obs)
    logp_all = log_softmax(logits)
    new_log_probs = logp_all[rows, actions]
    with np.errstate(over="ignore"):  # overflow is reported as divergence below
        ratios = np.exp(new_log_probs - old_log_probs)
    if not np.all(np.isfinite(ratios)):
        raise TrainingDivergenceError("non-finite policy ratio")

    unclipped = ratios * advantages
    clipped = np.clip(ratios, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * advantages
    surrogate = np.minimum(unclipped, clipped)
    probs = np.exp(logp_all)
    entropies = -(probs * logp_all).sum(axis=1)
    objective = float(surrogate.mean() + entropy_coef * entropies.mean())
    if not np.isfinite(objective):
        raise TrainingDivergenceError("non-finite PPO objective")

    # d surrogate / d new_log_prob: ratio * A where the unclipped branch is
    # active (ties included; both branches agree there), else zero.
    active = unclipped <= clipped
    coef = np.where(active, unclipped, 0.0) / n
    g_logits = coef[:, None] * (-probs)
    g_logits[rows, actions] += coef
    # d entropy / d logits = -p * (log p + H)
    g_logits += (entropy_coef / n) * (-probs * (logp_all + entropies[:, None]))

    grad = backward(policy_spec, policy_params, obs, g_logits)
    stats = {
        "clip_fraction": float(np.mean(clipped < unclipped)),
        "entropy": float(entropies.mean()),
    }
    return objective, grad, stats


def value_loss(
    value_spec: NetworkSpec,
    value_params: ParameterSet,
    obs: np.ndarray,
    targets: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Mean squared error of V(s) against frozen targets, with its gradient."""
    n = obs.shape[0]
    v = forward(value_spec, value_params, obs)[:, 0]
    residual = v - targets
    loss = float(residual @ residual) / n
    if not np.isfinite(loss):
        raise TrainingDivergenceError("non-finite value loss")
    g_out = (2.0 * residual / n)[:, None]
    return loss, backward(value_spec, value_params, obs, g_out)


class RolloutCollector:
    """Steps an environment across rollout boundaries, auto-resetting episodes.

    ``episode_seed_fn(episode_index)`` supplies the seed for every fresh
    episode, so a fixed function plus a fixed action stream reproduces the
    rollout bit for bit. ``on_step(outcome, action)`` runs once per
    environment step and ``on_reset(env)`` right after every episode reset,
    both intended for metrics recording.
    """

    def __init__(
        self, env, episode_seed_fn: Callable[[int], int], on_step=None, on_reset=None
    ):
        self.env = env
        self.episode_seed_fn = episode_seed_fn
        self.on_step = on_step
        self.on_reset = on_reset
        self.episode_index = 0
        self._obs: np.ndarray | None = None

    def _reset(self) -> None:
        self._obs = self.env.reset(self.episode_seed_fn(self.episode_index))
        if self.on_reset is not None:
            self.on_reset(self.env)

    def collect(
        self,
        policy_spec: NetworkSpec,
        policy_params: ParameterSet,
        value_spec: NetworkSpec,
        value_params: ParameterSet,
        length: int,
        rng: np.random.Generator,
    ) -> RolloutBatch:
        obs_dim = policy_spec.input_dim
        obs_arr = np.zeros((length, obs_dim), dtype=np.float64)
        actions = np.zeros(length, dtype=np.int64)
        rewards = np.zeros(length, dtype=np.float64)
        values = np.zeros(length, dtype=np.float64)
        next_values = np.zeros(length, dtype=np.float64)
        log_probs = np.zeros(length, dtype=np.float64)
        terminated = np.zeros(length, dtype=bool)
        episode_end = np.zeros(length, dtype=bool)

        if self._obs is None:
            self._reset()

        for t in range(length):
            obs = self._obs
            logits = forward(policy_spec, policy_params, obs)
            logp = log_softmax(logits)
            action = int(rng.choice(logits.size, p=np.exp(logp)))
            outcome = self.env.step(action)
            if self.on_step is not None:
                self.on_step(outcome, action)

            obs_arr[t] = obs
            actions[t] = action
            rewards[t] = outcome.reward.total
            values[t] = forward(value_spec, value_params, obs)[0]
            next_values[t] = forward(value_spec, value_params, outcome.observation)[0]
            log_probs[t] = logp[action]
            terminated[t] = outcome.terminated
            ended = outcome.terminated or outcome.truncated
            episode_end[t] = ended

            if ended:
                self.episode_index += 1
                self._reset()
            else:
                self._obs = outcome.observation

        episode_end[-1] = True  # rollout cut: stop the recursion, bootstrap
        return RolloutBatch(
            obs=obs_arr,
            actions=actions,
            rewards=rewards,
            values=values,
            next_values=next_values,
            log_probs=log_probs,
            terminated=terminated,
            episode_end=episode_end,
        )


class PpoLearner:
    """Separate policy and value heads with their own Adam states."""

    def __init__(self, obs_dim: int, n_actions: int = N_ACTIONS, config: PpoConfig | None = None, seed: int = 0):
        self.config = config if config is not None else PpoConfig()
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        root = np.random.SeedSequence(seed)
        policy_seed, value_seed, action_seed, shuffle_seed = root.spawn(4)
        hidden = self.config.hidden_sizes
        self.policy_spec = NetworkSpec((obs_dim, *hidden, n_actions))
        self.value_spec = NetworkSpec((obs_dim, *hidden, 1))
        self.policy_params = init_params(self.policy_spec, policy_seed)
        self.value_params = init_params(self.value_spec, value_seed)
        self.policy_adam = AdamState.create(self.policy_spec.n_params, self.config.policy_lr)
        self.value_adam = AdamState.create(self.value_spec.n_params, self.config.value_lr)
        self.action_rng = np.random.default_rng(action_seed)
        self._shuffle_rng = np.random.default_rng(shuffle_seed)
        self.rollouts_done = 0
        self.env_steps = 0

    def act(self, obs: np.ndarray, greedy: bool = False) -> int:
        logits = forward(self.policy_spec, self.policy_params, obs)
        if greedy:
            return int(np.argmax(logits))
        return int(self.action_rng.choice(logits.size, p=softmax(logits)))

    def policy_probabilities(self, obs: np.ndarray) -> np.ndarray:
        return softmax(forward(self.policy_spec, self.policy_params, obs))

    def prepare(self, batch: RolloutBatch) -> RolloutBatch:
        """Fill advantages and value targets in place and return the batch."""
        adv, targets = compute_gae(
            batch,
            self.config.gamma,
            self.config.gae_lambda,
            normalize=self.config.normalize_advantages,
        )
        batch.advantages = adv
        batch.value_targets = targets
        return batch

    def update(self, batch: RolloutBatch) -> dict:
        """Several epochs of seeded-shuffle minibatch ascent/descent."""
        if batch.advantages is None or batch.value_targets is None:
            raise ValueError("call prepare() (or compute_gae) before update()")
        cfg = self.config
        n = len(batch)
        stats_acc = {"policy_objective": 0.0, "value_loss": 0.0, "clip_fraction": 0.0, "entropy": 0.0}
        n_minibatches = 0
        for _ in range(cfg.epochs):
            order = self._shuffle_rng.permutation(n)
            for start in range(0, n, cfg.minibatch_size):
                idx = order[start : start + cfg.minibatch_size]
                objective, policy_grad, stats = ppo_objective(
                    self.policy_spec,
                    self.policy_params,
                    batch.obs[idx],
                    batch.actions[idx],
                    batch.log_probs[idx],
                    batch.advantages[idx],
                    cfg.clip_epsilon,
                    cfg.entropy_coef,
                )
                # Adam minimizes, so feed the negated ascent gradient.
                self.policy_params, self.policy_adam = adam_step(
                    self.policy_adam, self.policy_params, -policy_grad
                )
                vloss, value_grad = value_loss(
                    self.value_spec, self.value_params, batch.obs[idx], batch.value_targets[idx]
                )
                self.value_params, self.value_adam = adam_step(
                    self.value_adam, self.value_params, value_grad
                )
                stats_acc["policy_objective"] += objective
                stats_acc["value_loss"] += vloss
                stats_acc["clip_fraction"] += stats["clip_fraction"]
                stats_acc["entropy"] += stats["entropy"]
                n_minibatches += 1
        self.rollouts_done += 1
        self.env_steps += n
        if n_minibatches == 0:
            return {"policy_objective": 0.0, "value_loss": 0.0, "clip_fraction": 0.0, "entropy": 0.0}
        return {key: value / n_minibatches for key, value in stats_acc.items()}

    # -- checkpointing -------------------------------------------------------

    def save(self, path) -> None:
        meta = {
            "agent": "ppo",
            "obs_dim": self.obs_dim,
            "n_actions": self.n_actions,
            "rollouts_done": self.rollouts_done,
            "env_steps": self.env_steps,
        }
        sections = [
            ("meta", json.dumps(meta, sort_keys=True).encode("utf-8")),
            ("policy", network_to_bytes(self.policy_spec, self.policy_params)),
            ("value", network_to_bytes(self.value_spec, self.value_params)),
            ("adam_policy", adam_to_bytes(self.policy_adam)),
            ("adam_value", adam_to_bytes(self.value_adam)),
        ]
        write_archive(path, sections)

    @classmethod
    def load(cls, path, config: PpoConfig | None = None, seed: int = 0) -> "PpoLearner":
        sections = read_archive(path)
        try:
            meta = json.loads(sections["meta"].decode("utf-8"))
        except KeyError:
            raise CheckpointMismatchError("checkpoint has no meta section")
        if meta.get("agent") != "ppo":
            raise CheckpointMismatchError(
                f"expected a ppo checkpoint, found {meta.get('agent')!r}"
            )
        policy_spec, policy_params = network_from_bytes(sections["policy"])
        value_spec, value_params = network_from_bytes(sections["value"])
        learner = cls(
            obs_dim=policy_spec.input_dim,
            n_actions=policy_spec.output_dim,
            config=config,
            seed=seed,
        )
        if learner.policy_spec != policy_spec or learner.value_spec != value_spec:
            raise CheckpointMismatchError("checkpoint network shapes differ from config")
        learner.policy_params = policy_params
        learner.value_params = value_params
        learner.policy_adam = adam_from_bytes(sections["adam_policy"])
        learner.value_adam = adam_from_bytes(sections["adam_value"])
        learner.rollouts_done = int(meta["rollouts_done"])
        learner.env_steps = int(meta["env_steps"])
        return learner
