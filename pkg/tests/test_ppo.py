"""PPO tests: advantage recursion vs a double-sum oracle, clip identities,
objective gradients vs finite differences, and rollout reproducibility."""

import numpy as np
import pytest

from highwaylab.env import HighwayEnv, RoadConfig
from highwaylab.errors import TrainingDivergenceError
from highwaylab.nets import NetworkSpec, ParameterSet, forward, init_params, log_softmax
from highwaylab.ppo import (
    PpoConfig,
    PpoLearner,
    RolloutBatch,
    RolloutCollector,
    clipped_surrogate,
    compute_gae,
    ppo_objective,
    value_loss,
)


from helpers import gae_double_sum


def random_segments(rng, length):
    """A batch with random rewards/values and random episode boundaries."""
    terminated = rng.random(length) < 0.15
    episode_end = terminated.copy()
    episode_end[-1] = True
    return RolloutBatch(
        obs=np.zeros((length, 1)),
        actions=np.zeros(length, dtype=np.int64),
        rewards=rng.normal(size=length),
        values=rng.normal(size=length),
        next_values=rng.normal(size=length),
        log_probs=np.zeros(length),
        terminated=terminated,
        episode_end=episode_end,
    )


class TestComputeGae:
    def test_lambda_zero_collapses_to_td_residual(self):
        rng = np.random.default_rng(0)
        batch = random_segments(rng, 12)
        adv, _ = compute_gae(batch, gamma=0.9, lam=0.0, normalize=False)
        for t in range(12):
            bootstrap = 0.0 if batch.terminated[t] else batch.next_values[t]
            delta = batch.rewards[t] + 0.9 * bootstrap - batch.values[t]
            assert adv[t] == pytest.approx(delta, abs=1e-15)

    def test_single_terminal_step(self):
        batch = RolloutBatch(
            obs=np.zeros((1, 1)),
            actions=np.zeros(1, dtype=np.int64),
            rewards=np.array([2.0]),
            values=np.array([0.5]),
            next_values=np.array([99.0]),  # ignored: terminal
            log_probs=np.zeros(1),
            terminated=np.array([True]),
            episode_end=np.array([True]),
        )
        adv, targets = compute_gae(batch, 0.99, 0.95, normalize=False)
        assert adv[0] == pytest.approx(1.5)
        assert targets[0] == pytest.approx(2.0)

    def test_matches_double_sum_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            batch = random_segments(rng, int(rng.integers(2, 21)))
            for gamma, lam in ((0.99, 0.95), (1.0, 1.0), (0.9, 0.0)):
                adv, _ = compute_gae(batch, gamma, lam, normalize=False)
                oracle = gae_double_sum(
                    batch.rewards,
                    batch.values,
                    batch.next_values,
                    batch.terminated,
                    batch.episode_end,
                    gamma,
                    lam,
                )
                np.testing.assert_allclose(adv, oracle, atol=1e-10)

    def test_lambda_one_terminated_segment_is_mc_return(self):
        rng = np.random.default_rng(7)
        n = 10
        batch = random_segments(rng, n)
        batch.terminated[:] = False
        batch.terminated[-1] = True
        batch.episode_end[:] = False
        batch.episode_end[-1] = True
        # the telescoping identity needs a consistent value chain, as produced
        # by a real rollout where next_values[t] is V of the next observation
        batch.next_values[:-1] = batch.values[1:]
        gamma = 0.99
        adv, _ = compute_gae(batch, gamma, 1.0, normalize=False)
        for t in range(n):
            mc = sum(gamma ** (k - t) * batch.rewards[k] for k in range(t, n))
            assert adv[t] == pytest.approx(mc - batch.values[t], abs=1e-10)

    def test_value_targets_use_raw_advantages(self):
        rng = np.random.default_rng(3)
        batch = random_segments(rng, 16)
        adv_raw, targets_raw = compute_gae(batch, 0.99, 0.95, normalize=False)
        adv_norm, targets_norm = compute_gae(batch, 0.99, 0.95, normalize=True)
        np.testing.assert_array_equal(targets_raw, targets_norm)
        assert not np.allclose(adv_raw, adv_norm)

    def test_normalization_moments(self):
        rng = np.random.default_rng(4)
        batch = random_segments(rng, 512)
        adv, _ = compute_gae(batch, 0.99, 0.95, normalize=True)
        assert abs(adv.mean()) < 1e-9
        assert abs(adv.std() - 1.0) < 1e-6


class TestClippedSurrogate:
    GRID_RHO = (0.5, 0.79, 0.8, 1.0, 1.2, 1.21, 1.5)
    GRID_A = (-1.0, 0.0, 1.0)

    def test_exhaustive_grid_matches_hand_formula(self):
        eps = 0.2
        for rho in self.GRID_RHO:
            for a in self.GRID_A:
                got = clipped_surrogate(np.array([rho]), np.array([a]), eps)[0]
                clipped_rho = min(max(rho, 1.0 - eps), 1.0 + eps)
                expected = min(rho * a, clipped_rho * a)
                assert got == expected  # identical arithmetic, exact

    def test_pessimistic_bound(self):
        eps = 0.2
        for rho in self.GRID_RHO:
            for a in self.GRID_A:
                got = clipped_surrogate(np.array([rho]), np.array([a]), eps)[0]
                assert got <= rho * a

    def test_identity_inside_clip_region(self):
        rng = np.random.default_rng(1)
        eps = 0.2
        rho = rng.uniform(0.8, 1.2, size=200)
        a = rng.normal(size=200)
        np.testing.assert_array_equal(clipped_surrogate(rho, a, eps), rho * a)


def tiny_policy(seed=0, n_actions=3, obs_dim=4):
    spec = NetworkSpec((obs_dim, 6, n_actions), activation="tanh")
    return spec, init_params(spec, seed)


def objective_inputs(rng, spec, n=16):
    obs = rng.normal(size=(n, spec.input_dim))
    actions = rng.integers(0, spec.output_dim, size=n)
    old_log_probs = np.log(rng.uniform(0.05, 0.9, size=n))
    advantages = rng.normal(size=n)
    return obs, actions, old_log_probs, advantages


class TestPpoObjective:
    def test_identity_ratio_means_unclipped_objective(self):
        rng = np.random.default_rng(5)
        spec, params = tiny_policy()
        obs, actions, _, advantages = objective_inputs(rng, spec)
        logits = forward(spec, params, obs)
        old = log_softmax(logits)[np.arange(len(obs)), actions]
        objective, _, stats = ppo_objective(
            spec, params, obs, actions, old, advantages, 0.2, entropy_coef=0.0
        )
        assert objective == pytest.approx(float(advantages.mean()), rel=1e-12)
        assert stats["clip_fraction"] == 0.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        spec, params = tiny_policy(seed=2)
        obs, actions, old, advantages = objective_inputs(rng, spec, n=8)

        def objective_at(values):
            return ppo_objective(
                spec, ParameterSet(values), obs, actions, old, advantages, 0.2, 0.01
            )[0]

        _, grad, _ = ppo_objective(spec, params, obs, actions, old, advantages, 0.2, 0.01)
        h = 1e-6
        theta = params.values.copy()
        for i in rng.choice(spec.n_params, size=20, replace=False):
            orig = theta[i]
            theta[i] = orig + h
            fp = objective_at(theta)
            theta[i] = orig - h
            fm = objective_at(theta)
            theta[i] = orig
            numeric = (fp - fm) / (2 * h)
            assert grad[i] == pytest.approx(numeric, rel=5e-4, abs=1e-9)

    def test_clipped_and_worse_branch_has_zero_gradient(self):
        # all-positive advantages with much-likelier-now actions: every sample
        # clips, so the policy gradient must vanish (entropy disabled).
        spec, params = tiny_policy(seed=3)
        rng = np.random.default_rng(11)
        obs = rng.normal(size=(6, spec.input_dim))
        logits = forward(spec, params, obs)
        actions = np.argmax(logits, axis=1)
        new_logp = log_softmax(logits)[np.arange(6), actions]
        old = new_logp - 1.0  # ratio = e > 1.2
        advantages = np.ones(6)
        _, grad, stats = ppo_objective(spec, params, obs, actions, old, advantages, 0.2, 0.0)
        assert stats["clip_fraction"] == 1.0
        assert np.all(grad == 0.0)

    def test_nonfinite_ratio_raises(self):
        spec, params = tiny_policy(seed=4)
        obs = np.zeros((1, spec.input_dim))
        with pytest.raises(TrainingDivergenceError):
            ppo_objective(
                spec, params, obs, np.array([0]), np.array([-2000.0]), np.ones(1), 0.2, 0.0
            )


class TestValueLoss:
    def test_zero_at_fit(self):
        spec = NetworkSpec((3, 5, 1))
        params = init_params(spec, 1)
        obs = np.random.default_rng(2).normal(size=(4, 3))
        targets = forward(spec, params, obs)[:, 0]
        loss, grad = value_loss(spec, params, obs, targets)
        assert loss == 0.0
        assert np.all(grad == 0.0)

    def test_constant_target_squared(self):
        spec = NetworkSpec((2, 1))
        params = ParameterSet(np.zeros(3))
        obs = np.zeros((5, 2))
        loss, _ = value_loss(spec, params, obs, np.full(5, 3.0))
        assert loss == pytest.approx(9.0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        spec = NetworkSpec((3, 6, 1), activation="tanh")
        params = init_params(spec, 5)
        obs = rng.normal(size=(7, 3))
        targets = rng.normal(size=7)
        _, grad = value_loss(spec, params, obs, targets)
        h = 1e-6
        theta = params.values.copy()
        for i in rng.choice(spec.n_params, size=15, replace=False):
            orig = theta[i]
            theta[i] = orig + h
            fp = value_loss(spec, ParameterSet(theta), obs, targets)[0]
            theta[i] = orig - h
            fm = value_loss(spec, ParameterSet(theta), obs, targets)[0]
            theta[i] = orig
            assert grad[i] == pytest.approx((fp - fm) / (2 * h), rel=1e-5, abs=1e-9)


def small_ppo_config(**overrides):
    base = dict(rollout_length=64, minibatch_size=16, epochs=3, hidden_sizes=(8,))
    base.update(overrides)
    return PpoConfig(**base)


class TestUpdate:
    def synthetic_batch(self, learner, rng, n=64, advantage=1.0):
        obs = rng.normal(size=(n, learner.obs_dim))
        logits = forward(learner.policy_spec, learner.policy_params, obs)
        logp = log_softmax(logits)
        actions = np.array([rng.integers(learner.n_actions) for _ in range(n)])
        batch = RolloutBatch(
            obs=obs,
            actions=actions,
            rewards=np.zeros(n),
            values=np.zeros(n),
            next_values=np.zeros(n),
            log_probs=logp[np.arange(n), actions],
            terminated=np.zeros(n, dtype=bool),
            episode_end=np.zeros(n, dtype=bool),
        )
        batch.advantages = np.full(n, advantage)
        batch.value_targets = np.zeros(n)
        return batch

    def test_zero_epochs_changes_nothing(self):
        learner = PpoLearner(4, 3, small_ppo_config(epochs=0), seed=0)
        batch = self.synthetic_batch(learner, np.random.default_rng(0))
        before_p = learner.policy_params.values.copy()
        before_v = learner.value_params.values.copy()
        learner.update(batch)
        assert np.array_equal(learner.policy_params.values, before_p)
        assert np.array_equal(learner.value_params.values, before_v)

    def test_positive_advantages_increase_action_probability(self):
        learner = PpoLearner(4, 3, small_ppo_config(entropy_coef=0.0), seed=1)
        rng = np.random.default_rng(2)
        batch = self.synthetic_batch(learner, rng, advantage=1.0)
        obs = batch.obs
        before = learner.policy_probabilities(obs)[np.arange(len(batch)), batch.actions]
        learner.update(batch)
        after = learner.policy_probabilities(obs)[np.arange(len(batch)), batch.actions]
        assert after.mean() > before.mean()

    def test_update_does_not_touch_frozen_series(self):
        learner = PpoLearner(4, 3, small_ppo_config(), seed=3)
        batch = self.synthetic_batch(learner, np.random.default_rng(4))
        old_logp = batch.log_probs.copy()
        targets = batch.value_targets.copy()
        advantages = batch.advantages.copy()
        learner.update(batch)
        np.testing.assert_array_equal(batch.log_probs, old_logp)
        np.testing.assert_array_equal(batch.value_targets, targets)
        np.testing.assert_array_equal(batch.advantages, advantages)

    def test_update_requires_prepared_batch(self):
        learner = PpoLearner(4, 3, small_ppo_config(), seed=0)
        batch = self.synthetic_batch(learner, np.random.default_rng(0))
        batch.advantages = None
        with pytest.raises(ValueError):
            learner.update(batch)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PpoConfig(clip_epsilon=0.0)
        with pytest.raises(ValueError):
            PpoConfig(rollout_length=100, minibatch_size=64)
        with pytest.raises(ValueError):
            PpoConfig(gae_lambda=1.5)


class TestRolloutCollection:
    def collect_once(self):
        env = HighwayEnv(road=RoadConfig(scenario="merge"), horizon=10)
        learner = PpoLearner(25, 5, small_ppo_config(), seed=9)
        collector = RolloutCollector(env, episode_seed_fn=lambda i: 1000 + i)
        rng = np.random.default_rng(55)
        return learner, collector.collect(
            learner.policy_spec,
            learner.policy_params,
            learner.value_spec,
            learner.value_params,
            64,
            rng,
        )

    def test_exact_length_and_final_cut(self):
        _, batch = self.collect_once()
        assert len(batch) == 64
        assert batch.episode_end[-1]

    def test_deterministic(self):
        _, a = self.collect_once()
        _, b = self.collect_once()
        np.testing.assert_array_equal(a.obs, b.obs)
        np.testing.assert_array_equal(a.actions, b.actions)
        np.testing.assert_array_equal(a.rewards, b.rewards)
        np.testing.assert_array_equal(a.log_probs, b.log_probs)

    def test_log_probs_match_offline_recomputation(self):
        learner, batch = self.collect_once()
        logits = forward(learner.policy_spec, learner.policy_params, batch.obs)
        logp = log_softmax(logits)[np.arange(len(batch)), batch.actions]
        np.testing.assert_allclose(batch.log_probs, logp, rtol=1e-12)

    def test_values_match_value_head(self):
        learner, batch = self.collect_once()
        v = forward(learner.value_spec, learner.value_params, batch.obs)[:, 0]
        np.testing.assert_allclose(batch.values, v, rtol=1e-12)

    def test_episode_boundaries_reset_inside(self):
        # horizon 10 over 64 steps forces several truncations inside
        _, batch = self.collect_once()
        assert batch.episode_end[:-1].any()
