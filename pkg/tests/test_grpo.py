import math
import unittest

import numpy as np

from driftlab import grpo
from driftlab import policy as chain
from driftlab.landscape import four_peaks
from driftlab.mdp import DenoisingMDPSpec
from driftlab.mechanisms import SELECT_CONCENTRATED, DriftConfig, DriftToggle, embedding_stats, select
from driftlab.util import finite_difference, make_rng, relative_error


def small_policy(seed=0, scale=0.3, noise_scales=None):
    spec = DenoisingMDPSpec(horizon=3, state_dim=2, prompt_dim=2)
    model = chain.GaussianChainPolicy(spec, noise_scales=noise_scales, num_fourier_features=4, feature_seed=0)
    return model.with_params(scale * make_rng(seed).standard_normal(model.params.shape))


def shifted(model, seed, scale=0.05):
    return model.with_params(model.params + scale * make_rng(seed).standard_normal(model.params.shape))


class TestAdvantages(unittest.TestCase):

    def test_values(self):
        advantages = grpo.compute_advantages([1.0, 2.0, 3.0])
        np.testing.assert_allclose(advantages, [-1.224744871, 0.0, 1.224744871], atol=1e-9)

    def test_no_spread(self):
        np.testing.assert_array_equal(grpo.compute_advantages([0.4] * 8), np.zeros(8))

    def test_zero_mean_unit_std(self):
        advantages = grpo.compute_advantages(make_rng(1).uniform(0, 1, 8))
        self.assertAlmostEqual(np.mean(advantages), 0.0, delta=1e-12)
        self.assertAlmostEqual(np.std(advantages), 1.0, delta=1e-12)

    def test_too_small(self):
        with self.assertRaises(ValueError):
            grpo.compute_advantages([1.0])

    def test_baseline(self):
        np.testing.assert_allclose(grpo.baseline_advantages([1.0, 2.0, 6.0]), [-2.0, -1.0, 3.0])

    def test_pg_keeps_groups_apart(self):
        prompt = chain.PromptEmbedding([0.0, 0.0], 0)
        model = small_policy()
        config = grpo.GRPOConfig(group_size=2, algorithm=grpo.ALGORITHM_PG)
        first = grpo.rollout_group(model, prompt, config, 1, four_peaks())
        second = grpo.rollout_group(model, prompt, config, 2, four_peaks())
        grpo.standardize([first, second], config)
        for group in (first, second):
            np.testing.assert_allclose(group.advantages, group.rewards - np.mean(group.rewards))

    def test_pool_scale_damps_tight_subset(self):
        advantages = grpo.compute_advantages([1.0e-5, 1.2e-5, 0.8e-5, 1.1e-5], scale=0.4)
        self.assertLess(np.max(np.abs(advantages)), 1e-4)
        self.assertAlmostEqual(np.mean(advantages), 0.0, delta=1e-12)

    def test_pool_scale_never_amplifies(self):
        np.testing.assert_allclose(grpo.compute_advantages([1.0, 2.0, 3.0], scale=0.1),
                                   grpo.compute_advantages([1.0, 2.0, 3.0]))

    def test_plateau_subset_selected_then_damped(self):
        prompt = chain.PromptEmbedding([0.0, 0.0], 0)
        config = grpo.GRPOConfig(group_size=4)
        pool = grpo.rollout_group(small_policy(), prompt, config, 1, four_peaks(), size=8)
        pool.rewards = np.array([0.9, 0.5, 1e-6, 2e-6, 1.5e-6, 3e-6, 0.7, 0.95])
        chosen = select(pool.rewards, 4, SELECT_CONCENTRATED).chosen_indices
        self.assertEqual(chosen, [2, 3, 4, 5])
        group = grpo.subgroup(pool, chosen, float(np.std(pool.rewards)))
        grpo.standardize([group], config)
        self.assertLess(np.max(np.abs(group.advantages)), 1e-4)


class TestConfig(unittest.TestCase):

    def test_invalid(self):
        for kwargs in (dict(group_size=1), dict(clip_epsilon=0.0), dict(kl_beta=-1.0),
                       dict(learning_rate=-1.0), dict(std_floor=0.0), dict(algorithm='dpo')):
            with self.assertRaises(ValueError):
                grpo.GRPOConfig(**kwargs)


class TestRollout(unittest.TestCase):

    def setUp(self):
        self.prompt = chain.PromptEmbedding([0.5, -0.5], 0)
        self.config = grpo.GRPOConfig()

    def test_group(self):
        group = grpo.rollout_group(small_policy(), self.prompt, self.config, 3, four_peaks())
        self.assertEqual(group.size, 8)
        self.assertEqual(group.prompt.prompt_id, 0)
        self.assertEqual(len({t.rng_seed for t in group.trajectories}), 8)

    def test_deterministic(self):
        first = grpo.rollout_group(small_policy(), self.prompt, self.config, 3, four_peaks())
        second = grpo.rollout_group(small_policy(), self.prompt, self.config, 3, four_peaks())
        np.testing.assert_array_equal(first.rewards, second.rewards)

    def test_degenerate_policy(self):
        model = small_policy(scale=0.0, noise_scales=[1e-12] * 3)
        group = grpo.rollout_group(model, self.prompt, self.config, 3, four_peaks())
        np.testing.assert_allclose(group.rewards, group.rewards[0], rtol=0, atol=1e-10)
        np.testing.assert_array_equal(grpo.compute_advantages(group.rewards), np.zeros(8))

    def test_mixed_prompts_rejected(self):
        model = small_policy()
        first = chain.sample_trajectory(model, self.prompt, 1)
        other = chain.sample_trajectory(model, chain.PromptEmbedding([0.5, -0.5], 1), 2)
        with self.assertRaises(ValueError):
            grpo.Group([first, other], [0.0, 1.0])

    def test_subgroup(self):
        group = grpo.rollout_group(small_policy(), self.prompt, self.config, 3, four_peaks(), size=16)
        chosen = grpo.subgroup(group, [1, 4])
        self.assertEqual(chosen.size, 2)
        np.testing.assert_array_equal(chosen.rewards, group.rewards[[1, 4]])


class TestSurrogate(unittest.TestCase):

    def setUp(self):
        self.prompt = chain.PromptEmbedding([0.5, -0.5], 0)
        self.model = small_policy()
        self.group = grpo.rollout_group(self.model, self.prompt, grpo.GRPOConfig(), 5, four_peaks())
        self.group.advantages = grpo.compute_advantages(self.group.rewards)

    def test_on_policy_gradient(self):
        config = grpo.GRPOConfig(kl_beta=0.0)
        loss, grad, diag = grpo.clipped_surrogate(self.model, None, self.group, config)
        expected = np.zeros(self.model.params.shape)
        for traj, advantage in zip(self.group.trajectories, self.group.advantages):
            expected -= advantage * chain.log_prob_grad(self.model, traj) / self.group.size
        np.testing.assert_allclose(grad, expected, rtol=0, atol=1e-8)
        self.assertAlmostEqual(loss, -3 * np.sum(self.group.advantages) / 8, delta=1e-9)
        self.assertEqual(diag['clip_fraction'], 0.0)

    def test_unclipped_matches_finite_difference(self):
        config = grpo.GRPOConfig(clip_epsilon=1e9, kl_beta=0.0)
        moved = shifted(self.model, 7)

        def loss_at(params):
            return grpo.clipped_surrogate(moved.with_params(params), None, self.group, config)[0]

        _, grad, _ = grpo.clipped_surrogate(moved, None, self.group, config)
        self.assertLessEqual(relative_error(grad, finite_difference(loss_at, moved.params)), 1e-4)

    def test_kl_term_matches_finite_difference(self):
        config = grpo.GRPOConfig(clip_epsilon=1e9, kl_beta=0.5)
        moved = shifted(self.model, 8)

        def loss_at(params):
            return grpo.clipped_surrogate(moved.with_params(params), self.model, self.group, config)[0]

        _, grad, diag = grpo.clipped_surrogate(moved, self.model, self.group, config)
        self.assertLessEqual(relative_error(grad, finite_difference(loss_at, moved.params)), 1e-4)
        self.assertGreater(diag['mean_kl'], 0.0)

    def test_clipped_steps_are_masked(self):
        config = grpo.GRPOConfig(kl_beta=0.0)
        eps = config.clip_epsilon
        traj = self.group.trajectories[0]
        traj.step_logps = self.model.log_probs(traj) - math.log(1 + 2 * eps)
        group = grpo.Group([traj, self.group.trajectories[1]], [1.0, 0.0], advantages=np.array([1.0, 0.0]))
        _, grad, diag = grpo.clipped_surrogate(self.model, None, group, config)
        np.testing.assert_array_equal(grad, np.zeros(self.model.params.shape))
        self.assertEqual(diag['clip_fraction'], 0.5)

    def test_negative_advantage_not_masked(self):
        config = grpo.GRPOConfig(kl_beta=0.0)
        eps = config.clip_epsilon
        traj = self.group.trajectories[0]
        traj.step_logps = self.model.log_probs(traj) - math.log(1 + 2 * eps)
        group = grpo.Group([traj, self.group.trajectories[1]], [0.0, 1.0], advantages=np.array([-1.0, 0.0]))
        _, grad, _ = grpo.clipped_surrogate(self.model, None, group, config)
        expected = (1 + 2 * eps) * chain.log_prob_grad(self.model, traj) / 2
        np.testing.assert_allclose(grad, expected, rtol=1e-9, atol=1e-12)

    def test_kl_needs_reference(self):
        with self.assertRaises(ValueError):
            grpo.clipped_surrogate(self.model, None, self.group, grpo.GRPOConfig(kl_beta=0.1))

    def test_missing_advantages(self):
        self.group.advantages = None
        with self.assertRaises(ValueError):
            grpo.clipped_surrogate(self.model, None, self.group, grpo.GRPOConfig(kl_beta=0.0))


class TestOptimizer(unittest.TestCase):

    def test_clip_grad_norm(self):
        grad, norm = grpo.clip_grad_norm(np.array([3.0, 4.0]), 1.0)
        self.assertEqual(norm, 5.0)
        np.testing.assert_allclose(grad, [0.6, 0.8])
        grad, norm = grpo.clip_grad_norm(np.array([0.3, 0.4]), 1.0)
        np.testing.assert_array_equal(grad, [0.3, 0.4])

    def test_first_step(self):
        optimizer = grpo.AdamW(learning_rate=0.1)
        updated = optimizer.step(np.array([1.0, 1.0]), np.array([2.0, -0.5]))
        np.testing.assert_allclose(updated, [0.9, 1.1], atol=1e-6)

    def test_weight_decay(self):
        optimizer = grpo.AdamW(learning_rate=0.1, weight_decay=0.5)
        updated = optimizer.step(np.array([2.0]), np.array([0.0]))
        np.testing.assert_allclose(updated, [1.9])


class TestTrainEpoch(unittest.TestCase):

    def setUp(self):
        self.prompts = [chain.PromptEmbedding([0.5, -0.5], 0), chain.PromptEmbedding([-1.0, 0.2], 1)]
        self.model = small_policy()
        self.landscape = four_peaks(num_prompts=2)
        self.config = grpo.GRPOConfig(group_size=4, samples_per_epoch=16, learning_rate=1e-2, kl_beta=0.0)

    def train(self, model=None, config=None, **kwargs):
        return grpo.train_epoch(model or self.model, self.model, self.prompts, self.landscape,
                                config or self.config, 3, **kwargs)

    def test_stats(self):
        updated, stats = self.train()
        self.assertEqual(updated.params.shape, self.model.params.shape)
        self.assertFalse(np.array_equal(updated.params, self.model.params))
        self.assertEqual(sorted(stats.to_row()), sorted(grpo.EPOCH_HEADER))
        self.assertEqual(stats.selection_mode, 'off')
        self.assertGreaterEqual(stats.mean_reward, 0.0)

    def test_zero_learning_rate(self):
        config = grpo.GRPOConfig(group_size=4, samples_per_epoch=16, learning_rate=0.0, weight_decay=0.0)
        updated, _ = self.train(config=config)
        np.testing.assert_array_equal(updated.params, self.model.params)

    def test_deterministic(self):
        first, _ = self.train()
        second, _ = self.train()
        np.testing.assert_array_equal(first.params, second.params)

    def test_default_toggles(self):
        first, _ = self.train()
        second, _ = self.train(mechanisms=DriftToggle())
        np.testing.assert_array_equal(first.params, second.params)

    def test_negligible_shaping(self):
        plain, _ = self.train()
        shaped, stats = self.train(mechanisms=DriftToggle(shaping=True),
                                   drift_config=DriftConfig(intrinsic_clip_sigma=1e-9))
        np.testing.assert_array_equal(plain.params, shaped.params)
        self.assertEqual(stats.intrinsic_clip_fraction, 1.0)

    def test_selection(self):
        _, stats = self.train(mechanisms=DriftToggle(selection=True))
        self.assertEqual(stats.selection_mode, 'concentrated')

    def test_prompt_noise(self):
        updated, _ = self.train(mechanisms=DriftToggle(prompt_noise=True), prompt_stats=(0.0, 1.0))
        self.assertTrue(np.all(np.isfinite(updated.params)))

    def test_pg(self):
        config = grpo.GRPOConfig(group_size=4, samples_per_epoch=16, kl_beta=0.0, algorithm=grpo.ALGORITHM_PG)
        updated, _ = self.train(config=config)
        self.assertTrue(np.all(np.isfinite(updated.params)))

    def test_non_finite_aborts(self):
        broken = self.model.with_params(np.full(self.model.params.shape, np.nan))
        with self.assertRaises(grpo.TrainingAborted) as caught:
            grpo.train_epoch(broken, None, self.prompts, self.landscape, self.config, 3, epoch=4)
        self.assertIs(caught.exception.policy, broken)
        self.assertEqual(caught.exception.epoch, 4)

    def test_summed_shaping(self):
        shaped, stats = self.train(mechanisms=DriftToggle(shaping=True),
                                   drift_config=DriftConfig(advantage_mode='summed'))
        self.assertTrue(np.all(np.isfinite(shaped.params)))
        self.assertGreaterEqual(stats.mean_intrinsic_reward, 0.0)
        self.assertLessEqual(stats.mean_intrinsic_reward, 1.0)

    def test_prompt_noise_default_stats(self):
        toggles = DriftToggle(prompt_noise=True)
        implicit, _ = self.train(mechanisms=toggles)
        explicit, _ = self.train(mechanisms=toggles, prompt_stats=embedding_stats(self.prompts))
        np.testing.assert_array_equal(implicit.params, explicit.params)

    def test_selected_groups_carry_pool_scale(self):
        groups, pools = grpo.collect_groups(self.model, self.prompts, self.landscape, self.config, 3,
                                            SELECT_CONCENTRATED, pool_multiplier=2)
        self.assertEqual(len(groups), len(pools))
        for group, pool in zip(groups, pools):
            self.assertEqual(group.size, 4)
            self.assertEqual(len(pool), 8)
            self.assertEqual(group.reward_scale, float(np.std(pool)))
            self.assertGreaterEqual(group.reward_scale, np.std(group.rewards))
        grpo.standardize(groups, self.config)
        for group in groups:
            self.assertLessEqual(np.std(group.advantages), 1.0 + 1e-12)

    def test_unselected_groups_are_whole_pools(self):
        groups, pools = grpo.collect_groups(self.model, self.prompts, self.landscape, self.config, 3)
        for group, pool in zip(groups, pools):
            self.assertIsNone(group.reward_scale)
            np.testing.assert_array_equal(group.rewards, pool)

    def test_selection_stays_bounded(self):
        model = self.model
        optimizer = grpo.AdamW.from_config(self.config)
        for epoch in range(10):
            model, stats = self.train(model, mechanisms=DriftToggle(selection=True),
                                      optimizer=optimizer, epoch=epoch)
        self.assertTrue(np.all(np.isfinite(model.params)))
        samples, _ = chain.sample_terminals(model, self.prompts[0], 50, 0)
        self.assertLess(np.max(np.abs(samples)), 20.0)
        self.assertGreater(stats.mean_reward, 0.0)

    def test_kl_limits_drift(self):
        def drift(toggles, kl_beta):
            config = grpo.GRPOConfig(group_size=4, samples_per_epoch=16, learning_rate=1e-2, kl_beta=kl_beta)
            optimizer = grpo.AdamW.from_config(config)
            model = self.model
            for epoch in range(20):
                model, _ = grpo.train_epoch(model, self.model, self.prompts, self.landscape, config,
                                            epoch, mechanisms=toggles, optimizer=optimizer)
            return np.max(np.abs(model.params - self.model.params))

        self.assertLess(drift(DriftToggle(kl=True), 1e3), drift(DriftToggle(), 0.0))

    def test_applied_gradient_is_clipped(self):
        class RecordingAdamW(grpo.AdamW):
            def step(self, params, grad):
                self.norms.append(float(np.linalg.norm(grad)))
                return super().step(params, grad)

        config = grpo.GRPOConfig(group_size=4, samples_per_epoch=16, learning_rate=1e-2, kl_beta=0.0,
                                 max_grad_norm=1e-6)
        optimizer = RecordingAdamW(learning_rate=1e-2)
        optimizer.norms = []
        _, stats = self.train(config=config, optimizer=optimizer)
        self.assertEqual(len(optimizer.norms), config.gradient_updates_per_epoch)
        self.assertGreater(stats.grad_norm, config.max_grad_norm)
        for norm in optimizer.norms:
            self.assertLessEqual(norm, config.max_grad_norm * (1 + 1e-9))
