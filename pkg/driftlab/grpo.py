"""Group relative policy optimization on the Gaussian chain."""
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from driftlab.mechanisms import (
    ADVANTAGE_SUMMED, SELECT_OFF, DriftConfig, DriftToggle, PromptNoise,
    embedding_stats, intrinsic_trajectory_reward, merge_advantages, select
)
from driftlab.policy import sample_trajectory, trajectory_kl
from driftlab.util import derive_seed


LOGGER = logging.getLogger(__name__)
ALGORITHM_GRPO = 'grpo'
ALGORITHM_PG = 'pg'
ALGORITHMS = (ALGORITHM_GRPO, ALGORITHM_PG)
EPOCH_HEADER = [
    'epoch', 'mean_reward', 'mean_kl', 'clip_fraction', 'grad_norm',
    'mean_intrinsic_reward', 'intrinsic_clip_fraction', 'selection_mode'
]


class TrainingAborted(RuntimeError):
    """Non-finite training signal; carries the last good policy."""

    def __init__(self, message, policy, epoch):
        super().__init__(message)
        self.policy = policy
        self.epoch = epoch


@dataclass(frozen=True)
class GRPOConfig: # pylint: disable=too-many-instance-attributes
    """Optimizer and surrogate hyperparameters."""
    group_size: int = 8
    clip_epsilon: float = 1e-4
    kl_beta: float = 0.001
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-4
    max_grad_norm: float = 1.0
    samples_per_epoch: int = 256
    gradient_updates_per_epoch: int = 4
    std_floor: float = 1e-8
    algorithm: str = ALGORITHM_GRPO

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError('group_size must be >= 2')
        if self.clip_epsilon <= 0:
            raise ValueError('clip_epsilon must be positive')
        if self.kl_beta < 0:
            raise ValueError('kl_beta must be non-negative')
        if self.learning_rate < 0:
            raise ValueError('learning_rate must be non-negative')
        if self.std_floor <= 0:
            raise ValueError('std_floor must be positive')
        if self.algorithm not in ALGORITHMS:
            raise ValueError('unknown algorithm: {}'.format(self.algorithm))


@dataclass
class Group:
    """G trajectories sharing one prompt."""
    trajectories: list
    rewards: np.ndarray
    advantages: np.ndarray = None
    intrinsic_rewards: np.ndarray = None
    reward_scale: float = None

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=float)
        if len(self.trajectories) != len(self.rewards):
            raise ValueError('group has {} trajectories but {} rewards'.format(
                len(self.trajectories), len(self.rewards)))
        if len({t.prompt.prompt_id for t in self.trajectories}) > 1:
            raise ValueError('group trajectories must share a prompt')
        if len({t.horizon for t in self.trajectories}) > 1:
            raise ValueError('group trajectories must share a horizon')

    @property
    def size(self):
        """G."""
        return len(self.trajectories)

    @property
    def prompt(self):
        """Shared prompt."""
        return self.trajectories[0].prompt


@dataclass
class EpochStats:
    """One row of epochs.csv."""
    epoch: int
    mean_reward: float
    mean_kl: float
    clip_fraction: float
    grad_norm: float
    mean_intrinsic_reward: float = 0.0
    intrinsic_clip_fraction: float = 0.0
    selection_mode: str = SELECT_OFF

    def to_row(self):
        """Row keyed by the CSV header."""
        return asdict(self)


@dataclass
class AdamW:
    """Adam with decoupled weight decay over a flat parameter vector."""
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    first: np.ndarray = field(default=None, repr=False)
    second: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_config(cls, config):
        """Optimizer from a GRPOConfig."""
        return cls(config.learning_rate, config.adam_beta1, config.adam_beta2,
                   config.adam_eps, config.weight_decay)

    def step(self, params, grad):
        """Return the updated parameters (descent on grad)."""
        if self.first is None:
            self.first = np.zeros_like(params)
            self.second = np.zeros_like(params)
        self.step_count += 1
        self.first = self.beta1 * self.first + (1 - self.beta1) * grad
        self.second = self.beta2 * self.second + (1 - self.beta2) * grad ** 2
        first_hat = self.first / (1 - self.beta1 ** self.step_count)
        second_hat = self.second / (1 - self.beta2 ** self.step_count)
        decayed = params - self.learning_rate * self.weight_decay * params
        return decayed - self.learning_rate * first_hat / (np.sqrt(second_hat) + self.eps)


def clip_grad_norm(grad, max_norm):
    """Scale grad to global norm <= max_norm; returns (grad, pre-clip norm)."""
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm), norm
    return grad, norm


def compute_advantages(rewards, std_floor=1e-8, scale=None):
    """A_i = (r_i - mean) / max(std, floor), population std.

    A selected subset passes the std of the pool it was drawn from as
    scale; the divisor is then max(std, scale).
    """
    rewards = np.asarray(rewards, dtype=float)
    if len(rewards) < 2:
        raise ValueError('advantages need at least 2 rewards')
    std = np.std(rewards)
    if std < std_floor:
        return np.zeros_like(rewards)
    if scale is not None:
        std = max(std, scale)
    return (rewards - np.mean(rewards)) / std


def rollout_group(policy, prompt, config, seed, landscape, conditioner=None, size=None):
    """Roll out a group (or a selection pool when size is given)."""
    size = config.group_size if size is None else size
    trajectories = [
        sample_trajectory(policy, prompt, derive_seed(seed, prompt.prompt_id, i), landscape, conditioner)
        for i in range(size)
    ]
    return Group(trajectories, [t.terminal_reward for t in trajectories])


def subgroup(group, indices, reward_scale=None):
    """Group restricted to the given pool indices."""
    return Group([group.trajectories[i] for i in indices], group.rewards[list(indices)],
                 reward_scale=reward_scale)


def collect_groups( # pylint: disable=too-many-arguments
        policy, prompts, landscape, config, seed, selection_mode=SELECT_OFF,
        conditioner=None, pool_multiplier=1
):
    """Roll out every prompt's pools and cut them down to training groups.

    Returns the groups and the per-pool reward vectors. Selected groups
    carry their pool's reward std as reward_scale.
    """
    groups_per_prompt = max(1, config.samples_per_epoch // (config.group_size * len(prompts)))
    pool_size = config.group_size * (pool_multiplier if selection_mode != SELECT_OFF else 1)
    groups = []
    pool_rewards = []
    for prompt in prompts:
        for index in range(groups_per_prompt):
            pool = rollout_group(
                policy, prompt, config, derive_seed(seed, index), landscape, conditioner, pool_size
            )
            pool_rewards.append(pool.rewards)
            if selection_mode == SELECT_OFF:
                groups.append(pool)
                continue
            chosen = select(pool.rewards, config.group_size, selection_mode).chosen_indices
            groups.append(subgroup(pool, chosen, float(np.std(pool.rewards))))
    return groups, pool_rewards


def clipped_surrogate(policy, ref_policy, group, config, kl_beta=None):
    """Clipped importance-weighted surrogate, its gradient and diagnostics.

    loss = -(1/G) sum_i sum_t min(rho A_i, clip(rho, 1-eps, 1+eps) A_i)
           + beta (1/G) sum_i sum_t KL_t
    """
    if group.advantages is None:
        raise ValueError('group advantages have not been computed')
    beta = config.kl_beta if kl_beta is None else kl_beta
    if beta > 0 and ref_policy is None:
        raise ValueError('kl penalty needs a reference policy')
    eps = config.clip_epsilon
    size = float(group.size)
    loss = 0.0
    grad = np.zeros(policy.weight_shape)
    clipped_steps = 0
    total_steps = 0
    kls = []
    for traj, advantage in zip(group.trajectories, group.advantages):
        if traj.horizon != policy.spec.horizon:
            raise ValueError('trajectory horizon {} does not match policy horizon {}'.format(
                traj.horizon, policy.spec.horizon))
        feats = policy.features_along(traj)
        ratio = np.exp(policy.log_probs(traj, feats) - traj.step_logps)
        bounded = np.clip(ratio, 1.0 - eps, 1.0 + eps)
        loss -= np.sum(np.minimum(ratio * advantage, bounded * advantage)) / size
        # gradient flows only where the unclipped branch attains the min
        active = ratio * advantage <= bounded * advantage
        grad -= policy.weighted_score(traj, active * ratio * advantage / size, feats)
        clipped_steps += int(np.sum(np.abs(ratio - 1.0) > eps))
        total_steps += len(ratio)
        if beta > 0:
            step_kls, kl_grad = trajectory_kl(policy, ref_policy, traj, feats)
            loss += beta * np.sum(step_kls) / size
            grad += beta * kl_grad / size
            kls.append(float(np.sum(step_kls)))
        elif ref_policy is not None:
            kls.append(float(np.sum(trajectory_kl(policy, ref_policy, traj, feats)[0])))
    diagnostics = dict(
        clip_fraction=clipped_steps / float(total_steps),
        mean_kl=float(np.mean(kls)) if kls else 0.0
    )
    return float(loss), grad.ravel(), diagnostics


def baseline_advantages(rewards):
    """A_i = r_i - mean, no std scaling."""
    rewards = np.asarray(rewards, dtype=float)
    return rewards - np.mean(rewards)


def standardize(groups, config):
    """Fill each group's advantages from its own rewards."""
    for group in groups:
        if config.algorithm == ALGORITHM_PG:
            group.advantages = baseline_advantages(group.rewards)
        else:
            group.advantages = compute_advantages(group.rewards, config.std_floor, group.reward_scale)


def shape_groups(groups, config, drift_config, discount_gamma, encoder):
    """Intrinsic diversity rewards merged at the advantage level."""
    for group in groups:
        group.intrinsic_rewards = intrinsic_trajectory_reward(group, discount_gamma, encoder, drift_config)
    if drift_config.advantage_mode == ADVANTAGE_SUMMED:
        for group in groups:
            summed = group.rewards + drift_config.shaping_lambda * group.intrinsic_rewards
            group.advantages = compute_advantages(summed, config.std_floor, group.reward_scale)
        return
    standardize(groups, config)
    extrinsic = [g.advantages for g in groups]
    intrinsic = [
        Group(g.trajectories, g.intrinsic_rewards) for g in groups
    ]
    standardize(intrinsic, config)
    for group, base, shaped in zip(groups, extrinsic, intrinsic):
        group.advantages = merge_advantages(base, shaped.advantages, drift_config.shaping_lambda)


def batch_surrogate(policy, ref_policy, groups, config, kl_beta):
    """Surrogate averaged over groups."""
    loss = 0.0
    grad = np.zeros(policy.params.shape)
    clip_fraction = 0.0
    mean_kl = 0.0
    for group in groups:
        group_loss, group_grad, diag = clipped_surrogate(policy, ref_policy, group, config, kl_beta)
        loss += group_loss / len(groups)
        grad += group_grad / len(groups)
        clip_fraction += diag['clip_fraction'] / len(groups)
        mean_kl += diag['mean_kl'] / len(groups)
    return loss, grad, dict(clip_fraction=clip_fraction, mean_kl=mean_kl)


def train_epoch( # pylint: disable=too-many-arguments, too-many-locals
        policy, ref_policy, prompts, landscape, config, seed, mechanisms=None,
        drift_config=None, optimizer=None, encoder=None, discount_gamma=1.0,
        prompt_stats=None, epoch=0
):
    """Sample an epoch of groups, then take the configured Adam steps."""
    start = time.time()
    mechanisms = mechanisms or DriftToggle()
    drift_config = drift_config or DriftConfig()
    optimizer = optimizer or AdamW.from_config(config)
    kl_beta = config.kl_beta if mechanisms.kl else 0.0
    selection_mode = drift_config.selection_mode if mechanisms.selection else SELECT_OFF
    conditioner = None
    if mechanisms.prompt_noise:
        if prompt_stats is None:
            prompt_stats = embedding_stats(prompts)
        conditioner = PromptNoise(drift_config, prompt_stats, policy.spec.horizon)
    groups, pool_rewards = collect_groups(
        policy, prompts, landscape, config, seed, selection_mode, conditioner, drift_config.pool_multiplier
    )

    if mechanisms.shaping:
        shape_groups(groups, config, drift_config, discount_gamma, encoder)
        intrinsic = np.concatenate([g.intrinsic_rewards for g in groups])
    else:
        standardize(groups, config)
        intrinsic = np.zeros(0)

    params = policy.params
    current = policy
    norms, clip_fractions, kls = [], [], []
    for _ in range(config.gradient_updates_per_epoch):
        loss, grad, diag = batch_surrogate(current, ref_policy, groups, config, kl_beta)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            LOGGER.error("[e:%d] non-finite loss %s, aborting", epoch, loss)
            raise TrainingAborted('non-finite loss at epoch {}'.format(epoch), policy, epoch)
        clipped, norm = clip_grad_norm(grad, config.max_grad_norm)
        params = optimizer.step(params, clipped)
        current = policy.with_params(params)
        norms.append(norm)
        clip_fractions.append(diag['clip_fraction'])
        kls.append(diag['mean_kl'])

    stats = EpochStats(
        epoch=epoch,
        mean_reward=float(np.mean(np.concatenate(pool_rewards))),
        mean_kl=float(np.mean(kls)) if kls else 0.0,
        clip_fraction=float(np.mean(clip_fractions)) if clip_fractions else 0.0,
        grad_norm=float(np.mean(norms)) if norms else 0.0,
        mean_intrinsic_reward=float(np.mean(intrinsic)) if intrinsic.size else 0.0,
        intrinsic_clip_fraction=float(np.mean(intrinsic >= drift_config.intrinsic_clip_sigma)) if intrinsic.size else 0.0,
        selection_mode=selection_mode
    )
    LOGGER.debug("[e:%d] %d groups, reward %.4f, kl %.2e in %.2f seconds",
                 epoch, len(groups), stats.mean_reward, stats.mean_kl, time.time() - start)
    return current, stats
