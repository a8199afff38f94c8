"""Diversity interventions applied inside the group pipeline.

Three mechanisms, each switchable on its own:

- reward-concentrated (or -contrasted) selection of G samples from a 2G pool,
- annealed Gaussian noise on the prompt embedding during rollout,
- potential-based diversity shaping with a clipped intrinsic reward,
  merged at the advantage level.
"""
import logging
from dataclasses import dataclass

import numpy as np

from driftlab.metrics import pairwise_diversity
from driftlab.util import derive_seed, make_rng


LOGGER = logging.getLogger(__name__)
SELECT_OFF = 'off'
SELECT_CONCENTRATED = 'concentrated'
SELECT_CONTRASTED = 'contrasted'
SELECTION_MODES = (SELECT_OFF, SELECT_CONCENTRATED, SELECT_CONTRASTED)
ADVANTAGE_DECOUPLED = 'decoupled'
ADVANTAGE_SUMMED = 'summed'
ADVANTAGE_MODES = (ADVANTAGE_DECOUPLED, ADVANTAGE_SUMMED)
POOL_MULTIPLIER = 2
PROMPT_NOISE_STREAM = 7


@dataclass(frozen=True)
class DriftConfig: # pylint: disable=too-many-instance-attributes
    """Mechanism hyperparameters."""
    shaping_lambda: float = 0.5
    intrinsic_clip_sigma: float = 1.0
    noise_scale: float = 0.05
    anneal_tau1: float = 0.4
    anneal_tau2: float = 1.0
    rescale_psi: float = 1.0
    selection_mode: str = SELECT_CONCENTRATED
    pool_multiplier: int = POOL_MULTIPLIER
    invert_time: bool = False
    advantage_mode: str = ADVANTAGE_DECOUPLED

    def __post_init__(self):
        if not 0 <= self.anneal_tau1 < self.anneal_tau2 <= 1:
            raise ValueError('annealing thresholds need 0 <= tau1 < tau2 <= 1')
        if self.intrinsic_clip_sigma <= 0:
            raise ValueError('intrinsic_clip_sigma must be positive')
        if self.noise_scale < 0:
            raise ValueError('noise_scale must be non-negative')
        if not 0 <= self.rescale_psi <= 1:
            raise ValueError('rescale_psi must be in [0, 1]')
        if self.selection_mode not in SELECTION_MODES:
            raise ValueError('unknown selection mode: {}'.format(self.selection_mode))
        if self.pool_multiplier != POOL_MULTIPLIER:
            raise ValueError('pool_multiplier is fixed at {}'.format(POOL_MULTIPLIER))
        if self.advantage_mode not in ADVANTAGE_MODES:
            raise ValueError('unknown advantage mode: {}'.format(self.advantage_mode))


@dataclass(frozen=True)
class DriftToggle:
    """Which mechanisms are active."""
    selection: bool = False
    prompt_noise: bool = False
    shaping: bool = False
    kl: bool = False

    @property
    def any_drift(self):
        """True when a diversity mechanism is on."""
        return self.selection or self.prompt_noise or self.shaping


@dataclass
class SelectionResult:
    """Chosen pool indices and the reference sample."""
    chosen_indices: list
    reference_index: int
    score: float


def reward_distance_matrix(rewards):
    """D_ij = |r_i - r_j|."""
    rewards = np.asarray(rewards, dtype=float)
    if rewards.ndim != 1 or len(rewards) < 4 or len(rewards) % 2:
        raise ValueError('reward pool must have even length >= 4, got {}'.format(len(rewards)))
    return np.abs(rewards[:, None] - rewards[None, :])


def _neighbours(row, index, count, farthest):
    """Lowest-index-first neighbour cut of one distance row."""
    others = [j for j in range(len(row)) if j != index]
    key = (lambda j: (-row[j], j)) if farthest else (lambda j: (row[j], j))
    return sorted(others, key=key)[:count]


def _select(rewards, group_size, farthest):
    dist = reward_distance_matrix(rewards)
    if len(dist) != POOL_MULTIPLIER * group_size:
        raise ValueError('pool of {} does not match group size {}'.format(len(dist), group_size))
    neighbours = [_neighbours(dist[i], i, group_size - 1, farthest) for i in range(len(dist))]
    scores = np.array([dist[i, n].sum() for i, n in enumerate(neighbours)])
    reference = int(np.argmax(scores) if farthest else np.argmin(scores))
    chosen = sorted([reference] + neighbours[reference])
    return SelectionResult(chosen, reference, float(scores[reference]))


def select_concentrated(rewards, group_size):
    """Reference with minimal summed distance to its G-1 nearest, plus those."""
    return _select(rewards, group_size, farthest=False)


def select_contrasted(rewards, group_size):
    """Reference with maximal summed distance to its G-1 farthest, plus those."""
    return _select(rewards, group_size, farthest=True)


def select(rewards, group_size, mode):
    """Dispatch on selection mode; 'off' keeps the first G."""
    if mode == SELECT_CONCENTRATED:
        return select_concentrated(rewards, group_size)
    if mode == SELECT_CONTRASTED:
        return select_contrasted(rewards, group_size)
    if mode == SELECT_OFF:
        return SelectionResult(list(range(group_size)), 0, 0.0)
    raise ValueError('unknown selection mode: {}'.format(mode))


def anneal_gamma(t_norm, tau1, tau2):
    """Piecewise-linear annealing: 1 up to tau1, 0 from tau2."""
    if tau1 >= tau2:
        raise ValueError('tau1 must be below tau2')
    if not 0 <= t_norm <= 1:
        raise ValueError('t_norm must be in [0, 1]')
    if t_norm <= tau1:
        return 1.0
    if t_norm >= tau2:
        return 0.0
    return (tau2 - t_norm) / (tau2 - tau1)


def embedding_stats(prompts):
    """Mean and standard deviation over every entry of the clean embeddings."""
    stacked = np.concatenate([np.ravel(p.vector) for p in prompts])
    return float(np.mean(stacked)), float(np.std(stacked))


def perturb_prompt(embedding, t_norm, config, stats, seed):
    """Annealed prompt noise with statistics rescaling.

    Returns the final embedding and a flag set when rescaling fell back to
    the unrescaled embedding because it had zero spread.
    """
    vector = np.asarray(getattr(embedding, 'vector', embedding), dtype=float)
    if config.invert_time:
        t_norm = 1.0 - t_norm
    gamma = anneal_gamma(t_norm, config.anneal_tau1, config.anneal_tau2)
    noise = make_rng(seed).standard_normal(vector.shape)
    noisy = np.sqrt(gamma) * vector + config.noise_scale * np.sqrt(1.0 - gamma) * noise
    if config.rescale_psi == 0:
        return noisy, False
    mean_e, std_e = stats
    spread = np.std(noisy)
    if spread == 0:
        return noisy, True
    rescaled = (noisy - np.mean(noisy)) / spread * std_e + mean_e
    return config.rescale_psi * rescaled + (1.0 - config.rescale_psi) * noisy, False


class PromptNoise():
    """Rollout conditioner applying annealed prompt noise per step."""

    def __init__(self, config, stats, horizon):
        """Initialize."""
        if config.rescale_psi > 0 and stats[1] <= 0:
            raise ValueError('prompt embedding std must be positive when rescaling')
        self.config = config
        self.stats = stats
        self.horizon = horizon
        self.fallbacks = 0

    def __call__(self, prompt, step, seed):
        vector, fallback = perturb_prompt(
            prompt, step / float(self.horizon), self.config, self.stats,
            derive_seed(seed, step, PROMPT_NOISE_STREAM)
        )
        if fallback:
            self.fallbacks += 1
            LOGGER.warning("[p:%d] zero-spread noisy embedding at step %d, rescaling skipped",
                           prompt.prompt_id, step)
        return vector


def intrinsic_trajectory_reward(group, discount_gamma, encoder, config):
    """R_int = clip(gamma^T d(x_0), 0, sigma); d(x_T) is zero by convention."""
    trajectories = group.trajectories
    if len(trajectories) < 2:
        raise ValueError('intrinsic reward needs a group of at least 2')
    horizon = trajectories[0].horizon
    terminals = np.stack([t.x0 for t in trajectories])
    diversity = pairwise_diversity(terminals, encoder).per_sample
    return np.clip(discount_gamma ** horizon * diversity, 0.0, config.intrinsic_clip_sigma)


def telescoping_check(potentials, discount_gamma):
    """Stepwise discounted shaping sum and its closed form gamma^T d(x_0) - d(x_T).

    potentials is ordered d(x_T), ..., d(x_0).
    """
    potentials = np.asarray(potentials, dtype=float)
    horizon = len(potentials) - 1
    stepwise = 0.0
    for t in range(horizon):
        stepwise += discount_gamma ** t * (discount_gamma * potentials[t + 1] - potentials[t])
    closed_form = discount_gamma ** horizon * potentials[-1] - potentials[0]
    return float(stepwise), float(closed_form)


def merge_advantages(advantages, intrinsic_advantages, shaping_lambda):
    """A + lambda * A_int."""
    advantages = np.asarray(advantages, dtype=float)
    intrinsic_advantages = np.asarray(intrinsic_advantages, dtype=float)
    if advantages.shape != intrinsic_advantages.shape:
        raise ValueError('advantage vectors differ in length: {} vs {}'.format(
            len(advantages), len(intrinsic_advantages)))
    return advantages + shaping_lambda * intrinsic_advantages
