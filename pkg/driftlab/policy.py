"""Gaussian-chain denoising policy.

Each reverse step draws x_{t-1} ~ N(mu_theta(x_t, c, t), sigma_t^2 I) with
mu_theta = W_t z(x_t, c) + b_t, where z stacks x_t, the prompt embedding c,
random Fourier features of x_t modulated by c, and a bias coordinate.
The mean is linear in theta, so scores and KL gradients are closed form.
"""
import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from driftlab.landscape import evaluate_reward, mode_occupancy
from driftlab.mdp import DenoisingMDPSpec
from driftlab.util import derive_seed, make_rng


LOGGER = logging.getLogger(__name__)
PER_STEP = 'per_step'
SHARED = 'shared'
MEAN_FAMILIES = (PER_STEP, SHARED)
NOISE_CONSTANT = 'constant'
NOISE_COSINE = 'cosine'
DEFAULT_NOISE_SCALE = 0.7
DEFAULT_SIGMA_FLOOR = 0.05
DEFAULT_FOURIER_FEATURES = 32
DEFAULT_FOURIER_LENGTHSCALE = 1.0
TIME_FEATURES = 4
LOG_2PI = math.log(2 * math.pi)
PRETRAIN_BATCH = 256
PRETRAIN_RIDGE = 1e-6
PRETRAIN_MODE_SPREAD = 0.5
COVERAGE_SAMPLES = 1000
COVERAGE_THRESHOLD = 0.05
STATUS_COVERED = 'covered'
STATUS_WARNING = 'warning'


@dataclass(frozen=True)
class PromptEmbedding:
    """Prompt embedding c with its label."""
    vector: np.ndarray
    prompt_id: int

    def __post_init__(self):
        vector = np.asarray(self.vector, dtype=float)
        if not np.all(np.isfinite(vector)):
            raise ValueError('prompt embedding must be finite')
        object.__setattr__(self, 'vector', vector)


@dataclass
class Trajectory:
    """One rollout x_T ... x_0; states[0] is x_T and states[-1] is x_0."""
    states: np.ndarray
    step_logps: np.ndarray
    prompt: PromptEmbedding
    terminal_reward: float
    rng_seed: int
    conditions: np.ndarray = None

    @property
    def x0(self):
        """Terminal sample."""
        return self.states[-1]

    @property
    def horizon(self):
        """Number of denoising steps."""
        return len(self.step_logps)


def make_prompts(num_prompts, prompt_dim, seed):
    """Standard-normal prompt embeddings with ids 0..num_prompts-1."""
    rng = make_rng(derive_seed(seed, num_prompts, prompt_dim))
    return [PromptEmbedding(rng.standard_normal(prompt_dim), p) for p in range(num_prompts)]


def cosine_alpha_bar(horizon):
    """Cumulative signal level of a cosine forward process, t = 0..T."""
    alpha_bar = np.cos(0.5 * np.pi * np.arange(horizon + 1) / horizon) ** 2
    alpha_bar[0] = 1.0
    alpha_bar[-1] = 0.0
    return alpha_bar


def noise_schedule(horizon, kind=NOISE_CONSTANT, scale=DEFAULT_NOISE_SCALE, floor=DEFAULT_SIGMA_FLOOR):
    """Per-step noise scales indexed by step j (x_{T-j} -> x_{T-j-1})."""
    if kind == NOISE_CONSTANT:
        if scale <= 0:
            raise ValueError('noise scale must be positive')
        return np.full(horizon, float(scale))
    if kind == NOISE_COSINE:
        alpha_bar = cosine_alpha_bar(horizon)
        sigmas = []
        for t in range(horizon, 0, -1):
            beta = 1.0 - alpha_bar[t] / alpha_bar[t - 1]
            posterior = (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta
            sigmas.append(max(math.sqrt(max(posterior, 0.0)), floor))
        return np.array(sigmas)
    raise ValueError('unknown noise schedule: {}'.format(kind))


class GaussianChainPolicy: # pylint: disable=too-many-instance-attributes
    """Prompt-conditioned Gaussian denoising chain over R^d."""

    def __init__( # pylint: disable=too-many-arguments
            self, spec, weights=None, noise_scales=None, mean_family=PER_STEP,
            num_fourier_features=DEFAULT_FOURIER_FEATURES,
            fourier_lengthscale=DEFAULT_FOURIER_LENGTHSCALE, feature_seed=0, metadata=None
    ):
        """Initialize with zero weights unless given."""
        if mean_family not in MEAN_FAMILIES:
            raise ValueError('unknown mean family: {}'.format(mean_family))
        self.spec = spec
        self.mean_family = mean_family
        self.num_fourier_features = int(num_fourier_features)
        self.fourier_lengthscale = float(fourier_lengthscale)
        self.feature_seed = int(feature_seed)
        self.metadata = dict(metadata or {})
        rng = make_rng(derive_seed(self.feature_seed, spec.state_dim, self.num_fourier_features))
        self._omega = rng.standard_normal((self.num_fourier_features, spec.state_dim)) / self.fourier_lengthscale
        self._phase = rng.uniform(0.0, 2 * np.pi, self.num_fourier_features)
        if noise_scales is None:
            noise_scales = noise_schedule(spec.horizon)
        self.noise_scales = np.array(noise_scales, dtype=float)
        if self.noise_scales.shape != (spec.horizon,):
            raise ValueError('noise_scales must have length {}'.format(spec.horizon))
        if np.any(self.noise_scales <= 0):
            raise ValueError('noise scales must be positive')
        shape = self.weight_shape
        if weights is None:
            weights = np.zeros(shape)
        self.weights = np.array(weights, dtype=float).reshape(shape)

    @property
    def num_features(self):
        """Length of the feature vector z (bias included)."""
        dims = self.spec.state_dim + self.spec.prompt_dim * (1 + self.num_fourier_features) + 1
        if self.mean_family == SHARED:
            dims += TIME_FEATURES
        return dims

    @property
    def weight_shape(self):
        """Shape (slots, d, F) of the weight tensor."""
        slots = self.spec.horizon if self.mean_family == PER_STEP else 1
        return (slots, self.spec.state_dim, self.num_features)

    @property
    def params(self):
        """Flat parameter vector theta."""
        return self.weights.ravel().copy()

    def with_params(self, params):
        """New policy sharing everything but theta."""
        return GaussianChainPolicy(
            self.spec, np.asarray(params, dtype=float).reshape(self.weight_shape), self.noise_scales,
            self.mean_family, self.num_fourier_features, self.fourier_lengthscale,
            self.feature_seed, self.metadata
        )

    def copy(self):
        """Independent copy."""
        return self.with_params(self.params)

    def slot(self, step):
        """Weight slot used at step j."""
        return step if self.mean_family == PER_STEP else 0

    def fourier(self, x):
        """Random Fourier features of x (rows of x may be batched)."""
        if not self.num_fourier_features:
            return np.zeros(np.shape(x)[:-1] + (0,))
        scale = math.sqrt(2.0 / self.num_fourier_features)
        return scale * np.cos(np.asarray(x) @ self._omega.T + self._phase)

    def feature_rows(self, xs, cs, steps):
        """Feature rows for batched states, embeddings and step indices."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        count = xs.shape[0]
        cs = np.broadcast_to(np.asarray(cs, dtype=float), (count, self.spec.prompt_dim))
        modulated = np.einsum('nm,nk->nmk', self.fourier(xs), cs).reshape(count, -1)
        parts = [xs, cs, modulated]
        if self.mean_family == SHARED:
            t_norm = np.broadcast_to(np.asarray(steps, dtype=float), (count,)) / self.spec.horizon
            freqs = np.pi * 2.0 ** np.arange(TIME_FEATURES // 2)
            parts.extend([np.sin(np.outer(t_norm, freqs)), np.cos(np.outer(t_norm, freqs))])
        parts.append(np.ones((count, 1)))
        return np.concatenate(parts, axis=1)

    def features(self, x, c, step):
        """Feature vector z(x_t, c, t)."""
        return self.feature_rows(x, c, step)[0]

    def features_along(self, traj):
        """Features of every step of a trajectory, shape (T, F)."""
        self.check_trajectory(traj)
        return self.feature_rows(traj.states[:-1], traj.conditions, np.arange(self.spec.horizon))

    def mean(self, x, c, step):
        """mu_theta(x_t, c, t)."""
        return self.weights[self.slot(step)] @ self.features(x, c, step)

    def means_along(self, traj, feats=None):
        """Means of every step, shape (T, d)."""
        if feats is None:
            feats = self.features_along(traj)
        slots = [self.slot(j) for j in range(self.spec.horizon)]
        return np.einsum('jdf,jf->jd', self.weights[slots], feats)

    def log_probs(self, traj, feats=None):
        """Per-step log pi_theta(x_{t-1} | x_t, c) of a recorded trajectory."""
        means = self.means_along(traj, feats)
        resid = traj.states[1:] - means
        sigma = self.noise_scales
        dim = self.spec.state_dim
        return -0.5 * np.sum(resid ** 2, axis=1) / sigma ** 2 - dim * np.log(sigma) - 0.5 * dim * LOG_2PI

    def weighted_score(self, traj, step_weights, feats=None):
        """sum_t w_t * d/dtheta log pi_theta(step t), shaped like the weights."""
        if feats is None:
            feats = self.features_along(traj)
        resid = (traj.states[1:] - self.means_along(traj, feats)) / self.noise_scales[:, None] ** 2
        return self._scatter(np.asarray(step_weights, dtype=float)[:, None] * resid, feats)

    def _scatter(self, rows, feats):
        """Accumulate per-step outer products into weight slots."""
        outer = np.einsum('jd,jf->jdf', rows, feats)
        if self.mean_family == PER_STEP:
            return outer
        return outer.sum(axis=0, keepdims=True)

    def check_trajectory(self, traj):
        """Trajectory dimensions must match the chain shape."""
        horizon = self.spec.horizon
        if traj.states.shape != (horizon + 1, self.spec.state_dim):
            raise ValueError('trajectory states have shape {}, expected {}'.format(
                traj.states.shape, (horizon + 1, self.spec.state_dim)))
        if traj.conditions is None or traj.conditions.shape != (horizon, self.spec.prompt_dim):
            raise ValueError('trajectory conditions do not match the chain shape')

    def check_reference(self, ref):
        """Reference must share chain shape, noise scales and feature map."""
        if (
                ref.spec != self.spec or
                not np.array_equal(ref.noise_scales, self.noise_scales) or
                ref.weight_shape != self.weight_shape or
                ref.feature_seed != self.feature_seed or
                ref.fourier_lengthscale != self.fourier_lengthscale
        ):
            raise ValueError('policy and reference do not share a chain shape')

    def to_dict(self):
        """Serialize."""
        return dict(
            spec=self.spec.to_dict(),
            params=self.params.tolist(),
            noise_scales=self.noise_scales.tolist(),
            mean_family=self.mean_family,
            num_fourier_features=self.num_fourier_features,
            fourier_lengthscale=self.fourier_lengthscale,
            feature_seed=self.feature_seed,
            metadata=self.metadata
        )

    @classmethod
    def from_dict(cls, data):
        """Deserialize."""
        spec = DenoisingMDPSpec.from_dict(data['spec'])
        policy = cls(
            spec, None, data['noise_scales'], data['mean_family'], data['num_fourier_features'],
            data['fourier_lengthscale'], data['feature_seed'], data.get('metadata')
        )
        return policy.with_params(data['params'])


def sample_trajectory(policy, prompt, seed, landscape=None, conditioner=None):
    """Roll out x_T ~ N(0, I) through the chain.

    The conditioner, when given, maps (prompt, step, seed) to the embedding
    used at that step; conditions are recorded so the rollout replays.
    """
    spec = policy.spec
    rng = make_rng(seed)
    states = np.empty((spec.horizon + 1, spec.state_dim))
    conditions = np.empty((spec.horizon, spec.prompt_dim))
    states[0] = rng.standard_normal(spec.state_dim)
    for step in range(spec.horizon):
        cond = prompt.vector if conditioner is None else conditioner(prompt, step, seed)
        conditions[step] = cond
        mean = policy.mean(states[step], cond, step)
        states[step + 1] = mean + policy.noise_scales[step] * rng.standard_normal(spec.state_dim)
    reward = evaluate_reward(landscape, states[-1], prompt) if landscape is not None else float('nan')
    traj = Trajectory(states, np.zeros(spec.horizon), prompt, reward, int(seed), conditions)
    # recorded through log_probs: on-policy importance ratios are exactly 1
    traj.step_logps = policy.log_probs(traj)
    return traj


def log_prob_grad(policy, traj):
    """d/dtheta sum_t log pi_theta(x_{t-1} | x_t, c), flat."""
    return policy.weighted_score(traj, np.ones(policy.spec.horizon)).ravel()


def step_kl(policy, ref, x_t, prompt, step):
    """KL between equal-covariance Gaussian steps: |mu - mu_ref|^2 / 2 sigma^2."""
    policy.check_reference(ref)
    cond = prompt.vector if isinstance(prompt, PromptEmbedding) else np.asarray(prompt, dtype=float)
    diff = policy.mean(x_t, cond, step) - ref.mean(x_t, cond, step)
    return float(np.sum(diff ** 2) / (2 * policy.noise_scales[step] ** 2))


def trajectory_kl(policy, ref, traj, feats=None):
    """Per-step KL along a trajectory's states, and its gradient."""
    policy.check_reference(ref)
    if feats is None:
        feats = policy.features_along(traj)
    diff = policy.means_along(traj, feats) - ref.means_along(traj, feats)
    sigma_sq = policy.noise_scales ** 2
    kls = np.sum(diff ** 2, axis=1) / (2 * sigma_sq)
    grad = policy._scatter(diff / sigma_sq[:, None], feats) # pylint: disable=protected-access
    return kls, grad


def pretrain(policy, landscape, steps, seed, prompts, batch_size=PRETRAIN_BATCH):
    """Supervised denoising regression onto the landscape's modes.

    Clean samples come from a Gaussian mixture over each prompt's active
    modes; x_t follows a cosine forward process and mu_theta is regressed
    onto the forward posterior mean by ridge least squares.
    """
    if steps < 0:
        raise ValueError('steps must be >= 0')
    if steps == 0:
        return policy
    start = time.time()
    spec = policy.spec
    alpha_bar = cosine_alpha_bar(spec.horizon)
    slots, _, num_features = policy.weight_shape
    gram = np.zeros((slots, num_features, num_features))
    cross = np.zeros((slots, num_features, spec.state_dim))
    rng = make_rng(derive_seed(seed, steps))
    for _ in range(steps):
        for prompt in prompts:
            centers = landscape.centers(prompt.prompt_id)
            picks = rng.integers(len(centers), size=batch_size)
            clean = centers[picks] + PRETRAIN_MODE_SPREAD * landscape.mode_width * \
                rng.standard_normal((batch_size, spec.state_dim))
            for step in range(spec.horizon):
                t = spec.horizon - step
                noisy = math.sqrt(alpha_bar[t]) * clean + \
                    math.sqrt(1.0 - alpha_bar[t]) * rng.standard_normal(clean.shape)
                beta = 1.0 - alpha_bar[t] / alpha_bar[t - 1]
                target = (math.sqrt(alpha_bar[t - 1]) * beta / (1.0 - alpha_bar[t])) * clean + \
                    (math.sqrt(1.0 - beta) * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t])) * noisy
                feats = policy.feature_rows(noisy, prompt.vector, step)
                gram[policy.slot(step)] += feats.T @ feats
                cross[policy.slot(step)] += feats.T @ target
    weights = np.empty(policy.weight_shape)
    for index in range(slots):
        ridge = PRETRAIN_RIDGE * max(np.trace(gram[index]) / num_features, 1.0)
        weights[index] = np.linalg.solve(gram[index] + ridge * np.eye(num_features), cross[index]).T
    trained = policy.with_params(weights)
    coverage = measure_coverage(trained, landscape, prompts, seed)
    status = STATUS_COVERED if all(min(c) >= COVERAGE_THRESHOLD for c in coverage.values()) else STATUS_WARNING
    trained.metadata = dict(policy.metadata, pretrain_status=status, pretrain_steps=steps,
                            coverage={str(k): v for k, v in coverage.items()})
    if status == STATUS_WARNING:
        LOGGER.warning("pretrained policy misses a mode (coverage %s)", coverage)
    LOGGER.info("pretrained %d-step chain in %.2f seconds (%s)", spec.horizon, time.time() - start, status)
    return trained


def sample_terminals(policy, prompt, count, seed, landscape=None, conditioner=None):
    """Terminal samples x_0 for a prompt with per-sample substreams."""
    trajs = [
        sample_trajectory(policy, prompt, derive_seed(seed, prompt.prompt_id, i), landscape, conditioner)
        for i in range(count)
    ]
    return np.stack([t.x0 for t in trajs]), np.array([t.terminal_reward for t in trajs])


def measure_coverage(policy, landscape, prompts, seed, count=COVERAGE_SAMPLES):
    """Per-prompt fraction of samples nearest each active mode."""
    coverage = {}
    for prompt in prompts:
        samples, _ = sample_terminals(policy, prompt, count, derive_seed(seed, 1))
        coverage[prompt.prompt_id] = mode_occupancy(landscape, samples, prompt).tolist()
    return coverage
