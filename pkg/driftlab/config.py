"""Experiment configuration.

A single JSON document parsed into nested dataclasses. Missing keys take
defaults; unknown keys are rejected.
"""
import logging
from dataclasses import asdict, dataclass, field, fields, replace

from driftlab.encoders import KIND_IDENTITY, KIND_RANDOM_PROJECTION
from driftlab.grpo import GRPOConfig
from driftlab.landscape import DEFAULT_MODE_WIDTH, RewardLandscape, default_landscape, four_peaks
from driftlab.mdp import DenoisingMDPSpec
from driftlab.mechanisms import DriftConfig, DriftToggle
from driftlab.policy import (
    DEFAULT_FOURIER_FEATURES, DEFAULT_FOURIER_LENGTHSCALE, DEFAULT_NOISE_SCALE,
    DEFAULT_SIGMA_FLOOR, NOISE_CONSTANT, NOISE_COSINE, PER_STEP, GaussianChainPolicy,
    make_prompts, noise_schedule
)
from driftlab.util import derive_seed, load_json


LOGGER = logging.getLogger(__name__)
LANDSCAPE_DEFAULT = 'default'
LANDSCAPE_FOUR_PEAKS = 'four_peaks'
LANDSCAPE_CUSTOM = 'custom'
LANDSCAPE_KINDS = (LANDSCAPE_DEFAULT, LANDSCAPE_FOUR_PEAKS, LANDSCAPE_CUSTOM)
PROMPT_STREAM = 11


def _from_dict(cls, data, section):
    """Build a flat config dataclass, rejecting unknown keys."""
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError('unknown keys in {}: {}'.format(section, ', '.join(unknown)))
    return cls(**data)


@dataclass(frozen=True)
class PolicyConfig: # pylint: disable=too-many-instance-attributes
    """Chain shape, noise schedule and mean family."""
    horizon: int = 10
    state_dim: int = 2
    prompt_dim: int = 4
    discount_gamma: float = 1.0
    mean_family: str = PER_STEP
    noise_schedule: str = NOISE_CONSTANT
    noise_scale: float = DEFAULT_NOISE_SCALE
    sigma_floor: float = DEFAULT_SIGMA_FLOOR
    num_fourier_features: int = DEFAULT_FOURIER_FEATURES
    fourier_lengthscale: float = DEFAULT_FOURIER_LENGTHSCALE
    feature_seed: int = 0
    pretrain_steps: int = 20

    def spec(self):
        """Denoising MDP shape."""
        return DenoisingMDPSpec(self.horizon, self.state_dim, self.discount_gamma, self.prompt_dim)

    def build(self):
        """Untrained policy."""
        scales = noise_schedule(self.horizon, self.noise_schedule, self.noise_scale, self.sigma_floor)
        return GaussianChainPolicy(
            self.spec(), None, scales, self.mean_family, self.num_fourier_features,
            self.fourier_lengthscale, self.feature_seed
        )


@dataclass(frozen=True)
class LandscapeConfig:
    """Reward landscape: a named preset or explicit modes."""
    kind: str = LANDSCAPE_DEFAULT
    num_prompts: int = 4
    spread: float = 2.0
    mode_width: float = DEFAULT_MODE_WIDTH
    mode_centers: list = None
    active_modes: dict = None

    def __post_init__(self):
        if self.kind not in LANDSCAPE_KINDS:
            raise ValueError('unknown landscape kind: {}'.format(self.kind))
        if self.kind == LANDSCAPE_CUSTOM and (self.mode_centers is None or self.active_modes is None):
            raise ValueError('custom landscape needs mode_centers and active_modes')
        # JSON form, so echoed configs compare equal
        if self.mode_centers is not None:
            object.__setattr__(self, 'mode_centers', [[float(v) for v in row] for row in self.mode_centers])
        if self.active_modes is not None:
            object.__setattr__(self, 'active_modes', {
                str(k): [int(m) for m in v] for k, v in self.active_modes.items()
            })

    def build(self):
        """Reward landscape."""
        if self.kind == LANDSCAPE_FOUR_PEAKS:
            return four_peaks(self.num_prompts, self.spread, self.mode_width)
        if self.kind == LANDSCAPE_CUSTOM:
            return RewardLandscape(self.mode_centers, self.mode_width, self.active_modes)
        return default_landscape()


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation cadence and protocol."""
    eval_every: int = 10
    num_eval_prompts: int = 4
    samples_per_prompt: int = 40
    recall_k: int = 10
    kernel_bandwidth: float = None
    prompt_noise: bool = False
    dreamsim_style: dict = field(default_factory=lambda: {'kind': KIND_IDENTITY})
    clip_style: dict = field(default_factory=lambda: {'kind': KIND_RANDOM_PROJECTION, 'dim': 2, 'seed': 0})

    def __post_init__(self):
        if self.eval_every < 1:
            raise ValueError('eval_every must be >= 1')
        if self.samples_per_prompt <= self.recall_k:
            raise ValueError('samples_per_prompt must exceed recall_k')


@dataclass(frozen=True)
class ExperimentConfig: # pylint: disable=too-many-instance-attributes
    """Everything a run depends on."""
    name: str = 'drift'
    run_seed: int = 0
    epochs: int = 100
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    landscape: LandscapeConfig = field(default_factory=LandscapeConfig)
    grpo: GRPOConfig = field(default_factory=GRPOConfig)
    drift: DriftConfig = field(default_factory=DriftConfig)
    toggles: DriftToggle = field(default_factory=DriftToggle)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError('epochs must be >= 0')
        if self.run_seed < 0:
            raise ValueError('run_seed must be >= 0')

    def prompts(self, landscape=None):
        """Prompt embeddings for every prompt id of the landscape."""
        landscape = landscape or self.landscape.build()
        ids = sorted(landscape.active_modes)
        if ids != list(range(len(ids))):
            raise ValueError('landscape prompt ids must be 0..n-1')
        return make_prompts(len(ids), self.policy.prompt_dim, derive_seed(self.run_seed, PROMPT_STREAM))

    def with_seed(self, seed):
        """Same config, another run seed."""
        return replace(self, run_seed=int(seed))

    def to_dict(self):
        """Fully resolved document, defaults included."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        """Parse a config document."""
        data = dict(data or {})
        sections = dict(
            policy=PolicyConfig, landscape=LandscapeConfig, grpo=GRPOConfig,
            drift=DriftConfig, toggles=DriftToggle, evaluation=EvalConfig
        )
        parsed = {
            name: _from_dict(section, data.pop(name, None), name)
            for name, section in sections.items()
        }
        return _from_dict(cls, dict(data, **parsed), 'experiment')

    @classmethod
    def load(cls, path):
        """Parse a config file."""
        LOGGER.info("loading config from %s", path)
        return cls.from_dict(load_json(path))


def preset(name):
    """Named starting configurations."""
    if name == LANDSCAPE_DEFAULT:
        return ExperimentConfig()
    if name == LANDSCAPE_FOUR_PEAKS:
        return ExperimentConfig(
            name=LANDSCAPE_FOUR_PEAKS,
            policy=PolicyConfig(noise_schedule=NOISE_COSINE),
            landscape=LandscapeConfig(kind=LANDSCAPE_FOUR_PEAKS, num_prompts=1),
            evaluation=EvalConfig(num_eval_prompts=1, samples_per_prompt=256)
        )
    raise ValueError('unknown preset: {}'.format(name))
