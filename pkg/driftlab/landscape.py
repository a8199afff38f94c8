"""Analytic multimodal reward landscapes."""
from dataclasses import dataclass

import numpy as np


DEFAULT_MODE_CENTERS = (
    (2.0, 2.0), (-2.0, 2.0), (-2.0, -2.0), (2.0, -2.0), (0.0, 3.0), (0.0, -3.0)
)
DEFAULT_ACTIVE_MODES = {0: (0, 1, 2, 3), 1: (0, 2), 2: (1, 3, 4), 3: (2, 3, 5)}
DEFAULT_MODE_WIDTH = 0.5


@dataclass
class RewardLandscape:
    """Equal-height Gaussian peaks; each prompt activates a subset."""
    mode_centers: np.ndarray
    mode_width: float
    active_modes: dict

    def __post_init__(self):
        self.mode_centers = np.atleast_2d(np.asarray(self.mode_centers, dtype=float))
        self.active_modes = {int(k): tuple(int(m) for m in v) for k, v in self.active_modes.items()}
        if self.mode_width <= 0:
            raise ValueError('mode_width must be positive')
        for prompt_id, modes in self.active_modes.items():
            if not modes:
                raise ValueError('prompt {} has no active mode'.format(prompt_id))
            if min(modes) < 0 or max(modes) >= len(self.mode_centers):
                raise ValueError('prompt {} activates an unknown mode'.format(prompt_id))

    @property
    def dim(self):
        """Sample dimension."""
        return self.mode_centers.shape[1]

    def centers(self, prompt_id):
        """Active mode centers for a prompt."""
        try:
            return self.mode_centers[list(self.active_modes[prompt_id])]
        except KeyError:
            raise ValueError('no active modes for prompt {}'.format(prompt_id))

    def to_dict(self):
        """Serialize."""
        return dict(
            mode_centers=self.mode_centers.tolist(),
            mode_width=self.mode_width,
            active_modes={str(k): list(v) for k, v in sorted(self.active_modes.items())}
        )

    @classmethod
    def from_dict(cls, data):
        """Deserialize."""
        return cls(data['mode_centers'], float(data['mode_width']), data['active_modes'])


def default_landscape():
    """Six fixed modes, four prompts activating two to four modes each."""
    return RewardLandscape(np.array(DEFAULT_MODE_CENTERS), DEFAULT_MODE_WIDTH, DEFAULT_ACTIVE_MODES)


def four_peaks(num_prompts=4, spread=2.0, mode_width=DEFAULT_MODE_WIDTH):
    """Four symmetric equal peaks at (+-spread, +-spread), all active."""
    centers = [(spread, spread), (-spread, spread), (-spread, -spread), (spread, -spread)]
    return RewardLandscape(np.array(centers), mode_width, {p: (0, 1, 2, 3) for p in range(num_prompts)})


def evaluate_reward(landscape, x0, prompt):
    """Terminal reward: max over active modes of exp(-|x0 - c|^2 / 2w^2)."""
    x0 = np.asarray(x0, dtype=float)
    sq = np.sum((landscape.centers(prompt.prompt_id) - x0) ** 2, axis=-1)
    return float(np.exp(-np.min(sq) / (2 * landscape.mode_width ** 2)))


def nearest_mode(landscape, samples, prompt_id):
    """Index (into the active list) of the nearest active mode per sample."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    centers = landscape.centers(prompt_id)
    sq = np.sum((samples[:, None, :] - centers[None, :, :]) ** 2, axis=-1)
    return np.argmin(sq, axis=1)


def mode_occupancy(landscape, samples, prompt):
    """Fraction of samples assigned to each active mode (nearest center)."""
    count = len(landscape.active_modes[prompt.prompt_id])
    assigned = nearest_mode(landscape, samples, prompt.prompt_id)
    return np.bincount(assigned, minlength=count) / float(len(assigned))
