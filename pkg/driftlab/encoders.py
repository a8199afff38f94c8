"""Encoder interface."""
import logging

import numpy as np

from driftlab.util import derive_seed, load_json, make_rng


LOGGER = logging.getLogger(__name__)
KIND_IDENTITY = 'identity'
KIND_RANDOM_PROJECTION = 'random_projection'
KIND_EXTERNAL_TABLE = 'external_table'
SLOT_DREAMSIM = 'dreamsim_style'
SLOT_CLIP = 'clip_style'
TABLE_TOLERANCE = 1e-9


class Encoder():
    """Encoder abstract class.

    All encoders used by the diversity metrics must conform to this interface.
    """

    kind = None

    def encode(self, samples):
        """Embed a batch of samples (rows)."""
        raise NotImplementedError()

    def output_dim(self, input_dim):
        """Embedding dimension for a given input dimension."""
        raise NotImplementedError()

    def to_dict(self):
        """Serialize."""
        return dict(kind=self.kind)

    def __call__(self, samples):
        embedded = self.encode(np.atleast_2d(np.asarray(samples, dtype=float)))
        if not np.all(np.isfinite(embedded)):
            raise ValueError('non-finite embeddings')
        return embedded


class IdentityEncoder(Encoder):
    """E(x) = x."""

    kind = KIND_IDENTITY

    def encode(self, samples):
        """Embed."""
        return samples

    def output_dim(self, input_dim):
        """Same dimension."""
        return input_dim


class RandomProjectionEncoder(Encoder):
    """Fixed Gaussian projection R^d -> R^dim, determined by seed."""

    kind = KIND_RANDOM_PROJECTION

    def __init__(self, dim, seed=0):
        """Initialize."""
        if dim < 1:
            raise ValueError('projection dim must be >= 1')
        self.dim = int(dim)
        self.seed = int(seed)
        self._matrices = {}

    def matrix(self, input_dim):
        """Projection matrix for an input dimension."""
        if input_dim not in self._matrices:
            rng = make_rng(derive_seed(self.seed, input_dim, self.dim))
            self._matrices[input_dim] = rng.standard_normal((input_dim, self.dim)) / np.sqrt(self.dim)
        return self._matrices[input_dim]

    def encode(self, samples):
        """Embed."""
        return samples @ self.matrix(samples.shape[1])

    def output_dim(self, input_dim):
        """Projection dimension."""
        return self.dim

    def to_dict(self):
        """Serialize."""
        return dict(kind=self.kind, dim=self.dim, seed=self.seed)


class TableEncoder(Encoder):
    """Precomputed embeddings looked up by exact input match."""

    kind = KIND_EXTERNAL_TABLE

    def __init__(self, inputs, embeddings, path=None):
        """Initialize."""
        self.inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        self.embeddings = np.atleast_2d(np.asarray(embeddings, dtype=float))
        self.path = path
        if len(self.inputs) != len(self.embeddings):
            raise ValueError('table has {} inputs but {} embeddings'.format(
                len(self.inputs), len(self.embeddings)))

    @classmethod
    def from_file(cls, path):
        """Load a JSON table {"inputs": [...], "embeddings": [...]}."""
        data = load_json(path)
        LOGGER.info("loaded %d embeddings from %s", len(data['inputs']), path)
        return cls(data['inputs'], data['embeddings'], path)

    def encode(self, samples):
        """Embed."""
        rows = []
        for sample in samples:
            dist = np.max(np.abs(self.inputs - sample), axis=1)
            index = int(np.argmin(dist))
            if dist[index] > TABLE_TOLERANCE:
                raise KeyError('no embedding for sample {}'.format(sample.tolist()))
            rows.append(self.embeddings[index])
        return np.array(rows)

    def output_dim(self, input_dim):
        """Table embedding dimension."""
        return self.embeddings.shape[1]

    def to_dict(self):
        """Serialize."""
        return dict(kind=self.kind, path=self.path)


def build(config):
    """Build one encoder from its config."""
    kind = config.get('kind', KIND_IDENTITY)
    if kind == KIND_IDENTITY:
        return IdentityEncoder()
    if kind == KIND_RANDOM_PROJECTION:
        return RandomProjectionEncoder(config['dim'], config.get('seed', 0))
    if kind == KIND_EXTERNAL_TABLE:
        return TableEncoder.from_file(config['path'])
    raise ValueError('unknown encoder kind: {}'.format(kind))


def factory(dreamsim_style=None, clip_style=None):
    """Encoder factory.

    Produce an encoder for both metric slots.
    """
    return {
        SLOT_DREAMSIM: build(dreamsim_style or {'kind': KIND_IDENTITY}),
        SLOT_CLIP: build(clip_style or {'kind': KIND_RANDOM_PROJECTION, 'dim': 2, 'seed': 0})
    }
