"""Diversity metrics over encoder embeddings."""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh
from scipy.spatial.distance import cdist

from driftlab.encoders import SLOT_CLIP, SLOT_DREAMSIM, IdentityEncoder


LOGGER = logging.getLogger(__name__)
KERNEL_RBF = 'rbf'
KERNEL_LINEAR = 'linear'
KERNEL_IDENTITY = 'identity'
EIGEN_RTOL = 1e-10
DEFAULT_RECALL_K = 10


@dataclass
class DiversityMatrix:
    """Pairwise squared embedding distances and per-sample averages."""
    pairwise: np.ndarray
    per_sample: np.ndarray


def _encode(samples, encoder):
    encoder = encoder or IdentityEncoder()
    return encoder(samples)


def pairwise_diversity(samples, encoder=None):
    """d(x_i, x_j) = |E(x_i) - E(x_j)|^2 and d(x_i) = mean over j != i."""
    embedded = _encode(samples, encoder)
    count = len(embedded)
    if count < 2:
        raise ValueError('pairwise diversity needs at least 2 samples, got {}'.format(count))
    pairwise = cdist(embedded, embedded, 'sqeuclidean')
    pairwise = 0.5 * (pairwise + pairwise.T)
    np.fill_diagonal(pairwise, 0.0)
    per_sample = pairwise.sum(axis=1) / (count - 1)
    return DiversityMatrix(pairwise, per_sample)


def set_diversity(samples_per_prompt, encoder=None):
    """Mean over prompts of 2/(G(G-1)) * sum_{i<j} |E(o_i) - E(o_j)|^2."""
    sizes = {len(bucket) for bucket in samples_per_prompt}
    if not sizes:
        raise ValueError('no prompt buckets')
    if len(sizes) > 1:
        raise ValueError('ragged prompt buckets: sizes {}'.format(sorted(sizes)))
    count = sizes.pop()
    values = []
    for bucket in samples_per_prompt:
        matrix = pairwise_diversity(bucket, encoder)
        values.append(matrix.pairwise.sum() / (count * (count - 1)))
    return float(np.mean(values))


def clip_style_diversity(samples_per_prompt, encoder=None):
    """Same estimator as set_diversity, evaluated in the second encoder slot."""
    return set_diversity(samples_per_prompt, encoder)


def knn_radii(points, k):
    """Distance from each point to its k-th nearest neighbour (self excluded)."""
    dist = cdist(points, points)
    return np.partition(dist, k, axis=1)[:, k]


def generalized_recall(reference_set, generated_set, k=DEFAULT_RECALL_K, encoder=None):
    """Fraction of reference points inside the generated kNN manifold.

    The manifold is the union of closed balls around each generated point
    with radius equal to its k-th nearest-neighbour distance.
    """
    reference = _encode(reference_set, encoder)
    generated = _encode(generated_set, encoder)
    if len(reference) <= k or len(generated) <= k:
        raise ValueError('both sets must be larger than k={}'.format(k))
    radii = knn_radii(generated, k)
    dist = cdist(reference, generated)
    return float(np.mean(np.any(dist <= radii[None, :], axis=1)))


def median_bandwidth(embedded):
    """Median pairwise distance, 1.0 when degenerate."""
    dist = cdist(embedded, embedded)
    upper = dist[np.triu_indices(len(embedded), k=1)]
    if not upper.size or np.median(upper) <= 0:
        return 1.0
    return float(np.median(upper))


def reference_bandwidth(reference, encoder=None):
    """Median bandwidth over every bucket of a reference set, pooled."""
    return median_bandwidth(_encode(np.concatenate([np.asarray(b, dtype=float) for b in reference]), encoder))


def kernel_matrix(embedded, kernel=KERNEL_RBF, bandwidth=None):
    """Similarity matrix with unit diagonal."""
    if kernel == KERNEL_RBF:
        if bandwidth is None:
            bandwidth = median_bandwidth(embedded)
        if bandwidth <= 0:
            raise ValueError('kernel bandwidth must be positive')
        return np.exp(-cdist(embedded, embedded, 'sqeuclidean') / (2 * bandwidth ** 2))
    if kernel == KERNEL_LINEAR:
        norms = np.linalg.norm(embedded, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError('linear kernel needs non-zero embeddings')
        unit = embedded / norms
        return unit @ unit.T
    if kernel == KERNEL_IDENTITY:
        return np.eye(len(embedded))
    raise ValueError('unknown kernel: {}'.format(kernel))


def vendi_score(samples, encoder=None, kernel_bandwidth=None, kernel=KERNEL_RBF):
    """exp of the Shannon entropy of the eigenvalues of K / n."""
    embedded = _encode(samples, encoder)
    count = len(embedded)
    if count < 1:
        raise ValueError('vendi score needs at least one sample')
    eigenvalues = eigh(kernel_matrix(embedded, kernel, kernel_bandwidth) / count, eigvals_only=True)
    eigenvalues = np.where(eigenvalues > EIGEN_RTOL * np.max(eigenvalues), eigenvalues, 0.0)
    probs = eigenvalues / eigenvalues.sum()
    probs = probs[probs > 0]
    return float(np.exp(-np.sum(probs * np.log(probs))))


def metric_report(generated, reference, encoders, k=DEFAULT_RECALL_K, kernel_bandwidth=None):
    """All four diversity metrics over per-prompt buckets."""
    recall = [
        generalized_recall(ref, gen, k, encoders[SLOT_DREAMSIM])
        for ref, gen in zip(reference, generated)
    ]
    vendi = [vendi_score(gen, encoders[SLOT_DREAMSIM], kernel_bandwidth) for gen in generated]
    return dict(
        dreamsim_style=set_diversity(generated, encoders[SLOT_DREAMSIM]),
        clip_style=clip_style_diversity(generated, encoders[SLOT_CLIP]),
        recall=float(np.mean(recall)),
        vendi=float(np.mean(vendi))
    )
