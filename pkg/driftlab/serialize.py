"""Read and write revision-stamped JSON documents.

Policies and tabular MDPs are stored as JSON with a `revision` field and a
`kind` tag. Documents written by a newer revision are refused.
"""
import logging
import time

from driftlab.mdp import TabularMDP
from driftlab.policy import GaussianChainPolicy
from driftlab.util import load_json, save_json


REVISION = 1
KIND_POLICY = 'gaussian_chain_policy'
KIND_MDP = 'tabular_mdp'
LOGGER = logging.getLogger(__name__)


def _check(document, kind):
    """Validate header fields."""
    revision = document.get('revision')
    if not isinstance(revision, int):
        raise ValueError('document has no revision')
    if revision > REVISION:
        raise ValueError('document revision {} is newer than supported revision {}'.format(revision, REVISION))
    if document.get('kind') != kind:
        raise ValueError('expected a {} document, got {}'.format(kind, document.get('kind')))


def dump_policy(policy):
    """Policy document."""
    return dict(policy.to_dict(), revision=REVISION, kind=KIND_POLICY)


def load_policy(document):
    """Policy from a document."""
    _check(document, KIND_POLICY)
    body = {k: v for k, v in document.items() if k not in ('revision', 'kind')}
    return GaussianChainPolicy.from_dict(body)


def dump_mdp(mdp):
    """MDP document."""
    return dict(mdp.to_dict(), revision=REVISION, kind=KIND_MDP)


def load_mdp(document):
    """MDP from a document."""
    _check(document, KIND_MDP)
    body = {k: v for k, v in document.items() if k not in ('revision', 'kind')}
    return TabularMDP.from_dict(body)


def save_policy(policy, path):
    """Write a policy file."""
    start = time.time()
    save_json(dump_policy(policy), path)
    LOGGER.info("saved %d parameters to %s in %.2f seconds, rev %d",
                policy.params.size, path, time.time() - start, REVISION)
    return path


def read_policy(path):
    """Read a policy file."""
    start = time.time()
    policy = load_policy(load_json(path))
    LOGGER.info("loaded policy from %s in %.2f seconds", path, time.time() - start)
    return policy


def read_mdp(path):
    """Read a tabular MDP file."""
    return load_mdp(load_json(path))
