import os
import tempfile
import unittest

import numpy as np

from driftlab import serialize
from driftlab.mdp import DenoisingMDPSpec, random_mdp
from driftlab.policy import SHARED, GaussianChainPolicy
from driftlab.util import make_rng, save_json


def sample_policy():
    spec = DenoisingMDPSpec(horizon=2, prompt_dim=3)
    policy = GaussianChainPolicy(spec, mean_family=SHARED, num_fourier_features=5, feature_seed=2,
                                 metadata={'pretrain_steps': 3})
    return policy.with_params(make_rng(1).standard_normal(policy.params.shape))


class TestSerialize(unittest.TestCase):

    def test_policy_file(self):
        policy = sample_policy()
        with tempfile.TemporaryDirectory() as tmp:
            path = serialize.save_policy(policy, os.path.join(tmp, 'policy.json'))
            loaded = serialize.read_policy(path)
        np.testing.assert_array_equal(loaded.params, policy.params)
        np.testing.assert_array_equal(loaded.noise_scales, policy.noise_scales)
        self.assertEqual(loaded.mean_family, SHARED)
        self.assertEqual(loaded.metadata, {'pretrain_steps': 3})
        x = np.array([0.3, -0.2])
        np.testing.assert_array_equal(loaded.mean(x, np.ones(3), 1), policy.mean(x, np.ones(3), 1))

    def test_mdp_file(self):
        mdp = random_mdp(4, 2, 0.9, make_rng(2), num_terminal=1)
        with tempfile.TemporaryDirectory() as tmp:
            path = save_json(serialize.dump_mdp(mdp), os.path.join(tmp, 'mdp.json'))
            loaded = serialize.read_mdp(path)
        np.testing.assert_array_equal(loaded.transition, mdp.transition)
        np.testing.assert_array_equal(loaded.terminal_mask, mdp.terminal_mask)

    def test_header(self):
        document = serialize.dump_policy(sample_policy())
        self.assertEqual(document['revision'], serialize.REVISION)
        self.assertEqual(document['kind'], serialize.KIND_POLICY)

    def test_newer_revision(self):
        document = dict(serialize.dump_policy(sample_policy()), revision=serialize.REVISION + 1)
        with self.assertRaises(ValueError):
            serialize.load_policy(document)

    def test_missing_revision(self):
        document = serialize.dump_policy(sample_policy())
        del document['revision']
        with self.assertRaises(ValueError):
            serialize.load_policy(document)

    def test_wrong_kind(self):
        with self.assertRaises(ValueError):
            serialize.load_mdp(serialize.dump_policy(sample_policy()))

    def test_declared_dimensions(self):
        document = serialize.dump_mdp(random_mdp(3, 2, 0.5, make_rng(3)))
        document['num_states'] = 4
        with self.assertRaises(ValueError):
            serialize.load_mdp(document)
