import json
import os
import tempfile
import unittest

import numpy as np

from driftlab import experiment
from driftlab.api import API, COMPARE_FILE, METRICS_FILE
from driftlab.util import load_json, make_rng, write_csv, write_vectors


class TestAPI(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = os.path.join(self.tmp.name, 'out')

    def tearDown(self):
        self.tmp.cleanup()

    def test_config_and_seed(self):
        path = os.path.join(self.tmp.name, 'config.json')
        with open(path, 'w') as handle:
            json.dump({'name': 'custom', 'run_seed': 2}, handle)
        self.assertEqual(API(self.out, path).config.run_seed, 2)
        lab = API(self.out, path, seed=5)
        self.assertEqual(lab.config.run_seed, 5)
        self.assertEqual(lab.config.name, 'custom')
        self.assertEqual(API(self.out).config.name, 'drift')

    def test_metrics(self):
        rng = make_rng(1)
        buckets = [rng.standard_normal((20, 2)) for _ in range(2)]
        generated = write_vectors(os.path.join(self.tmp.name, 'generated.txt'), buckets)
        reference = write_vectors(os.path.join(self.tmp.name, 'reference.txt'), buckets)
        report = API(self.out).metrics(generated, reference)
        self.assertEqual(report['recall'], 1.0)
        self.assertEqual(load_json(os.path.join(self.out, METRICS_FILE)), report)

    def test_metrics_bucket_mismatch(self):
        rng = make_rng(2)
        generated = write_vectors(os.path.join(self.tmp.name, 'generated.txt'),
                                  [rng.standard_normal((20, 2)) for _ in range(2)])
        reference = write_vectors(os.path.join(self.tmp.name, 'reference.txt'), [rng.standard_normal((20, 2))])
        with self.assertRaises(ValueError):
            API(self.out).metrics(generated, reference)

    def test_compare(self):
        runs = []
        for name in ('baseline', 'candidate'):
            run_dir = os.path.join(self.tmp.name, name)
            os.makedirs(run_dir)
            row = dict(checkpoint_epoch=0, mean_reward=0.5, dreamsim_style_diversity=1.0,
                       clip_style_diversity=1.0, recall=1.0, vendi=2.0)
            write_csv(os.path.join(run_dir, experiment.PARETO_FILE), experiment.PARETO_HEADER, [row])
            runs.append(run_dir)
        report = API(self.out).compare(runs, experiment.AXIS_REWARD)
        self.assertEqual(report['comparisons'][0]['status'], experiment.STATUS_OK)
        self.assertTrue(os.path.exists(os.path.join(self.out, COMPARE_FILE)))
        np.testing.assert_equal(report['comparisons'][0]['gains']['vendi']['gain'], 0.0)
