"""DRIFT lab API."""

import logging
import os
import time

from driftlab import experiment, theory
from driftlab.config import ExperimentConfig, preset
from driftlab.encoders import SLOT_DREAMSIM, factory
from driftlab.metrics import metric_report, reference_bandwidth
from driftlab.serialize import save_policy
from driftlab.util import read_vectors, run_path, save_json

LOGGER = logging.getLogger(__name__)
VERIFY_FILE = 'verify.json'
METRICS_FILE = 'metrics.json'
COMPARE_FILE = 'compare.json'


class API:
    """DRIFT lab API."""

    def __init__(self, out_path, config_path=None, seed=None):
        """Resolve the effective config."""
        self.out_path = out_path
        self.config = ExperimentConfig.load(config_path) if config_path else preset('default')
        if seed is not None:
            self.config = self.config.with_seed(seed)
        LOGGER.info("using config '%s' with seed %d, writing to %s",
                    self.config.name, self.config.run_seed, out_path)

    def pretrain(self):
        """Pretrain and store the policy."""
        policy = experiment.pretrain_policy(self.config)
        path = os.path.join(run_path(self.out_path), '{}-{}-pretrained.json'.format(
            self.config.name, self.config.run_seed))
        save_policy(policy, path)
        return policy, path

    def train(self):
        """Full run; raises TrainingAborted after writing the last good checkpoint."""
        return experiment.run_experiment(self.config, self.out_path)

    def verify(self):
        """Theory suite report."""
        report = theory.run_verification_suite(self.config.run_seed)
        save_json(report, os.path.join(run_path(self.out_path), VERIFY_FILE))
        return report

    def metrics(self, generated_path, reference_path):
        """Diversity metrics of bucketed sample files."""
        start = time.time()
        generated = read_vectors(generated_path)
        reference = read_vectors(reference_path)
        if len(generated) != len(reference):
            raise ValueError('generated has {} prompt buckets, reference has {}'.format(
                len(generated), len(reference)))
        evaluation = self.config.evaluation
        encoders = factory(evaluation.dreamsim_style, evaluation.clip_style)
        bandwidth = evaluation.kernel_bandwidth
        if bandwidth is None:
            bandwidth = reference_bandwidth(reference, encoders[SLOT_DREAMSIM])
        report = metric_report(generated, reference, encoders, evaluation.recall_k, bandwidth)
        save_json(report, os.path.join(run_path(self.out_path), METRICS_FILE))
        LOGGER.info("computed metrics over %d buckets in %.2f seconds", len(generated), time.time() - start)
        return report

    def compare(self, run_dirs, reference_axis):
        """Gain report across runs."""
        report = experiment.compare_runs(run_dirs, reference_axis)
        save_json(report, os.path.join(run_path(self.out_path), COMPARE_FILE))
        return report
