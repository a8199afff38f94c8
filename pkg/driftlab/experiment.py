"""Seeded experiment orchestration: pretrain, fine-tune, evaluate, compare."""
import logging
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from driftlab.encoders import SLOT_CLIP, SLOT_DREAMSIM, factory
from driftlab.grpo import EPOCH_HEADER, AdamW, TrainingAborted, train_epoch
from driftlab.landscape import mode_occupancy
from driftlab.mechanisms import PromptNoise, embedding_stats
from driftlab.metrics import metric_report, reference_bandwidth
from driftlab.policy import STATUS_COVERED, pretrain, sample_terminals
from driftlab.serialize import save_policy
from driftlab.util import derive_seed, read_csv, run_path, save_json, write_csv


LOGGER = logging.getLogger(__name__)
PRETRAIN_STREAM = 1
TRAIN_STREAM = 2
EVAL_STREAM = 3
EPOCHS_FILE = 'epochs.csv'
PARETO_FILE = 'pareto.csv'
POLICY_FILE = 'final_policy.json'
PRETRAINED_FILE = 'pretrained_policy.json'
ECHO_FILE = 'config_echo.json'
SUMMARY_FILE = 'summary.json'
PARETO_HEADER = [
    'checkpoint_epoch', 'mean_reward', 'dreamsim_style_diversity',
    'clip_style_diversity', 'recall', 'vendi'
]
DIVERSITY_COLUMNS = PARETO_HEADER[2:]
AXIS_REWARD = 'reward'
AXIS_DIVERSITY = 'diversity'
REWARD_MATCH_TOLERANCE = 0.02
STATUS_OK = 'ok'
STATUS_NO_OVERLAP = 'no overlap'
STATUS_ZERO_BASELINE = 'zero baseline'


@dataclass
class ParetoRecord:
    """Reward and diversity of one evaluation checkpoint."""
    checkpoint_epoch: int
    mean_reward: float
    dreamsim_style_diversity: float
    clip_style_diversity: float
    recall: float
    vendi: float

    def __post_init__(self):
        values = [getattr(self, name) for name in PARETO_HEADER[1:]]
        if not np.all(np.isfinite(values)):
            raise ValueError('non-finite pareto record at epoch {}'.format(self.checkpoint_epoch))

    def to_row(self):
        """Row keyed by the CSV header."""
        return asdict(self)


@dataclass
class Evaluation:
    """A checkpoint's record plus its per-prompt mode occupancy."""
    record: ParetoRecord
    occupancy: dict


class Evaluator:
    """Fixed evaluation protocol: same prompts, seeds and reference for every checkpoint."""

    def __init__(self, reference_policy, landscape, prompts, eval_config, seed, conditioner=None): # pylint: disable=too-many-arguments
        """Sample the reference set once and fix the Vendi bandwidth on it."""
        self.landscape = landscape
        self.prompts = prompts[:eval_config.num_eval_prompts]
        self.config = eval_config
        self.seed = seed
        self.conditioner = conditioner
        self.encoders = factory(eval_config.dreamsim_style, eval_config.clip_style)
        self.reference = [self.sample(reference_policy, p)[0] for p in self.prompts]
        self.bandwidth = eval_config.kernel_bandwidth
        if self.bandwidth is None:
            self.bandwidth = reference_bandwidth(self.reference, self.encoders[SLOT_DREAMSIM])
        LOGGER.debug("vendi bandwidth %.4f", self.bandwidth)

    def sample(self, policy, prompt):
        """Terminal samples and rewards for one prompt."""
        return sample_terminals(policy, prompt, self.config.samples_per_prompt, self.seed,
                                self.landscape, self.conditioner)

    def __call__(self, policy, epoch):
        start = time.time()
        generated, rewards, occupancy = [], [], {}
        for prompt in self.prompts:
            samples, prompt_rewards = self.sample(policy, prompt)
            generated.append(samples)
            rewards.append(prompt_rewards)
            occupancy[str(prompt.prompt_id)] = mode_occupancy(self.landscape, samples, prompt).tolist()
        report = metric_report(generated, self.reference, self.encoders, self.config.recall_k, self.bandwidth)
        record = ParetoRecord(
            checkpoint_epoch=epoch,
            mean_reward=float(np.mean(np.concatenate(rewards))),
            dreamsim_style_diversity=report[SLOT_DREAMSIM],
            clip_style_diversity=report[SLOT_CLIP],
            recall=report['recall'],
            vendi=report['vendi']
        )
        LOGGER.info("[e:%d] reward %.4f, diversity %.4f, vendi %.3f, recall %.3f (%.2f seconds)",
                    epoch, record.mean_reward, record.dreamsim_style_diversity, record.vendi,
                    record.recall, time.time() - start)
        return Evaluation(record, occupancy)


def pretrain_policy(config, landscape=None, prompts=None):
    """Pretrained policy for a config."""
    landscape = landscape or config.landscape.build()
    prompts = prompts or config.prompts(landscape)
    return pretrain(config.policy.build(), landscape, config.policy.pretrain_steps,
                    derive_seed(config.run_seed, PRETRAIN_STREAM), prompts)


def _write_run(run_dir, config, epoch_stats, evaluations, policy, pretrained, aborted_at=None):
    """Write every artifact of a run."""
    write_csv(os.path.join(run_dir, EPOCHS_FILE), EPOCH_HEADER, [s.to_row() for s in epoch_stats])
    write_csv(os.path.join(run_dir, PARETO_FILE), PARETO_HEADER, [e.record.to_row() for e in evaluations])
    save_policy(policy, os.path.join(run_dir, POLICY_FILE))
    save_json(config.to_dict(), os.path.join(run_dir, ECHO_FILE))
    final = evaluations[-1]
    save_json(dict(
        name=config.name,
        run_seed=config.run_seed,
        epochs_completed=len(epoch_stats),
        aborted_at=aborted_at,
        drift=config.toggles.any_drift,
        final_record=final.record.to_row(),
        pareto_frontier_epochs=[r.checkpoint_epoch for r in pareto_frontier([e.record for e in evaluations])],
        mode_occupancy=final.occupancy,
        pretrain_status=pretrained.metadata.get('pretrain_status', STATUS_COVERED),
        pretrain_coverage=pretrained.metadata.get('coverage')
    ), os.path.join(run_dir, SUMMARY_FILE))


def run_experiment(config, out_path):
    """Pretrain, fine-tune and evaluate; returns the run directory.

    Every file written is a function of the config alone.
    """
    start = time.time()
    seed = config.run_seed
    run_dir = run_path(out_path, '{}-{}'.format(config.name, seed))
    LOGGER.info("[run:%s] starting %d epochs in %s (drift %s)",
                config.name, config.epochs, run_dir, config.toggles.any_drift)
    landscape = config.landscape.build()
    prompts = config.prompts(landscape)
    prompt_stats = embedding_stats(prompts)
    pretrained = pretrain_policy(config, landscape, prompts)
    save_policy(pretrained, os.path.join(run_dir, PRETRAINED_FILE))
    eval_noise = None
    if config.evaluation.prompt_noise:
        eval_noise = PromptNoise(config.drift, prompt_stats, pretrained.spec.horizon)
    evaluator = Evaluator(pretrained, landscape, prompts, config.evaluation,
                          derive_seed(seed, EVAL_STREAM), eval_noise)
    evaluations = [evaluator(pretrained, 0)]
    epoch_stats = []
    optimizer = AdamW.from_config(config.grpo)
    encoder = evaluator.encoders[SLOT_DREAMSIM]
    policy = pretrained
    for epoch in range(1, config.epochs + 1):
        try:
            policy, stats = train_epoch(
                policy, pretrained, prompts, landscape, config.grpo, derive_seed(seed, TRAIN_STREAM, epoch),
                mechanisms=config.toggles, drift_config=config.drift, optimizer=optimizer,
                encoder=encoder, discount_gamma=config.policy.discount_gamma,
                prompt_stats=prompt_stats, epoch=epoch
            )
        except TrainingAborted as error:
            LOGGER.error("[run:%s] training aborted at epoch %d, keeping last good checkpoint",
                         config.name, error.epoch)
            _write_run(run_dir, config, epoch_stats, evaluations, error.policy, pretrained, error.epoch)
            raise
        epoch_stats.append(stats)
        if epoch % config.evaluation.eval_every == 0 or epoch == config.epochs:
            evaluations.append(evaluator(policy, epoch))
    _write_run(run_dir, config, epoch_stats, evaluations, policy, pretrained)
    LOGGER.info("[run:%s] finished in %.2f seconds", config.name, time.time() - start)
    return run_dir


def pareto_frontier(records, metric='dreamsim_style_diversity'):
    """Records not dominated in (mean_reward, metric)."""
    frontier = []
    for record in records:
        dominated = any(
            other.mean_reward >= record.mean_reward and
            getattr(other, metric) >= getattr(record, metric) and
            (other.mean_reward > record.mean_reward or getattr(other, metric) > getattr(record, metric))
            for other in records
        )
        if not dominated:
            frontier.append(record)
    return frontier


def load_records(run_dir):
    """ParetoRecords of a run directory."""
    rows = read_csv(os.path.join(run_dir, PARETO_FILE))
    if not rows:
        raise ValueError('empty pareto file in {}'.format(run_dir))
    return [ParetoRecord(**{k: row[k] for k in PARETO_HEADER}) for row in rows]


def match_checkpoint(records, column, target, upper=None):
    """Checkpoint closest to target from above on column; latest on ties."""
    eligible = [
        r for r in records
        if getattr(r, column) >= target and (upper is None or getattr(r, column) <= upper)
    ]
    if not eligible:
        return None
    return min(eligible, key=lambda r: (getattr(r, column), -r.checkpoint_epoch))


def _gain(candidate, baseline):
    if baseline == 0:
        return None
    return 100.0 * (candidate - baseline) / abs(baseline)


def compare_pair(baseline, candidate, reference_axis, tolerance=REWARD_MATCH_TOLERANCE):
    """Gains of candidate records over the baseline's final checkpoint."""
    anchor = baseline[-1]
    gains = {}
    for metric in DIVERSITY_COLUMNS:
        if reference_axis == AXIS_REWARD:
            matched = match_checkpoint(candidate, 'mean_reward', anchor.mean_reward,
                                       anchor.mean_reward + tolerance)
            values = (getattr(matched, metric), getattr(anchor, metric)) if matched else None
        else:
            matched = match_checkpoint(candidate, metric, getattr(anchor, metric))
            values = (matched.mean_reward, anchor.mean_reward) if matched else None
        if matched is None:
            gains[metric] = dict(status=STATUS_NO_OVERLAP, gain=None, baseline_epoch=anchor.checkpoint_epoch)
            continue
        gain = _gain(*values)
        gains[metric] = dict(
            status=STATUS_OK if gain is not None else STATUS_ZERO_BASELINE,
            gain=gain,
            baseline_epoch=anchor.checkpoint_epoch,
            candidate_epoch=matched.checkpoint_epoch
        )
    return gains


def compare_runs(run_dirs, reference_axis=AXIS_REWARD, tolerance=REWARD_MATCH_TOLERANCE,
                 primary_metric='dreamsim_style_diversity'):
    """Diversity gain at equal reward (reward axis) or reward gain at equal diversity.

    The first run is the baseline. A candidate checkpoint must meet or
    exceed the baseline on the matching axis; nothing is extrapolated.
    """
    if len(run_dirs) < 2:
        raise ValueError('compare needs at least 2 runs')
    if reference_axis not in (AXIS_REWARD, AXIS_DIVERSITY):
        raise ValueError('unknown reference axis: {}'.format(reference_axis))
    baseline = load_records(run_dirs[0])
    comparisons = []
    for run_dir in run_dirs[1:]:
        gains = compare_pair(baseline, load_records(run_dir), reference_axis, tolerance)
        comparisons.append(dict(run=run_dir, status=gains[primary_metric]['status'], gains=gains))
        LOGGER.info("[compare] %s vs %s: %s %s", run_dir, run_dirs[0],
                    gains[primary_metric]['status'], gains[primary_metric]['gain'])
    label = 'diversity_gain' if reference_axis == AXIS_REWARD else 'reward_gain'
    return dict(baseline=run_dirs[0], reference_axis=reference_axis, gain=label,
                primary_metric=primary_metric, comparisons=comparisons)
