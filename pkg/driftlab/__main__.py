"""CLI for the DRIFT lab."""
import argparse
import json
import logging
import os
import sys

import coloredlogs
from driftlab.api import API
from driftlab.experiment import AXIS_DIVERSITY, AXIS_REWARD
from driftlab.grpo import TrainingAborted


CMD_PRETRAIN = 'pretrain'
CMD_TRAIN = 'train'
CMD_VERIFY = 'verify'
CMD_METRICS = 'metrics'
CMD_COMPARE = 'compare'
DEFAULT_OUT = './runs'
EXIT_OK = 0
EXIT_VERIFY_FAILED = 2
EXIT_ABORTED = 3


def main(args):
    """Handle arguments; returns the exit code."""

    lab = API(args.out, args.config, args.seed)

    # Pretrain
    if args.cmd == CMD_PRETRAIN:
        lab.pretrain()

    # Train
    elif args.cmd == CMD_TRAIN:
        try:
            lab.train()
        except TrainingAborted as error:
            logging.getLogger(__name__).error("aborted: %s", error)
            return EXIT_ABORTED

    # Verify
    elif args.cmd == CMD_VERIFY:
        report = lab.verify()
        print(json.dumps(report, indent=2, sort_keys=True))
        if not report['passed']:
            return EXIT_VERIFY_FAILED

    # Metrics
    elif args.cmd == CMD_METRICS:
        print(json.dumps(lab.metrics(args.generated, args.reference), indent=2, sort_keys=True))

    # Compare
    elif args.cmd == CMD_COMPARE:
        print(json.dumps(lab.compare(args.run_dir, args.axis), indent=2, sort_keys=True))

    return EXIT_OK


def setup():
    """Setup CLI."""
    coloredlogs.install(
        level='INFO',
        fmt='%(asctime)s [%(process)d]%(name)s %(levelname)s %(message)s'
    )

    parser = argparse.ArgumentParser()
    seed = os.environ.get('DRIFTLAB_SEED')

    # Global options
    parser.add_argument('-c', '--config', default=os.environ.get('DRIFTLAB_CONFIG'))
    parser.add_argument('-s', '--seed', type=int, default=int(seed) if seed else None)
    parser.add_argument('-o', '--out', default=os.environ.get('DRIFTLAB_OUT', DEFAULT_OUT))

    # Commands
    subparsers = parser.add_subparsers(dest='cmd')
    subparsers.required = True
    subparsers.add_parser(CMD_PRETRAIN)
    subparsers.add_parser(CMD_TRAIN)
    subparsers.add_parser(CMD_VERIFY)

    # "metrics" command
    metrics = subparsers.add_parser(CMD_METRICS)
    metrics.add_argument('generated')
    metrics.add_argument('reference')

    # "compare" command
    compare = subparsers.add_parser(CMD_COMPARE)
    compare.add_argument('-a', '--axis', choices=[AXIS_REWARD, AXIS_DIVERSITY], default=AXIS_REWARD)
    compare.add_argument('run_dir', nargs='+')

    args = parser.parse_args()
    sys.exit(main(args))


if __name__ == '__main__':
    setup()
