import argparse
import logging
import sys

from src import __version__
from src.conf.config import configure_logging
from src.exceptions import HedgeLabError, TrainingDivergedError
from src.routes import evaluation, explanations, sweeps, training

logger = logging.getLogger('mvh-hedge')

EXIT_ERROR = 2
EXIT_DIVERGED = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='mvh-hedge', description='Train, evaluate and explain hedging agents')
    parser.add_argument('--log-level', help='overrides HEDGE_LOG_LEVEL')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    subparsers = parser.add_subparsers(dest='command', required=True)
    training.register(subparsers)
    evaluation.register(subparsers)
    sweeps.register(subparsers)
    explanations.register(subparsers)
    return parser


def main(argv: list[str] | None = None) -> int:
    """
    The main function parses the command line and dispatches to the subcommand handler.

    :param argv: list[str] | None: Arguments, defaults to sys.argv[1:]
    :return: Process exit code
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        args.handler(args)
    except TrainingDivergedError as err:
        logger.error("%s", err)
        return EXIT_DIVERGED
    except HedgeLabError as err:
        logger.error("%s", err)
        return EXIT_ERROR
    return 0


if __name__ == '__main__':
    sys.exit(main())
