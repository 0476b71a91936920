#!/usr/bin/env python
"""
End-user command line tool for running allocation experiments and
inspecting problem instances
"""

import argparse
import functools
import importlib
import logging
import sys

from bamc import __version__
from bamc.common import BamcError, ConfigError, InstanceFileError

logger = logging.getLogger(__name__)

DESCRIPTION = """Learn the transition matrices of several Markov chains
from one budgeted stream of observations, with the command line utility
``bamc``. Run ``bamc --help`` to see which subcommands are supported."""

EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3

# Subcommand name -> module providing fill_parser() and <subcommand>_main()
SUBCOMMAND_MODULES = {
    "run": "experiment",
    "analyze": "chains",
    "validate": "instancefiles",
}


def get_parser():
    """Make the argparse parser with one subparser per subcommand"""
    parser = argparse.ArgumentParser(
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        description=DESCRIPTION,
    )
    parser.add_argument(
        "--version",
        action="version",
        version="%(prog)s {version}".format(version=__version__),
    )
    subparsers = parser.add_subparsers(
        required=True, dest="subcommand", parser_class=argparse.ArgumentParser
    )

    subparsers_dict = {}
    subparsers_dict["run"] = subparsers.add_parser(
        "run",
        help="Run a replicated allocation experiment",
        description=(
            "Run every policy for every budget and replication of an experiment "
            "configuration. Writes runs.csv with one row per run, summary.json "
            "with per-cell aggregates and loss bounds, and curves.csv in long "
            "format for plotting."
        ),
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    subparsers_dict["analyze"] = subparsers.add_parser(
        "analyze",
        help="Print instance quantities",
        description=(
            "Each row contains the Gini mass, optimal sampling fraction, "
            "stationary and mixing quantities of one chain, and the budget "
            "cutoff of the refined loss bound."
        ),
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    subparsers_dict["validate"] = subparsers.add_parser(
        "validate",
        help="Validate an instance file",
        description=(
            "Check that an instance file holds row-stochastic, ergodic chains "
            "on a common state space. Problems are reported with line numbers."
        ),
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )

    for subcommand, subparser in subparsers_dict.items():
        # Use the module's fill_parser() to add the subcommand specific
        # arguments:
        module = importlib.import_module("bamc." + SUBCOMMAND_MODULES[subcommand])
        module.fill_parser(subparser)

        # Tell argparse which main() function to use for each subparser:
        subparser.set_defaults(
            func=functools.partial(run_subparser_main, subcommand=subcommand)
        )

    return parser


def run_subparser_main(args, subcommand=None):
    """Dispatch to <subcommand>_main() in the module implementing it

    Args:
        args (Namespace): argparse argument namespace
        subcommand (str): One of the keys of SUBCOMMAND_MODULES
    """
    assert subcommand is not None
    mod = importlib.import_module("bamc." + SUBCOMMAND_MODULES[subcommand])
    main_func = getattr(mod, subcommand + "_main")
    main_func(args)


def main():
    """Parse sys.argv and run the subcommand.

    Exits with code 2 on configuration or instance file errors (and on
    usage errors, through argparse) and with code 3 on other failures.
    """
    parser = get_parser()
    args = parser.parse_args()
    try:
        args.func(args)
    except (ConfigError, InstanceFileError) as err:
        logger.critical("%s", err)
        sys.exit(EXIT_CONFIG_ERROR)
    except (BamcError, OSError) as err:
        logger.critical("%s", err)
        sys.exit(EXIT_RUNTIME_ERROR)


if __name__ == "__main__":
    main()
