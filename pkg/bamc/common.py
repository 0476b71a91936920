"""Common functions and the exception hierarchy for bamc modules"""

import sys
import signal
import logging

import numpy as np

logger = logging.getLogger(__name__)

# This is a magic filename that means read/write from/to stdout
# This makes it impossible to write to a file called "-" on disk
# but that would anyway create a lot of other problems in the shell.
MAGIC_STDOUT = "-"

# Absolute tolerance for row sums of transition matrices
ROWSUM_TOLERANCE = 1e-12


class BamcError(Exception):
    """Root of all errors raised by bamc"""


class NotStochastic(BamcError, ValueError):
    """A matrix has a negative entry or a row not summing to one.

    Args:
        message (str): Human readable description
        row (int): 0-based index of the offending row, if any
    """

    def __init__(self, message, row=None):
        self.row = row
        super().__init__(message)


class NotErgodic(BamcError, ValueError):
    """A transition matrix is reducible or periodic"""


class NoConvergence(BamcError, ValueError):
    """A numerical solve did not reach the requested tolerance"""


class NotReversible(BamcError, ValueError):
    """Detailed balance does not hold.

    This is a signal, callers are expected to fall back to the
    pseudo-spectral gap."""


class DegenerateInstance(BamcError, ValueError):
    """Some chain has zero total Gini index (deterministic transitions)"""


class NoSamples(BamcError, ValueError):
    """A chain has not been observed yet"""


class NotSampled(NoSamples):
    """An index was requested for a chain with no pulls"""


class InvalidConfig(BamcError, ValueError):
    """Confidence parameters out of range"""


class BudgetTooSmall(BamcError, ValueError):
    """The budget cannot accommodate the initialization phase"""


class GenerationFailed(BamcError, ValueError):
    """An instance generator exceeded its retry cap"""


class ConfigError(BamcError, ValueError):
    """Problems with an experiment configuration file"""


class ParseError(ConfigError):
    """A configuration file could not be parsed.

    Args:
        message (str): Human readable description
        location (str): Where in the file parsing failed, e.g. "line 3, column 5"
    """

    def __init__(self, message, location=None):
        self.location = location
        if location:
            message = f"{message} ({location})"
        super().__init__(message)


class SchemaError(ConfigError):
    """A configuration parsed but violates the schema.

    Args:
        field (str): Name of the offending field
        message (str): What is wrong with it
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class InstanceFileError(BamcError, ValueError):
    """An instance file is malformed or holds invalid chains.

    Args:
        message (str): Human readable description
        line (int): 1-based line number in the file, if known
    """

    def __init__(self, message, line=None, filename=None):
        self.line = line
        self.filename = filename
        prefix = str(filename) if filename else "instance"
        if line is not None:
            prefix += f":{line}"
        super().__init__(f"{prefix}: {message}")


class ExperimentFailed(BamcError, RuntimeError):
    """A replication cell failed. The cell is identified by policy,
    budget and seed."""

    def __init__(self, policy, budget, seed, cause):
        self.policy = policy
        self.budget = budget
        self.seed = seed
        super().__init__(
            f"Run failed for policy={policy}, n={budget}, seed={seed}: {cause}"
        )


def chain_stream(seed, chain_id):
    """Make the random stream for one chain in one replication.

    The stream is a counter-based Philox generator keyed by the replication
    seed and the chain id, so that chain dynamics never depend on which
    policy is run or on how many other chains exist.

    Args:
        seed (int): Replication seed (base_seed + replication index)
        chain_id (int): 0-based chain index

    Returns:
        numpy.random.Generator
    """
    seedseq = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(chain_id),))
    return np.random.Generator(np.random.Philox(seedseq))


def generator_stream(seed):
    """Random stream used by instance generators, disjoint from chain streams"""
    seedseq = np.random.SeedSequence(entropy=int(seed), spawn_key=(2 ** 32,))
    return np.random.Generator(np.random.Philox(seedseq))


def write_dframe_stdout_file(
    dframe, output, index=False, caller_logger=None, logstr=None
):
    """Write a dataframe to either stdout or a file

    If output is the magic string "-", output is written
    to stdout.

    Arguments:
        dframe (pd.DataFrame): Dataframe to write
        output (str): Filename or "-"
        index (bool): Passed to to_csv()
        caller_logger (logging): Used if not stdout
        logstr (str): Logged if not stdout.
    """
    if output == MAGIC_STDOUT:
        # Ignore pipe errors when writing to stdout:
        if hasattr(signal, "SIGPIPE"):
            signal.signal(signal.SIGPIPE, signal.SIG_DFL)
        dframe.to_csv(sys.stdout, index=index)
    else:
        if caller_logger and not logstr:
            caller_logger.info("Writing to file %s", str(output))
        elif caller_logger and logstr:
            caller_logger.info(logstr)
        dframe.to_csv(output, index=index)


def fill_verbose_argument(parser):
    """Add the -v/--verbose flag shared by all subcommands"""
    parser.add_argument("-v", "--verbose", action="store_true", help="Be verbose")
    return parser
