"""Module to read and write problem instance files.

An instance file is a JSON document::

  {
    "states": 2,
    "chains": [
      [[0.5, 0.5], [0.1, 0.9]],
      [[0.9, 0.1], [0.2, 0.8]]
    ],
    "initial_dists": [[1, 0], [0.5, 0.5]]
  }

``states`` may also be a list of state names. ``initial_dists`` is
optional and defaults to uniform. Violations are reported with the
line number of the offending chain or row.
"""

import json
import logging
from pathlib import Path

import numpy as np
import yaml

from .chains import build_instance, gini_index, validate_chain
from .common import (
    BamcError,
    InstanceFileError,
    NotErgodic,
    NotStochastic,
    fill_verbose_argument,
)

logger = logging.getLogger(__name__)

INSTANCE_KEYS = {"states", "chains", "initial_dists", "name", "description"}


def _compose(text):
    """YAML node tree of the text, used only for line numbers"""
    try:
        return yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        logger.debug("Could not compose node tree, line numbers unavailable")
        return None


def node_line(root, *path):
    """1-based line number of the node reached by following path.

    Args:
        root (yaml.Node): Composed document, or None
        path: Sequence of mapping keys (str) and sequence indices (int)

    Returns:
        int or None if the node cannot be located
    """
    node = root
    if node is None:
        return None
    for key in path:
        if isinstance(node, yaml.MappingNode):
            values = [value for name, value in node.value if name.value == key]
            if not values:
                return None
            node = values[0]
        elif isinstance(node, yaml.SequenceNode):
            if not isinstance(key, int) or key >= len(node.value):
                return None
            node = node.value[key]
        else:
            return None
    return node.start_mark.line + 1


def parse_instance(text, filename=None, permissive=False):
    """Parse instance file contents into a ProblemInstance

    Args:
        text (str): JSON document
        filename (str): Used in error messages only
        permissive (bool): Accept non-ergodic chains

    Returns:
        ProblemInstance

    Raises:
        InstanceFileError: with the line of the offending element
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise InstanceFileError(err.msg, line=err.lineno, filename=filename) from err
    root = _compose(text)

    def fail(message, *path):
        line = node_line(root, *path)
        logger.error("Rejecting instance: %s", message)
        return InstanceFileError(message, line=line, filename=filename)

    if not isinstance(data, dict):
        raise fail("Instance file must hold a JSON object")
    for key in data:
        if key not in INSTANCE_KEYS:
            raise fail(f"Unknown key '{key}'", key)
    if "chains" not in data:
        raise fail("Missing required key 'chains'")
    chains = data["chains"]
    if not isinstance(chains, list) or not chains:
        raise fail("'chains' must be a non-empty list of matrices", "chains")

    states = data.get("states")
    if isinstance(states, list):
        num_states = len(states)
    elif states is None:
        num_states = None
    elif isinstance(states, int) and not isinstance(states, bool):
        num_states = states
    else:
        raise fail("'states' must be an integer or a list of names", "states")

    matrices = []
    for chain_idx, matrix in enumerate(chains):
        try:
            entries = np.array(matrix, dtype=np.float64)
        except (TypeError, ValueError) as err:
            raise fail(
                f"Chain {chain_idx + 1} is not a numeric matrix", "chains", chain_idx
            ) from err
        if num_states is not None and entries.shape != (num_states, num_states):
            raise fail(
                f"Chain {chain_idx + 1} has shape {entries.shape}, "
                f"expected {num_states} states",
                "chains",
                chain_idx,
            )
        try:
            validate_chain(entries, permissive=permissive)
        except NotStochastic as err:
            if err.row is not None:
                raise fail(
                    f"Chain {chain_idx + 1}: {err}", "chains", chain_idx, err.row
                ) from err
            raise fail(f"Chain {chain_idx + 1}: {err}", "chains", chain_idx) from err
        except NotErgodic as err:
            raise fail(f"Chain {chain_idx + 1}: {err}", "chains", chain_idx) from err
        if gini_index(entries).sum() <= 0:
            raise fail(
                f"Chain {chain_idx + 1} is deterministic (zero Gini index)",
                "chains",
                chain_idx,
            )
        matrices.append(entries)

    initial_dists = data.get("initial_dists")
    if initial_dists is not None:
        if not isinstance(initial_dists, list) or len(initial_dists) != len(matrices):
            raise fail("Need one initial distribution per chain", "initial_dists")
        for dist_idx, dist in enumerate(initial_dists):
            try:
                dist = np.array(dist, dtype=np.float64)
            except (TypeError, ValueError) as err:
                raise fail(
                    "Initial distribution is not numeric", "initial_dists", dist_idx
                ) from err
            if (
                dist.shape != (matrices[0].shape[0],)
                or (dist < 0).any()
                or abs(dist.sum() - 1) > 1e-12
            ):
                raise fail(
                    f"Initial distribution {dist_idx + 1} is not a probability "
                    "vector over the states",
                    "initial_dists",
                    dist_idx,
                )

    try:
        return build_instance(matrices, initial_dists, permissive=permissive)
    except BamcError as err:
        raise InstanceFileError(str(err), filename=filename) from err


def instance_to_dict(instance):
    """Serializable representation, the inverse of parse_instance"""
    return {
        "states": instance.num_states,
        "chains": [trans.entries.tolist() for trans in instance.transitions],
        "initial_dists": [dist.tolist() for dist in instance.initial_dists],
    }


def write_instance(instance, filename):
    """Dump an instance to a JSON file readable by InstanceFile"""
    logger.info("Writing instance to %s", str(filename))
    Path(filename).write_text(json.dumps(instance_to_dict(instance), indent=2))


class InstanceFile(object):
    """
    Class for holding an instance file name with its parsed instance.

    Parsing is done on first request and cached.
    """

    def __init__(self, filename):
        self._filename = Path(filename)
        if not self._filename.is_file():
            logger.warning("File %s does not exist", str(filename))
        self._instances = {}

    def get_path(self):
        """Return the full path to the directory with the instance file"""
        return self._filename.absolute().parent

    def get_filename(self):
        """Return the instance file name as a Path"""
        return self._filename

    def get_instance(self, permissive=False):
        """Return the ProblemInstance held by the file"""
        if permissive not in self._instances:
            logger.info("Parsing instance file %s", str(self._filename))
            try:
                text = self._filename.read_text()
            except OSError as err:
                raise InstanceFileError(
                    f"Cannot read file: {err.strerror}", filename=str(self._filename)
                ) from err
            self._instances[permissive] = parse_instance(
                text, filename=str(self._filename), permissive=permissive
            )
        return self._instances[permissive]

    @staticmethod
    def str2instance(string, permissive=False):
        """Produce a ProblemInstance from a JSON string"""
        return parse_instance(string, permissive=permissive)


def fill_parser(parser):
    """Set up sys.argv parsers.

    Arguments:
        parser: argparse.ArgumentParser or argparse.subparser
    """
    parser.add_argument(
        "--instance", required=True, help="Name of instance file (JSON)."
    )
    parser.add_argument(
        "--permissive",
        action="store_true",
        help="Accept reducible or periodic chains.",
    )
    fill_verbose_argument(parser)
    return parser


def validate_main(args):
    """Validate an instance file, errors propagate to the caller"""
    if args.verbose:
        logging.basicConfig(level=logging.INFO)
    instance = InstanceFile(args.instance).get_instance(permissive=args.permissive)
    print(
        f"{args.instance}: valid instance with K={instance.num_chains} chains "
        f"on S={instance.num_states} states, Lambda={instance.lambda_total:.6g}"
    )
