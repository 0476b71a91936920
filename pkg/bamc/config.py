"""Loading and validation of experiment configuration files.

A configuration is a JSON or YAML mapping, for example::

  instance: chains.json
  budgets: [1000, 10000]
  policies: [bamc, uniform, oracle-static]
  replications: 50
  outputs:
    directory: results

Relative paths are resolved against the directory of the configuration
file.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Tuple

import yaml

from .chains import build_instance
from .common import BamcError, ParseError, SchemaError
from .generators import GeneratorSpec, generate_instance
from .instancefiles import InstanceFile
from .policies import DEFAULT_FULL_SNAPSHOT_CAP, SNAPSHOT_MODES, normalize_policy

logger = logging.getLogger(__name__)

OUTPUT_FORMATS = ("csv", "json", "long")
MAX_SEED = 2 ** 64 - 1

DEFAULTS = {
    "policies": ["bamc"],
    "delta": 0.05,
    "c": 1.1,
    "alpha": None,
    "replications": 100,
    "base_seed": 0,
    "snapshot_mode": "off",
    "full_snapshot_cap": DEFAULT_FULL_SNAPSHOT_CAP,
    "outputs": {},
    "jobs": 1,
}
REQUIRED = ("instance", "budgets")


@dataclass(frozen=True)
class InstanceSource:
    """Where the problem instance comes from.

    Attributes:
        kind (str): file, matrices or generator
        value: Path for file, list of matrices, or a GeneratorSpec
        initial_dists (list): Optional initial distributions for matrices
        seed (int): Generator seed
        permissive (bool): Accept non-ergodic chains
    """

    kind: str
    value: Any
    initial_dists: Optional[list] = None
    seed: int = 0
    permissive: bool = False

    def resolve(self):
        """Build the ProblemInstance"""
        if self.kind == "file":
            return InstanceFile(self.value).get_instance(permissive=self.permissive)
        if self.kind == "matrices":
            return build_instance(
                self.value, self.initial_dists, permissive=self.permissive
            )
        return generate_instance(self.value, self.seed)


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully validated experiment configuration with defaults applied"""

    instance_source: InstanceSource
    budgets: Tuple[int, ...]
    policies: Tuple[str, ...] = ("bamc",)
    delta: float = 0.05
    c: float = 1.1
    alpha: Optional[float] = None
    replications: int = 100
    base_seed: int = 0
    snapshot_mode: str = "off"
    full_snapshot_cap: int = DEFAULT_FULL_SNAPSHOT_CAP
    output_directory: Path = Path(".")
    formats: Tuple[str, ...] = OUTPUT_FORMATS
    jobs: int = 1

    def with_overrides(self, out=None, jobs=None, seed=None):
        """Copy with command line overrides applied"""
        changes = {}
        if out is not None:
            changes["output_directory"] = Path(out)
        if jobs is not None:
            changes["jobs"] = _check_positive_int("jobs", jobs)
        if seed is not None:
            changes["base_seed"] = _check_seed(seed, self.replications)
        return dataclasses.replace(self, **changes)

    def resolve_instance(self):
        """Build the instance and check the budgets against it.

        Raises:
            SchemaError: if a budget is below 2K or the instance is invalid
        """
        try:
            instance = self.instance_source.resolve()
        except (BamcError, ValueError, OSError) as err:
            if isinstance(err, ParseError):
                raise
            raise SchemaError("instance", str(err)) from err
        too_small = [n for n in self.budgets if n < 2 * instance.num_chains]
        if too_small:
            raise SchemaError(
                "budgets",
                f"{too_small} below 2K = {2 * instance.num_chains}",
            )
        return instance


def _is_int(value):
    return isinstance(value, int) and not isinstance(value, bool)


def _check_positive_int(name, value):
    if not _is_int(value) or value < 1:
        raise SchemaError(name, f"must be a positive integer, got {value!r}")
    return value


def _check_seed(value, replications):
    if not _is_int(value) or value < 0 or value + replications - 1 > MAX_SEED:
        raise SchemaError("base_seed", "must be an unsigned 64-bit integer")
    return value


def _check_real(name, value):
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise SchemaError(name, f"must be a number, got {value!r}")
    return float(value)


def _instance_source(value, base_dir):
    if isinstance(value, str):
        return InstanceSource(kind="file", value=base_dir / value)
    if not isinstance(value, dict):
        raise SchemaError("instance", "must be a path or a mapping")
    unknown = set(value) - {
        "file",
        "matrices",
        "initial_dists",
        "generator",
        "permissive",
    }
    if unknown:
        raise SchemaError("instance", f"unknown keys {sorted(unknown)}")
    kinds = [kind for kind in ("file", "matrices", "generator") if kind in value]
    if len(kinds) != 1:
        raise SchemaError(
            "instance", "exactly one of 'file', 'matrices' or 'generator' is required"
        )
    permissive = bool(value.get("permissive", False))
    kind = kinds[0]
    if "initial_dists" in value and kind != "matrices":
        raise SchemaError("instance.initial_dists", "only allowed with 'matrices'")
    if kind == "file":
        return InstanceSource(
            kind="file", value=base_dir / value["file"], permissive=permissive
        )
    if kind == "matrices":
        if not isinstance(value["matrices"], list) or not value["matrices"]:
            raise SchemaError("instance.matrices", "must be a non-empty list")
        return InstanceSource(
            kind="matrices",
            value=value["matrices"],
            initial_dists=value.get("initial_dists"),
            permissive=permissive,
        )
    generator = value["generator"]
    if not isinstance(generator, dict):
        raise SchemaError("instance.generator", "must be a mapping")
    unknown = set(generator) - {"family", "K", "S", "params", "seed"}
    if unknown:
        raise SchemaError("instance.generator", f"unknown keys {sorted(unknown)}")
    for key in ("family", "K", "S"):
        if key not in generator:
            raise SchemaError(f"instance.generator.{key}", "is required")
    try:
        spec = GeneratorSpec(
            family=generator["family"],
            K=_check_positive_int("instance.generator.K", generator["K"]),
            S=_check_positive_int("instance.generator.S", generator["S"]),
            params=dict(generator.get("params") or {}),
        )
    except SchemaError:
        raise
    except ValueError as err:
        raise SchemaError("instance.generator", str(err)) from err
    seed = generator.get("seed", 0)
    if not _is_int(seed) or seed < 0:
        raise SchemaError("instance.generator.seed", "must be a nonnegative integer")
    return InstanceSource(kind="generator", value=spec, seed=seed)


def config_from_dict(data, base_dir=Path(".")):
    """Validate a parsed configuration mapping

    Args:
        data (dict): Parsed configuration
        base_dir (Path): Directory relative paths are resolved against

    Returns:
        ExperimentConfig

    Raises:
        SchemaError: naming the offending field
    """
    if not isinstance(data, dict):
        raise SchemaError("<root>", "configuration must be a mapping")
    base_dir = Path(base_dir)
    unknown = set(data) - set(DEFAULTS) - set(REQUIRED)
    if unknown:
        raise SchemaError(sorted(unknown)[0], "unknown configuration key")
    for key in REQUIRED:
        if key not in data:
            raise SchemaError(key, "is required")
    values = dict(DEFAULTS)
    values.update(data)

    budgets = values["budgets"]
    if not isinstance(budgets, list) or not budgets:
        raise SchemaError("budgets", "must be a non-empty list of integers")
    for budget in budgets:
        if not _is_int(budget) or budget < 2:
            raise SchemaError("budgets", f"invalid budget {budget!r}")

    policies = values["policies"]
    if isinstance(policies, str):
        policies = [policies]
    if not isinstance(policies, list) or not policies:
        raise SchemaError("policies", "must be a non-empty list")
    try:
        policies = tuple(normalize_policy(policy) for policy in policies)
    except ValueError as err:
        raise SchemaError("policies", str(err)) from err

    delta = _check_real("delta", values["delta"])
    if not 0 < delta < 1:
        raise SchemaError("delta", "must be in (0, 1)")
    c = _check_real("c", values["c"])
    if not c > 1:
        raise SchemaError("c", "must be larger than 1")
    alpha = values["alpha"]
    if alpha is not None:
        alpha = _check_real("alpha", alpha)
        if not alpha > 0:
            raise SchemaError("alpha", "must be positive")

    replications = _check_positive_int("replications", values["replications"])
    base_seed = _check_seed(values["base_seed"], replications)

    snapshot_mode = values["snapshot_mode"]
    if snapshot_mode not in SNAPSHOT_MODES:
        raise SchemaError("snapshot_mode", f"must be one of {SNAPSHOT_MODES}")
    full_snapshot_cap = _check_positive_int(
        "full_snapshot_cap", values["full_snapshot_cap"]
    )

    outputs = values["outputs"] or {}
    if not isinstance(outputs, dict):
        raise SchemaError("outputs", "must be a mapping")
    unknown = set(outputs) - {"directory", "formats"}
    if unknown:
        raise SchemaError("outputs", f"unknown keys {sorted(unknown)}")
    formats = outputs.get("formats", list(OUTPUT_FORMATS))
    if not isinstance(formats, list) or not set(formats) <= set(OUTPUT_FORMATS):
        raise SchemaError("outputs.formats", f"must be a subset of {OUTPUT_FORMATS}")
    directory = Path(outputs.get("directory", "."))
    if not directory.is_absolute():
        directory = base_dir / directory

    return ExperimentConfig(
        instance_source=_instance_source(values["instance"], base_dir),
        budgets=tuple(budgets),
        policies=policies,
        delta=delta,
        c=c,
        alpha=alpha,
        replications=replications,
        base_seed=base_seed,
        snapshot_mode=snapshot_mode,
        full_snapshot_cap=full_snapshot_cap,
        output_directory=directory,
        formats=tuple(fmt for fmt in OUTPUT_FORMATS if fmt in formats),
        jobs=_check_positive_int("jobs", values["jobs"]),
    )


def parse_config_text(text):
    """Parse configuration text as JSON, then as YAML.

    Raises:
        ParseError: with the location of the first syntax error
    """
    try:
        logger.debug("Trying to parse configuration as JSON")
        return json.loads(text)
    except json.JSONDecodeError as json_error:
        logger.debug("Not JSON, trying YAML")
        if text.lstrip().startswith("{"):
            raise ParseError(
                json_error.msg,
                location=f"line {json_error.lineno}, column {json_error.colno}",
            ) from json_error
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as yaml_error:
        mark = getattr(yaml_error, "problem_mark", None)
        location = None
        if mark is not None:
            location = f"line {mark.line + 1}, column {mark.column + 1}"
        raise ParseError(
            getattr(yaml_error, "problem", None) or str(yaml_error), location=location
        ) from yaml_error


def load_config(path):
    """Read and validate an experiment configuration file

    Args:
        path (str or Path): JSON or YAML file

    Returns:
        ExperimentConfig

    Raises:
        ParseError, SchemaError
    """
    path = Path(path)
    logger.info("Loading configuration from %s", str(path))
    try:
        text = path.read_text()
    except OSError as err:
        raise ParseError(f"Cannot read {path}: {err.strerror}") from err
    return config_from_dict(parse_config_text(text), base_dir=path.absolute().parent)
