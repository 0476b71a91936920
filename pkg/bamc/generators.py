"""Random and structured families of problem instances"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np

from .chains import build_instance
from .common import BamcError, GenerationFailed, generator_stream

logger = logging.getLogger(__name__)

DEFAULT_MAX_RETRIES = 100

# Family name -> (default parameters)
FAMILIES = {
    "dirichlet-rows": {"concentration": 1.0},
    "lazy-two-state": {"epsilon": 0.1},
    "near-deterministic": {"epsilon": 0.05},
}


@dataclass(frozen=True)
class GeneratorSpec:
    """Description of an instance family.

    Attributes:
        family (str): dirichlet-rows, lazy-two-state or near-deterministic
        K (int): Number of chains
        S (int): Number of states
        params (dict): Family parameters, merged over the family defaults.
            All families accept max_retries.
    """

    family: str
    K: int
    S: int
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(
                f"Unknown generator family '{self.family}', "
                f"choose from {sorted(FAMILIES)}"
            )
        if self.K < 1:
            raise ValueError("Generator needs at least one chain")
        if self.S < 2:
            raise ValueError("Generator needs at least two states")
        if self.family == "lazy-two-state" and self.S != 2:
            raise ValueError("lazy-two-state chains have exactly two states")
        unknown = set(self.params) - set(FAMILIES[self.family]) - {"max_retries"}
        if unknown:
            raise ValueError(f"Unknown parameters for {self.family}: {sorted(unknown)}")

    def param(self, name):
        """Parameter value with the family default applied"""
        if name == "max_retries":
            return int(self.params.get(name, DEFAULT_MAX_RETRIES))
        return self.params.get(name, FAMILIES[self.family][name])


def _per_chain(value, num_chains):
    """Broadcast a scalar parameter, or check a per-chain list"""
    if isinstance(value, (list, tuple)):
        if len(value) != num_chains:
            raise ValueError(
                f"Expected {num_chains} per-chain values, got {len(value)}"
            )
        return [float(item) for item in value]
    return [float(value)] * num_chains


def lazy_two_state(epsilon):
    """[[0.5, 0.5], [epsilon, 1 - epsilon]]"""
    return np.array([[0.5, 0.5], [epsilon, 1.0 - epsilon]])


def dirichlet_rows(rng, num_states, concentration):
    """Every row drawn from a symmetric Dirichlet distribution"""
    matrix = rng.dirichlet(np.full(num_states, concentration), size=num_states)
    return matrix / matrix.sum(axis=1, keepdims=True)


def near_deterministic(rng, num_states, epsilon):
    """Each state moves to a random successor with probability 1 - epsilon,
    the rest spread evenly on the other states"""
    successors = rng.integers(0, num_states, size=num_states)
    matrix = np.full((num_states, num_states), epsilon / (num_states - 1))
    matrix[np.arange(num_states), successors] = 1.0 - epsilon
    return matrix


def _draw_matrices(spec, rng):
    if spec.family == "lazy-two-state":
        return [
            lazy_two_state(eps) for eps in _per_chain(spec.param("epsilon"), spec.K)
        ]
    if spec.family == "dirichlet-rows":
        return [
            dirichlet_rows(rng, spec.S, conc)
            for conc in _per_chain(spec.param("concentration"), spec.K)
        ]
    return [
        near_deterministic(rng, spec.S, eps)
        for eps in _per_chain(spec.param("epsilon"), spec.K)
    ]


def generate_instance(spec, seed):
    """Generate a validated instance, deterministic given the seed.

    Draws are repeated until all chains validate, up to max_retries
    attempts.

    Args:
        spec (GeneratorSpec)
        seed (int)

    Returns:
        ProblemInstance

    Raises:
        GenerationFailed: if no valid instance was found within the cap
    """
    rng = generator_stream(seed)
    max_retries = spec.param("max_retries")
    last_error = None
    for attempt in range(1, max_retries + 1):
        matrices = _draw_matrices(spec, rng)
        try:
            instance = build_instance(matrices)
        except BamcError as err:
            last_error = err
            logger.debug("Generation attempt %d rejected: %s", attempt, err)
            continue
        logger.info(
            "Generated %s instance with K=%d, S=%d after %d attempt(s)",
            spec.family,
            spec.K,
            spec.S,
            attempt,
        )
        return instance
    raise GenerationFailed(
        f"No valid {spec.family} instance in {max_retries} attempts: {last_error}"
    )
