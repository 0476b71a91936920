"""Confidence quantities: log terms, deviation radii for transition
and stationary estimates, the good event over a run and the budget
cutoff of the refined regime.

All logarithms are natural logarithms.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .common import InvalidConfig

logger = logging.getLogger(__name__)

DEFAULT_C = 1.1


@dataclass(frozen=True)
class ConfidenceConfig:
    """Parameters of the confidence radii.

    Attributes:
        n (int): Budget
        delta (float): Confidence level in (0, 1)
        K (int): Number of chains
        S (int): Number of states
        c (float): Peeling base, > 1
    """

    n: int
    delta: float
    K: int
    S: int
    c: float = DEFAULT_C

    def __post_init__(self):
        if not self.c > 1:
            raise InvalidConfig(f"Peeling base c must exceed 1, got {self.c}")
        if not 0 < self.delta < 1:
            raise InvalidConfig(f"delta must be in (0, 1), got {self.delta}")
        if self.n < 1:
            raise InvalidConfig(f"Budget must be positive, got {self.n}")
        if self.K < 1 or self.S < 1:
            raise InvalidConfig("K and S must be positive")

    @property
    def peeling_levels(self):
        """Number of geometric slices, ceil(ln n / ln c)"""
        return math.ceil(math.log(self.n) / math.log(self.c))


def beta(cfg):
    """beta(n, delta) = c ln(ceil(ln n / ln c) 6 K S^2 / delta).

    Raises:
        InvalidConfig: if n < 2
    """
    if cfg.n < 2:
        raise InvalidConfig("beta needs a budget of at least 2")
    return cfg.c * math.log(cfg.peeling_levels * 6 * cfg.K * cfg.S ** 2 / cfg.delta)


def zeta(cfg):
    """zeta(n, delta) = c ln(ceil(ln n / ln c) 2 S^2 / delta), the log
    term of the per-chain Bernstein radii"""
    if cfg.n < 2:
        raise InvalidConfig("zeta needs a budget of at least 2")
    return cfg.c * math.log(cfg.peeling_levels * 2 * cfg.S ** 2 / cfg.delta)


@dataclass(frozen=True)
class EmpiricalBernsteinConstants:
    """Constants of the empirical Bernstein radius for a given zeta"""

    zeta: float
    zeta_prime: float
    c1: float
    c2: float

    @classmethod
    def from_zeta(cls, zeta_value, alpha, num_states):
        """Evaluate zeta', c1 and c2"""
        zeta_prime = zeta_value / 3 + alpha * (num_states - 1)
        sqrt8z = math.sqrt(8 * zeta_value)
        c1 = sqrt8z * (2 * zeta_value + zeta_prime)
        c2 = (
            zeta_prime ** 2
            + 4
            * zeta_value
            * (4 * zeta_value + zeta_prime + 2 * math.sqrt(zeta_value * zeta_prime))
            + zeta_prime
            * sqrt8z
            * (5.3 * math.sqrt(zeta_value) + math.sqrt(2 * zeta_prime))
        )
        return cls(zeta=zeta_value, zeta_prime=zeta_prime, c1=c1, c2=c2)


def sub_gamma_radius(variance, scale, log_term):
    """sqrt(2 v z) + b z, the deviation scale of a sub-Gamma variable"""
    return np.sqrt(2 * variance * log_term) + scale * log_term


def bernstein_markov_radius(prob, visits, zeta_value, alpha, num_states):
    """Per-entry radius around the smoothed estimate, in terms of the
    true transition probabilities.

    Args:
        prob: True P(x,y), scalar or array
        visits: T_x, broadcastable against prob
        zeta_value (float): zeta(n, delta)
        alpha (float): Smoothing parameter
        num_states (int): S

    Returns:
        Radius with the broadcast shape of prob and visits
    """
    prob = np.asarray(prob, dtype=np.float64)
    visits = np.asarray(visits, dtype=np.float64)
    denominator = visits + alpha * num_states
    variance = prob * (1 - prob)
    return np.sqrt(
        (visits / denominator) * 2 * variance * zeta_value / denominator
    ) + (zeta_value / 3 + alpha * np.abs(1 - num_states * prob)) / denominator


def empirical_bernstein_radius(estimate, visits, consts, alpha, num_states):
    """Per-entry radius computable from the estimate alone.

    Args:
        estimate: Estimated P(x,y), scalar or array
        visits: T_x, broadcastable against estimate
        consts (EmpiricalBernsteinConstants)
        alpha (float): Smoothing parameter
        num_states (int): S
    """
    estimate = np.asarray(estimate, dtype=np.float64)
    visits = np.asarray(visits, dtype=np.float64)
    denominator_sq = (visits + alpha * num_states) ** 2
    variance = estimate * (1 - estimate)
    return np.sqrt(
        (
            2 * visits * variance * consts.zeta
            + consts.c1 * np.sqrt(visits * variance)
            + consts.c2
        )
        / denominator_sq
    )


def stationary_log_term(delta, pi_min):
    """ln((1/delta) sqrt(2 / pi_min))"""
    return math.log(math.sqrt(2 / pi_min) / delta)


def stationary_radius(pi_x, gamma, n, delta, pi_min):
    """Deviation radius of the empirical occupancy of one state.

    Args:
        pi_x: Stationary probability of the state, scalar or array
        gamma (float): Spectral gap (pseudo-spectral gap for non-reversible
            chains)
        n (int): Number of pulls of the chain
        delta (float): Confidence level
        pi_min (float): Smallest stationary probability of the chain
    """
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    if n < 1:
        raise ValueError("Need at least one pull")
    log_term = stationary_log_term(delta, pi_min)
    pi_x = np.asarray(pi_x, dtype=np.float64)
    return np.sqrt(8 * pi_x * (1 - pi_x) * log_term / (gamma * n)) + 20 * log_term / (
        gamma * n
    )


@dataclass(eq=False)
class EstimateHistory:
    """Per-chain snapshots of (state visits, smoothed estimate).

    A snapshot of chain k is appended whenever chain k is recorded,
    chains not recorded in a round keep their previous estimate.
    """

    num_chains: int
    _visits: List[list] = field(default_factory=list, repr=False)
    _estimates: List[list] = field(default_factory=list, repr=False)
    rounds: List[list] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._visits = [[] for _ in range(self.num_chains)]
        self._estimates = [[] for _ in range(self.num_chains)]
        self.rounds = [[] for _ in range(self.num_chains)]

    def append(self, chain_id, visits, estimate, round_index=None):
        """Store a copy of one chain's visits and estimate"""
        self._visits[chain_id].append(np.array(visits, dtype=np.float64))
        self._estimates[chain_id].append(np.array(estimate, dtype=np.float64))
        self.rounds[chain_id].append(round_index)

    def __len__(self):
        return sum(len(visits) for visits in self._visits)

    def stacked(self, chain_id):
        """Arrays of shape (m, S) and (m, S, S) for one chain"""
        if not self._visits[chain_id]:
            return None, None
        return np.stack(self._visits[chain_id]), np.stack(self._estimates[chain_id])


def event_c_holds(history, truth, cfg, alpha):
    """Check that every recorded estimate lies within its radius.

    The radius of entry (x,y) is
    sqrt(2 T_x P(1-P)(x,y) beta) / (T_x + alpha S) + beta / (3 (T_x + alpha S))
    with beta = beta(n, delta) of the run.

    Args:
        history (EstimateHistory)
        truth (ProblemInstance)
        cfg (ConfidenceConfig)
        alpha (float): Smoothing parameter

    Returns:
        bool
    """
    beta_value = beta(cfg)
    num_states = truth.num_states
    for chain_id, trans in enumerate(truth.transitions):
        visits, estimates = history.stacked(chain_id)
        if visits is None:
            continue
        variance = trans.entries * (1 - trans.entries)
        visits = visits[:, :, None]
        denominator = visits + alpha * num_states
        radius = (
            np.sqrt(2 * visits * variance[None, :, :] * beta_value) / denominator
            + beta_value / (3 * denominator)
        )
        if (np.abs(estimates - trans.entries[None, :, :]) > radius).any():
            logger.debug("Event C violated for chain %d", chain_id + 1)
            return False
    return True


def n_cutoff_from_params(num_chains, pseudo_gaps, min_stationaries, delta):
    """ceil(K max_k ((300 / (gamma_ps,k pi_min,k)) ln((2K/delta) pi_min,k^-1/2))^2)"""
    worst = max(
        (300 / (gap * pi_min))
        * math.log(2 * num_chains / delta / math.sqrt(pi_min))
        for gap, pi_min in zip(pseudo_gaps, min_stationaries)
    )
    return math.ceil(num_chains * worst ** 2)


def n_cutoff(instance, delta):
    """Budget from which the refined pseudo-excess loss bound applies

    Args:
        instance (ProblemInstance): Analyzed instance
        delta (float): Confidence level

    Returns:
        int
    """
    analyses = instance.require_analysis()
    return n_cutoff_from_params(
        instance.num_chains,
        [analysis.pseudo_spectral_gap for analysis in analyses],
        [analysis.min_stationary for analysis in analyses],
        delta,
    )
