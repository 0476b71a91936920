"""Sufficient statistics of the observation stream, the smoothed
transition estimator and the loss functions"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from .common import InvalidConfig, NoSamples

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class ChainCounts:
    """Counts for one chain.

    Only the most recent visit lacks an outgoing transition, so
    transition_counts.sum(axis=1) equals state_visits minus the
    indicator of last_state.
    """

    num_states: int
    total_pulls: int = 0
    state_visits: np.ndarray = None
    transition_counts: np.ndarray = None
    last_state: Optional[int] = None

    def __post_init__(self):
        if self.state_visits is None:
            self.state_visits = np.zeros(self.num_states, dtype=np.int64)
        if self.transition_counts is None:
            self.transition_counts = np.zeros(
                (self.num_states, self.num_states), dtype=np.int64
            )

    def copy(self):
        """Independent copy, for snapshots"""
        return ChainCounts(
            num_states=self.num_states,
            total_pulls=self.total_pulls,
            state_visits=self.state_visits.copy(),
            transition_counts=self.transition_counts.copy(),
            last_state=self.last_state,
        )


@dataclass(eq=False)
class ObservationCounts:
    """Counts for all K chains. Single writer per replication."""

    chains: List[ChainCounts] = field(default_factory=list)

    @classmethod
    def empty(cls, num_chains, num_states):
        """Fresh counts with nothing observed"""
        return cls(chains=[ChainCounts(num_states) for _ in range(num_chains)])

    def __getitem__(self, chain_id):
        return self.chains[chain_id]

    def __len__(self):
        return len(self.chains)

    @property
    def rounds(self):
        """Global round count t"""
        return sum(chain.total_pulls for chain in self.chains)

    @property
    def pulls(self):
        """Length-K vector of total pulls per chain"""
        return np.array([chain.total_pulls for chain in self.chains], dtype=np.int64)


@dataclass(frozen=True)
class SmoothingConfig:
    """Additive smoothing of the transition estimator"""

    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidConfig(f"Smoothing alpha must be positive, got {self.alpha}")

    @classmethod
    def default(cls, num_states):
        """alpha = 1/(3S)"""
        return cls(alpha=1.0 / (3 * num_states))

    @classmethod
    def laplace(cls, num_states):
        """alpha = 1/S, the Laplace-smoothed estimator"""
        return cls(alpha=1.0 / num_states)


def record_observation(counts, chain_id, state):
    """Record that chain chain_id was sampled and observed in state.

    A transition is counted from the previously observed state of the
    same chain, if any.

    Args:
        counts (ObservationCounts): Mutated in place
        chain_id (int): 0-based chain index
        state (int): 0-based state index

    Returns:
        ObservationCounts: the same object
    """
    chain = counts.chains[chain_id]
    if not 0 <= state < chain.num_states:
        raise ValueError(f"State {state} outside the state space")
    chain.total_pulls += 1
    chain.state_visits[state] += 1
    if chain.last_state is not None:
        chain.transition_counts[chain.last_state, state] += 1
    chain.last_state = state
    return counts


def smoothed_estimate(counts_k, cfg):
    """Smoothed transition estimate (alpha + N(x,y)) / (alpha S + T_x).

    The denominator is the visit count, so the row of the last visited
    state sums to slightly less than one.

    Args:
        counts_k (ChainCounts)
        cfg (SmoothingConfig)

    Returns:
        np.ndarray: S x S matrix with entries in (0, 1)
    """
    alpha = cfg.alpha
    denominator = alpha * counts_k.num_states + counts_k.state_visits
    return (alpha + counts_k.transition_counts) / denominator[:, None]


def empirical_stationary(counts_k):
    """Empirical occupancy T_x / T of one chain.

    Raises:
        NoSamples: if the chain has never been sampled
    """
    if counts_k.total_pulls == 0:
        raise NoSamples("Chain has not been sampled")
    return counts_k.state_visits / counts_k.total_pulls


def empirical_gini(estimate):
    """Gini index of every row of an estimated transition matrix"""
    estimate = np.asarray(estimate)
    return (estimate * (1.0 - estimate)).sum(axis=1)


def _row_errors(estimate, truth):
    """Squared L2 distance of every row"""
    return ((np.asarray(truth) - np.asarray(estimate)) ** 2).sum(axis=1)


def loss_weighted(counts, estimates, truth):
    """Occupancy-weighted loss of every chain, and its maximum.

    Args:
        counts (ObservationCounts)
        estimates (list): K estimated matrices
        truth (ProblemInstance)

    Returns:
        tuple: (np.ndarray of per-chain losses L_k, float L = max_k L_k)

    Raises:
        NoSamples: if some chain was never sampled
    """
    per_chain = np.array(
        [
            empirical_stationary(counts_k) @ _row_errors(estimate, trans.entries)
            for counts_k, estimate, trans in zip(
                counts.chains, estimates, truth.transitions
            )
        ]
    )
    return per_chain, float(per_chain.max())


def loss_unweighted(estimates, truth):
    """max_k sum_x ||P_k(x,.) - Phat_k(x,.)||^2, a diagnostic"""
    return float(
        max(
            _row_errors(estimate, trans.entries).sum()
            for estimate, trans in zip(estimates, truth.transitions)
        )
    )


def loss_pseudo(estimates, truth):
    """Loss with true stationary weights instead of empirical occupancy"""
    analyses = truth.require_analysis()
    return float(
        max(
            analysis.stationary @ _row_errors(estimate, trans.entries)
            for estimate, trans, analysis in zip(
                estimates, truth.transitions, analyses
            )
        )
    )


@dataclass(frozen=True, eq=False)
class LossReport:
    """Losses and allocation of one finished run.

    Attributes:
        per_chain (np.ndarray): L_k per chain
        loss (float): L = max_k L_k
        loss_unweighted (float): L' (NaN if not requested)
        loss_pseudo (float): L'' (NaN for non-ergodic instances)
        pulls (np.ndarray): T_k per chain
        pseudo_excess (float): L - 2 beta Lambda / n
    """

    per_chain: np.ndarray
    loss: float
    loss_unweighted: float
    loss_pseudo: float
    pulls: np.ndarray
    pseudo_excess: float

    @property
    def budget(self):
        """n, the total number of pulls"""
        return int(self.pulls.sum())

    @property
    def fractions(self):
        """T_k / n per chain"""
        return self.pulls / self.pulls.sum()

    def as_dict(self):
        """Flat dictionary in the fixed per-run column order"""
        row = {
            "L": self.loss,
            "L_prime": self.loss_unweighted,
            "L_pseudo": self.loss_pseudo,
            "nL": self.budget * self.loss,
            "pseudo_excess": self.pseudo_excess,
        }
        for idx, value in enumerate(self.per_chain):
            row[f"L_{idx + 1}"] = value
        for idx, value in enumerate(self.pulls):
            row[f"T_{idx + 1}"] = int(value)
        for idx, value in enumerate(self.fractions):
            row[f"frac_{idx + 1}"] = value
        return row


def loss_report(counts, estimates, truth, beta, diagnostics=True):
    """Compute all losses of a finished run

    Args:
        counts (ObservationCounts)
        estimates (list): K estimated matrices
        truth (ProblemInstance)
        beta (float): beta(n, delta) of the run
        diagnostics (bool): Also compute L' and L''

    Returns:
        LossReport
    """
    per_chain, loss = loss_weighted(counts, estimates, truth)
    budget = counts.rounds
    unweighted = np.nan
    pseudo = np.nan
    if diagnostics:
        unweighted = loss_unweighted(estimates, truth)
        if truth.analyzed:
            pseudo = loss_pseudo(estimates, truth)
    return LossReport(
        per_chain=per_chain,
        loss=loss,
        loss_unweighted=unweighted,
        loss_pseudo=pseudo,
        pulls=counts.pulls,
        pseudo_excess=loss - 2 * beta * truth.lambda_total / budget,
    )


def df(counts, cfg):
    """Produce a dataframe of counts and estimates, one row per chain and
    state.

    Columns: CHAIN, STATE, VISITS, PI_HAT, GINI_HAT and PHAT_1 .. PHAT_S.
    """
    rows = []
    for chain_idx, counts_k in enumerate(counts.chains):
        estimate = smoothed_estimate(counts_k, cfg)
        gini = empirical_gini(estimate)
        occupancy = (
            empirical_stationary(counts_k)
            if counts_k.total_pulls
            else np.full(counts_k.num_states, np.nan)
        )
        for state in range(counts_k.num_states):
            row = {
                "CHAIN": chain_idx + 1,
                "STATE": state + 1,
                "VISITS": int(counts_k.state_visits[state]),
                "PI_HAT": occupancy[state],
                "GINI_HAT": gini[state],
            }
            for target in range(counts_k.num_states):
                row[f"PHAT_{target + 1}"] = estimate[state, target]
            rows.append(row)
    return pd.DataFrame(rows)
