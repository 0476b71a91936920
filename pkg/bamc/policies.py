"""Allocation policies: the BA-MC index policy and its baselines, the
simulation loop that runs them, and closed-form loss bounds."""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .chains import ChainProcessState, step_chain
from .common import BudgetTooSmall, NotSampled
from .concentration import ConfidenceConfig, EstimateHistory, beta, event_c_holds
from .estimation import (
    ObservationCounts,
    SmoothingConfig,
    empirical_gini,
    empirical_stationary,
    loss_report,
    record_observation,
    smoothed_estimate,
)

logger = logging.getLogger(__name__)

BAMC = "bamc"
UNIFORM = "uniform"
ORACLE_STATIC = "oracle-static"
POLICIES = (BAMC, UNIFORM, ORACLE_STATIC)
POLICY_ALIASES = {"oracle_static": ORACLE_STATIC}

SNAPSHOT_MODES = ("off", "checkpoints", "full")
DEFAULT_FULL_SNAPSHOT_CAP = 100000


def normalize_policy(name):
    """Canonical policy name, accepting oracle_static for oracle-static"""
    name = POLICY_ALIASES.get(name, name)
    if name not in POLICIES:
        raise ValueError(f"Unknown policy '{name}', choose from {POLICIES}")
    return name


@dataclass(frozen=True)
class IndexSnapshot:
    """The index of one chain and its three terms"""

    term_gini: float
    term_deviation: float
    term_correction: float
    b: float


def _spread(estimate):
    """Sum over y of sqrt(P(x,y)(1 - P(x,y))) for every row"""
    return np.sqrt(estimate * (1 - estimate)).sum(axis=1)


def _index_from_rows(pulls, state_visits, gini_rows, spread_rows, beta_value, alpha):
    num_states = len(state_visits)
    visits = state_visits.astype(np.float64)
    visited = visits > 0
    denominator = visits + alpha * num_states

    term_gini = 2 * beta_value / pulls * gini_rows[visited].sum()
    term_deviation = (
        6.6
        * beta_value ** 1.5
        / pulls
        * (visits ** 1.5 / denominator ** 2 * spread_rows).sum()
    )
    term_correction = (
        28 * beta_value ** 2 * num_states / pulls * (1 / denominator[visited]).sum()
    )
    return IndexSnapshot(
        term_gini=float(term_gini),
        term_deviation=float(term_deviation),
        term_correction=float(term_correction),
        b=float(term_gini + term_deviation + term_correction),
    )


def compute_index(counts_k, estimate, beta_value, alpha):
    """Optimistic index of one chain.

    Sum of an empirical Gini term, a deviation term and a correction
    term. Unvisited states contribute nothing to any of them.

    Args:
        counts_k (ChainCounts): Counts of the chain, at least one pull
        estimate (np.ndarray): Smoothed estimate from counts_k
        beta_value (float): beta(n, delta) of the run
        alpha (float): Smoothing parameter

    Returns:
        IndexSnapshot

    Raises:
        NotSampled: if the chain has never been pulled
    """
    if counts_k.total_pulls == 0:
        raise NotSampled("Index is undefined for a chain that was never pulled")
    return _index_from_rows(
        counts_k.total_pulls,
        counts_k.state_visits,
        empirical_gini(estimate),
        _spread(estimate),
        beta_value,
        alpha,
    )


class IndexTracker:
    """Smoothed estimate of one chain with its per-row Gini and spread,
    kept up to date row by row.

    Recording a transition x -> y changes only row x (its transition
    counts) and row y (its visit count), so refresh() recomputes just
    those rows. The cached rows equal smoothed_estimate() exactly.
    """

    def __init__(self, counts_k, smoothing):
        self.counts = counts_k
        self.alpha = smoothing.alpha
        self.estimate = smoothed_estimate(counts_k, smoothing)
        self.gini = empirical_gini(self.estimate)
        self.spread = _spread(self.estimate)

    def refresh(self, rows):
        """Recompute the given rows after the counts changed"""
        rows = sorted(set(rows))
        denominator = (
            self.alpha * self.counts.num_states + self.counts.state_visits[rows]
        )
        numerator = self.alpha + self.counts.transition_counts[rows]
        updated = numerator / denominator[:, None]
        self.estimate[rows] = updated
        self.gini[rows] = empirical_gini(updated)
        self.spread[rows] = _spread(updated)

    def index(self, beta_value):
        """IndexSnapshot of the tracked chain"""
        if self.counts.total_pulls == 0:
            raise NotSampled("Index is undefined for a chain that was never pulled")
        return _index_from_rows(
            self.counts.total_pulls,
            self.counts.state_visits,
            self.gini,
            self.spread,
            beta_value,
            self.alpha,
        )


def index_bounds(counts_k, true_gini, beta_value, alpha):
    """Lower and upper bounds on the index that hold on the good event.

    Args:
        counts_k (ChainCounts): Counts of the chain, at least one pull
        true_gini (np.ndarray): Gini index of the true transition rows
        beta_value (float): beta(n, delta) of the run
        alpha (float): Smoothing parameter

    Returns:
        tuple: (lower, upper)
    """
    pulls = counts_k.total_pulls
    if pulls == 0:
        raise NotSampled("Index bounds are undefined for a chain never pulled")
    num_states = counts_k.num_states
    visits = counts_k.state_visits.astype(np.float64)
    visited = visits > 0
    denominator = visits[visited] + alpha * num_states
    gini = np.asarray(true_gini)[visited]
    lower = 2 * beta_value / pulls * gini.sum()
    upper = (
        lower
        + 13
        * beta_value ** 1.5
        * math.sqrt(num_states)
        / pulls
        * np.sqrt(gini / denominator).sum()
        + 39 * beta_value ** 2 * num_states / pulls * (1 / denominator).sum()
    )
    return float(lower), float(upper)


def bamc_select(snapshots, t, num_chains, n):
    """Chain to sample at round t (1-based), as a 0-based chain index.

    The first 2K rounds sample every chain twice in order. After that
    the chain with the largest index is chosen, ties going to the lowest
    chain index.

    Args:
        snapshots (list): Current IndexSnapshot (or plain index value) per
            chain. Ignored during initialization.
        t (int): Round, 1-based
        num_chains (int): K
        n (int): Budget

    Raises:
        BudgetTooSmall: if n < 2K
    """
    if n < 2 * num_chains:
        raise BudgetTooSmall(
            f"Budget {n} cannot sample each of {num_chains} chains twice"
        )
    if t <= 2 * num_chains:
        return (t - 1) // 2
    values = [getattr(snapshot, "b", snapshot) for snapshot in snapshots]
    return int(np.argmax(values))


def allocate_largest_remainder(weights, n, minimum=1):
    """Integer allocation of n proportional to weights.

    Floors of the exact quotas are topped up by largest fractional part,
    ties going to the lowest index. Chains below minimum then take
    samples from the currently largest allocation.

    Args:
        weights (array_like): Nonnegative weights summing to one
        n (int): Total to allocate
        minimum (int): Smallest allowed allocation per entry

    Returns:
        np.ndarray of int64 summing to n
    """
    weights = np.asarray(weights, dtype=np.float64)
    if n < minimum * len(weights):
        raise BudgetTooSmall(f"Budget {n} below {minimum} per chain")
    quotas = weights * n
    allocation = np.floor(quotas).astype(np.int64)
    remainder = int(n - allocation.sum())
    order = np.argsort(-(quotas - allocation), kind="stable")
    allocation[order[:remainder]] += 1
    while (allocation < minimum).any():
        donor = int(np.argmax(allocation))
        receiver = int(np.flatnonzero(allocation < minimum)[0])
        allocation[donor] -= 1
        allocation[receiver] += 1
    return allocation


def oracle_static_allocation(instance, n):
    """Round eta_k n to integers, at least one sample per chain

    Raises:
        BudgetTooSmall: if n < K
    """
    return allocate_largest_remainder(instance.eta, n, minimum=1)


def uniform_policy(t, num_chains):
    """Round robin, 0-based chain index for the 1-based round t"""
    return (t - 1) % num_chains


@dataclass(frozen=True)
class CheckpointRecord:
    """Index of one chain at a checkpoint round, with the bounds it
    should respect on the good event and the chain's loss at that time"""

    round: int
    chain_id: int
    index: IndexSnapshot
    lower_bound: float
    upper_bound: float
    loss: float


@dataclass(eq=False)
class AllocationResult:
    """Outcome of one run.

    Attributes:
        policy (str): Canonical policy name
        budget (int): n
        seed (int): Replication seed
        pulls (np.ndarray): T_k per chain, sums to n
        loss_report (LossReport)
        beta (float): beta(n, delta) of the run
        trajectory (np.ndarray): Chain chosen each round, if kept
        history (EstimateHistory): Estimate snapshots, None when off
        checkpoints (list): CheckpointRecord per chain and checkpoint round
        event_c (bool): Whether the good event held, None when off
    """

    policy: str
    budget: int
    seed: int
    pulls: np.ndarray
    loss_report: object
    beta: float
    trajectory: Optional[np.ndarray] = None
    history: Optional[EstimateHistory] = None
    checkpoints: List[CheckpointRecord] = field(default_factory=list)
    event_c: Optional[bool] = None


def checkpoint_rounds(n):
    """Powers of two up to n, and n itself"""
    rounds = set()
    power = 1
    while power <= n:
        rounds.add(power)
        power *= 2
    rounds.add(n)
    return rounds


def _oracle_schedule(allocation):
    return np.repeat(np.arange(len(allocation)), allocation)


def run_policy(
    instance,
    policy,
    n,
    delta,
    seed,
    snapshot_mode="off",
    c=1.1,
    alpha=None,
    keep_trajectory=False,
    full_snapshot_cap=DEFAULT_FULL_SNAPSHOT_CAP,
    diagnostics=True,
    recompute_all=False,
):
    """Simulate one allocation run.

    At each round the chosen chain advances one step and is observed.
    Each chain draws from its own random stream keyed by (seed, chain),
    so chain dynamics do not depend on the policy.

    Args:
        instance (ProblemInstance)
        policy (str): bamc, uniform or oracle-static
        n (int): Budget
        delta (float): Confidence level
        seed (int): Replication seed
        snapshot_mode (str): off, checkpoints or full
        c (float): Peeling base
        alpha (float): Smoothing parameter, 1/(3S) if None
        keep_trajectory (bool): Keep the chain chosen at every round
        full_snapshot_cap (int): Largest budget for which full snapshots
            are recorded, checkpoints are used above it
        diagnostics (bool): Compute the diagnostic losses
        recompute_all (bool): Recompute every index each round instead of
            only the pulled chain's. Gives identical results, slower.

    Returns:
        AllocationResult
    """
    policy = normalize_policy(policy)
    if snapshot_mode not in SNAPSHOT_MODES:
        raise ValueError(f"Unknown snapshot mode '{snapshot_mode}'")
    num_chains = instance.num_chains
    num_states = instance.num_states
    if policy == BAMC and n < 2 * num_chains:
        raise BudgetTooSmall(f"bamc needs a budget of at least {2 * num_chains}")
    if n < num_chains:
        raise BudgetTooSmall(f"Budget {n} is smaller than the number of chains")
    if snapshot_mode == "full" and n > full_snapshot_cap:
        logger.warning(
            "Budget %d above full snapshot cap %d, using checkpoints",
            n,
            full_snapshot_cap,
        )
        snapshot_mode = "checkpoints"

    smoothing = (
        SmoothingConfig.default(num_states) if alpha is None else SmoothingConfig(alpha)
    )
    alpha = smoothing.alpha
    cfg = ConfidenceConfig(n=n, delta=delta, K=num_chains, S=num_states, c=c)
    beta_value = beta(cfg)
    logger.debug("Running %s with n=%d, seed=%d, beta=%g", policy, n, seed, beta_value)

    transitions = instance.transitions
    initial_dists = instance.initial_dists
    counts = ObservationCounts.empty(num_chains, num_states)
    processes = [ChainProcessState.from_seed(k, seed) for k in range(num_chains)]
    snapshots = [None] * num_chains
    schedule = None
    if policy == ORACLE_STATIC:
        schedule = _oracle_schedule(oracle_static_allocation(instance, n))
    trajectory = np.empty(n, dtype=np.int32) if keep_trajectory else None
    history = None if snapshot_mode == "off" else EstimateHistory(num_chains)
    checkpoints = checkpoint_rounds(n) if snapshot_mode != "off" else set()
    records = []
    true_gini = [empirical_gini(trans.entries) for trans in transitions]
    trackers = None
    if policy == BAMC or snapshot_mode == "full":
        trackers = [IndexTracker(counts_k, smoothing) for counts_k in counts.chains]

    for t in range(1, n + 1):
        if policy == BAMC:
            chain_id = bamc_select(snapshots, t, num_chains, n)
        elif policy == UNIFORM:
            chain_id = uniform_policy(t, num_chains)
        else:
            chain_id = int(schedule[t - 1])
        state, _ = step_chain(
            processes[chain_id], transitions[chain_id], initial_dists[chain_id]
        )
        previous = counts[chain_id].last_state
        record_observation(counts, chain_id, state)
        if keep_trajectory:
            trajectory[t - 1] = chain_id

        if trackers is not None:
            tracker = trackers[chain_id]
            tracker.refresh([state] if previous is None else [previous, state])
        if policy == BAMC:
            if recompute_all:
                for other in range(num_chains):
                    if counts[other].total_pulls:
                        snapshots[other] = compute_index(
                            counts[other],
                            smoothed_estimate(counts[other], smoothing),
                            beta_value,
                            alpha,
                        )
            else:
                snapshots[chain_id] = tracker.index(beta_value)
        if snapshot_mode == "full":
            history.append(
                chain_id, counts[chain_id].state_visits, tracker.estimate, t
            )

        if t in checkpoints:
            for other in range(num_chains):
                counts_k = counts[other]
                estimate_k = smoothed_estimate(counts_k, smoothing)
                if snapshot_mode == "checkpoints":
                    history.append(other, counts_k.state_visits, estimate_k, t)
                if not counts_k.total_pulls:
                    continue
                lower, upper = index_bounds(
                    counts_k, true_gini[other], beta_value, alpha
                )
                chain_loss = float(
                    empirical_stationary(counts_k)
                    @ ((transitions[other].entries - estimate_k) ** 2).sum(axis=1)
                )
                records.append(
                    CheckpointRecord(
                        round=t,
                        chain_id=other,
                        index=compute_index(counts_k, estimate_k, beta_value, alpha),
                        lower_bound=lower,
                        upper_bound=upper,
                        loss=chain_loss,
                    )
                )

    estimates = [smoothed_estimate(counts_k, smoothing) for counts_k in counts.chains]
    report = loss_report(counts, estimates, instance, beta_value, diagnostics)
    event_c = None
    if history is not None:
        event_c = event_c_holds(history, instance, cfg, alpha)
    return AllocationResult(
        policy=policy,
        budget=n,
        seed=seed,
        pulls=counts.pulls,
        loss_report=report,
        beta=beta_value,
        trajectory=trajectory,
        history=history,
        checkpoints=records,
        event_c=event_c,
    )


@dataclass(frozen=True)
class TheoryBounds:
    """Closed-form leading terms of the loss bounds at budget n.

    Higher order terms are omitted, except in thm1_with_second_order
    which adds the second term of the generic bound.
    """

    thm1_bound: float
    thm1_with_second_order: float
    thm2_main: float
    thm2_excess: float
    asymptotic_target: float

    def as_dict(self):
        """Plain dictionary of the bound values"""
        return {
            "thm1_bound": self.thm1_bound,
            "thm1_with_second_order": self.thm1_with_second_order,
            "thm2_main": self.thm2_main,
            "thm2_excess": self.thm2_excess,
            "asymptotic_target": self.asymptotic_target,
        }


def excess_constant(instance):
    """C0 = 150 K sqrt(S Lambda max_k H_k) + 3 sqrt(S Lambda) max_k H_k / eta_k"""
    analyses = instance.require_analysis()
    inv_sums = np.array([analysis.inv_stationary_sum for analysis in analyses])
    s_lambda = instance.num_states * instance.lambda_total
    return 150 * instance.num_chains * math.sqrt(
        s_lambda * inv_sums.max()
    ) + 3 * math.sqrt(s_lambda) * float((inv_sums / instance.eta).max())


def theory_bounds(instance, n, delta, c=1.1):
    """Evaluate the loss bounds at budget n

    The excess term of the refined bound needs stationary quantities,
    for instances with non-ergodic chains it is NaN.

    Returns:
        TheoryBounds
    """
    num_chains = instance.num_chains
    num_states = instance.num_states
    cfg = ConfidenceConfig(n=n, delta=delta, K=num_chains, S=num_states, c=c)
    beta_value = beta(cfg)
    thm1 = 304 * num_chains * num_states ** 2 * beta_value ** 2 / n
    if n > 2 * num_chains:
        second = (
            564 * num_chains ** 2 * num_states ** 2 * beta_value ** 2
            / (n - 2 * num_chains) ** 2
        )
    else:
        second = math.inf
    thm2_main = 2 * beta_value * instance.lambda_total / n
    if instance.analyzed:
        thm2_excess = excess_constant(instance) * beta_value ** 1.5 / n ** 1.5
    else:
        logger.warning("Instance has non-ergodic chains, excess term undefined")
        thm2_excess = math.nan
    return TheoryBounds(
        thm1_bound=thm1,
        thm1_with_second_order=thm1 + second,
        thm2_main=thm2_main,
        thm2_excess=thm2_excess,
        asymptotic_target=instance.lambda_total / n,
    )
