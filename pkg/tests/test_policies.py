"""Test module for policies"""

import math
from pathlib import Path

import numpy as np
import pytest

from bamc import policies
from bamc.chains import build_instance
from bamc.common import BudgetTooSmall, NotErgodic, NotSampled
from bamc.concentration import ConfidenceConfig, beta
from bamc.estimation import (
    ObservationCounts,
    SmoothingConfig,
    record_observation,
    smoothed_estimate,
)
from bamc.instancefiles import InstanceFile

TESTDIR = Path(__file__).absolute().parent
UNIFORM2 = [[0.5, 0.5], [0.5, 0.5]]
LAZY = [[0.5, 0.5], [0.1, 0.9]]
TWO_STATE = [[0.9, 0.1], [0.2, 0.8]]


@pytest.fixture(name="lazy")
def fixture_lazy():
    return InstanceFile(TESTDIR / "data" / "lazy.json").get_instance()


def _counts_for(sequence, num_states=2):
    counts = ObservationCounts.empty(1, num_states)
    for state in sequence:
        record_observation(counts, 0, state)
    return counts[0]


def test_normalize_policy():
    assert policies.normalize_policy("bamc") == "bamc"
    assert policies.normalize_policy("oracle_static") == "oracle-static"
    with pytest.raises(ValueError):
        policies.normalize_policy("greedy")


def test_compute_index():
    counts_k = _counts_for([0, 0])
    alpha = 1 / 6
    estimate = smoothed_estimate(counts_k, SmoothingConfig(alpha))
    index = policies.compute_index(counts_k, estimate, 2.0, alpha)
    assert index.term_gini == pytest.approx(0.632653, abs=1e-6)
    assert index.term_deviation == pytest.approx(3.67329, abs=1e-5)
    assert index.term_correction == pytest.approx(48)
    assert index.b == pytest.approx(52.30594, abs=1e-5)
    assert index.b == pytest.approx(
        index.term_gini + index.term_deviation + index.term_correction
    )

    with pytest.raises(NotSampled):
        policies.compute_index(_counts_for([]), estimate, 2.0, alpha)


def test_compute_index_decreases():
    """More samples of a chain shrink its index"""
    alpha = 1 / 6
    rng = np.random.default_rng(11)
    sequence = rng.integers(0, 2, size=2000).tolist()
    values = []
    for length in [10, 100, 1000, 2000]:
        counts_k = _counts_for(sequence[:length])
        estimate = smoothed_estimate(counts_k, SmoothingConfig(alpha))
        values.append(policies.compute_index(counts_k, estimate, 5.0, alpha).b)
    assert values == sorted(values, reverse=True)


def test_index_tracker():
    alpha = 1 / 6
    counts = ObservationCounts.empty(1, 2)
    tracker = policies.IndexTracker(counts[0], SmoothingConfig(alpha))
    assert tracker.estimate.tolist() == [[0.5, 0.5], [0.5, 0.5]]
    with pytest.raises(NotSampled):
        tracker.index(2.0)

    previous = None
    for state in [0, 0, 0, 1, 0]:
        record_observation(counts, 0, state)
        tracker.refresh([state] if previous is None else [previous, state])
        previous = state
    assert tracker.estimate[0].tolist() == pytest.approx([0.5, 7 / 26])
    assert tracker.estimate[1].tolist() == pytest.approx([7 / 8, 1 / 8])
    full = policies.compute_index(
        counts[0], smoothed_estimate(counts[0], SmoothingConfig(alpha)), 2.0, alpha
    )
    assert tracker.index(2.0).b == pytest.approx(full.b, rel=1e-12)


def test_index_bounds():
    counts_k = _counts_for([0, 0])
    lower, upper = policies.index_bounds(counts_k, np.array([0.5, 0.5]), 2.0, 1 / 6)
    # Only the visited state counts
    assert lower == pytest.approx(1.0)
    expected_upper = (
        1.0
        + 13 * 2 ** 1.5 * math.sqrt(2) / 2 * math.sqrt(0.5 / (7 / 3))
        + 39 * 4 * 2 / 2 * (3 / 7)
    )
    assert upper == pytest.approx(expected_upper)
    with pytest.raises(NotSampled):
        policies.index_bounds(_counts_for([]), np.array([0.5, 0.5]), 2.0, 1 / 6)


def test_bamc_select():
    # Initialization samples every chain twice in order
    assert [policies.bamc_select([None] * 3, t, 3, 100) for t in range(1, 7)] == [
        0,
        0,
        1,
        1,
        2,
        2,
    ]
    assert policies.bamc_select([None] * 3, 4, 3, 100) == 1
    assert policies.bamc_select([1.0, 3.0, 2.0], 7, 3, 100) == 1
    # Ties go to the lowest chain index
    assert policies.bamc_select([1.0, 3.0, 3.0], 7, 3, 100) == 1
    snapshots = [
        policies.IndexSnapshot(0, 0, 0, b) for b in [0.5, 0.25, 0.75]
    ]
    assert policies.bamc_select(snapshots, 10, 3, 100) == 2

    with pytest.raises(BudgetTooSmall):
        policies.bamc_select([None] * 3, 1, 3, 5)


def test_allocate_largest_remainder():
    assert policies.allocate_largest_remainder([0.001, 0.999], 10).tolist() == [1, 9]
    assert policies.allocate_largest_remainder([1 / 3] * 3, 10).tolist() == [4, 3, 3]
    assert policies.allocate_largest_remainder([0.25, 0.75], 8).tolist() == [2, 6]
    allocation = policies.allocate_largest_remainder([0.2, 0.3, 0.5], 1001)
    assert allocation.sum() == 1001
    with pytest.raises(BudgetTooSmall):
        policies.allocate_largest_remainder([0.5, 0.5], 1)


def test_oracle_static_allocation():
    instance = build_instance(
        [
            [
                [0.5, 0.5, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
                [0.5, 0.0, 0.0, 0.5],
            ],
            [[0.25] * 4] * 4,
        ]
    )
    assert policies.oracle_static_allocation(instance, 100).tolist() == [25, 75]
    assert policies.oracle_static_allocation(instance, 2).tolist() == [1, 1]


def test_uniform_policy():
    assert [policies.uniform_policy(t, 3) for t in range(1, 8)] == [
        0,
        1,
        2,
        0,
        1,
        2,
        0,
    ]


def test_checkpoint_rounds():
    assert policies.checkpoint_rounds(10) == {1, 2, 4, 8, 10}
    assert policies.checkpoint_rounds(16) == {1, 2, 4, 8, 16}


def test_run_uniform(lazy):
    result = policies.run_policy(lazy, "uniform", 10, 0.05, seed=1)
    assert result.pulls.tolist() == [5, 5]
    assert result.loss_report.budget == 10
    assert result.event_c is None
    assert result.history is None

    instance = build_instance([UNIFORM2, LAZY, TWO_STATE])
    result = policies.run_policy(
        instance, "uniform", 10, 0.05, seed=1, keep_trajectory=True
    )
    assert result.pulls.tolist() == [4, 3, 3]
    assert result.trajectory.tolist() == [0, 1, 2, 0, 1, 2, 0, 1, 2, 0]


def test_run_bamc(lazy):
    result = policies.run_policy(lazy, "bamc", 200, 0.05, seed=3, keep_trajectory=True)
    assert result.policy == "bamc"
    assert result.pulls.sum() == 200
    assert (result.pulls >= 2).all()
    assert result.trajectory[:4].tolist() == [0, 0, 1, 1]
    assert result.beta == pytest.approx(
        beta(ConfidenceConfig(n=200, delta=0.05, K=2, S=2))
    )
    assert result.loss_report.loss >= 0
    assert result.loss_report.loss == pytest.approx(result.loss_report.per_chain.max())

    with pytest.raises(BudgetTooSmall):
        policies.run_policy(lazy, "bamc", 3, 0.05, seed=3)


def test_run_reproducible(lazy):
    first = policies.run_policy(lazy, "bamc", 300, 0.05, seed=5, keep_trajectory=True)
    second = policies.run_policy(lazy, "bamc", 300, 0.05, seed=5, keep_trajectory=True)
    assert first.trajectory.tolist() == second.trajectory.tolist()
    assert first.loss_report.loss == second.loss_report.loss

    recomputed = policies.run_policy(
        lazy, "bamc", 300, 0.05, seed=5, keep_trajectory=True, recompute_all=True
    )
    assert recomputed.trajectory.tolist() == first.trajectory.tolist()
    assert recomputed.loss_report.loss == first.loss_report.loss


def test_run_oracle_static(lazy):
    result = policies.run_policy(
        lazy, "oracle_static", 100, 0.05, seed=2, keep_trajectory=True
    )
    assert result.policy == "oracle-static"
    expected = policies.oracle_static_allocation(lazy, 100)
    assert result.pulls.tolist() == expected.tolist()
    # Each chain's quota is sampled in one block
    assert result.trajectory.tolist() == [0] * expected[0] + [1] * expected[1]


def test_chain_dynamics_independent_of_policy():
    """A chain observes the same path whichever policy samples it"""
    instance = build_instance([LAZY])
    uniform = policies.run_policy(instance, "uniform", 50, 0.05, seed=9)
    oracle = policies.run_policy(instance, "oracle-static", 50, 0.05, seed=9)
    assert uniform.loss_report.loss == oracle.loss_report.loss


def test_run_checkpoints(lazy):
    result = policies.run_policy(
        lazy, "bamc", 16, 0.05, seed=4, snapshot_mode="checkpoints"
    )
    assert isinstance(result.event_c, bool)
    # Two chains at five checkpoint rounds
    assert len(result.history) == 10
    rounds = sorted({record.round for record in result.checkpoints})
    assert rounds == [1, 2, 4, 8, 16]
    # Only chain 1 is sampled in the first two rounds
    assert [record.chain_id for record in result.checkpoints[:2]] == [0, 0]
    assert len(result.checkpoints) == 8
    for record in result.checkpoints:
        assert record.lower_bound <= record.upper_bound
        assert record.loss >= 0


def test_run_full_snapshots(lazy, caplog):
    result = policies.run_policy(lazy, "bamc", 40, 0.05, seed=4, snapshot_mode="full")
    assert len(result.history) == 40
    assert isinstance(result.event_c, bool)

    result = policies.run_policy(
        lazy, "bamc", 40, 0.05, seed=4, snapshot_mode="full", full_snapshot_cap=20
    )
    assert "full snapshot cap" in caplog.text
    # Checkpoints 1, 2, 4, 8, 16, 32 and 40 for both chains
    assert len(result.history) == 14

    with pytest.raises(ValueError):
        policies.run_policy(lazy, "bamc", 40, 0.05, seed=4, snapshot_mode="all")


def test_excess_constant():
    instance = build_instance([UNIFORM2, UNIFORM2])
    assert policies.excess_constant(instance) == pytest.approx(1248)


def test_theory_bounds():
    instance = build_instance([UNIFORM2, UNIFORM2])
    beta_value = beta(ConfidenceConfig(n=100000, delta=0.05, K=2, S=2))
    bounds = policies.theory_bounds(instance, 100000, 0.05)
    assert bounds.thm1_bound == pytest.approx(304 * 2 * 4 * beta_value ** 2 / 1e5)
    assert bounds.thm1_with_second_order > bounds.thm1_bound
    assert bounds.thm2_main == pytest.approx(2 * beta_value * 2 / 1e5)
    assert bounds.thm2_excess == pytest.approx(1248 * beta_value ** 1.5 / 1e5 ** 1.5)
    assert bounds.asymptotic_target == pytest.approx(2 / 1e5)
    assert list(bounds.as_dict()) == [
        "thm1_bound",
        "thm1_with_second_order",
        "thm2_main",
        "thm2_excess",
        "asymptotic_target",
    ]

    # No room for the second order term at n = 2K
    assert math.isinf(policies.theory_bounds(instance, 4, 0.05).thm1_with_second_order)


def test_theory_bounds_permissive(caplog):
    instance = build_instance([UNIFORM2, [[0.5, 0.5], [0, 1]]], permissive=True)
    bounds = policies.theory_bounds(instance, 1000, 0.05)
    # The leading refined term only needs the Gini mass
    beta_value = beta(ConfidenceConfig(n=1000, delta=0.05, K=2, S=2))
    assert instance.lambda_total == pytest.approx(1.5)
    assert bounds.thm2_main == pytest.approx(2 * beta_value * 1.5 / 1000)
    assert math.isnan(bounds.thm2_excess)
    assert not math.isnan(bounds.thm1_bound)
    assert "non-ergodic" in caplog.text
    with pytest.raises(NotErgodic):
        policies.excess_constant(instance)
