"""
Finite ergodic Markov chains: validation, stationary and spectral
analysis, simulation, and the problem instances the allocation
policies are run on.
"""

import argparse
import bisect
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
import pandas as pd
import scipy.linalg

from .common import (
    ROWSUM_TOLERANCE,
    DegenerateInstance,
    NoConvergence,
    NotErgodic,
    NotReversible,
    NotStochastic,
    chain_stream,
    fill_verbose_argument,
    write_dframe_stdout_file,
)

logger = logging.getLogger(__name__)

STATIONARY_TOLERANCE = 1e-12
REVERSIBILITY_TOLERANCE = 1e-10
DEFAULT_L_MAX = 32
POWER_ITERATION_CAP = 100000

# Number of uniforms drawn at a time from a chain's random stream
UNIFORM_BLOCK = 1024


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """A validated S x S row-stochastic matrix.

    The entries array is read-only, instances can be shared between
    concurrent replications.
    """

    entries: np.ndarray
    ergodic: bool = True

    @property
    def size(self):
        """Number of states S"""
        return self.entries.shape[0]

    @cached_property
    def cumulative_rows(self):
        """Per-row cumulative sums as lists, for inverse-CDF sampling.

        The cumulative value is pinned to 1 from the last positive
        entry onwards, so a uniform in [0, 1) never lands on a
        zero-probability trailing state."""
        rows = []
        for row in self.entries:
            cum = np.cumsum(row)
            last_positive = int(np.flatnonzero(row > 0)[-1])
            cum[last_positive:] = 1.0
            rows.append(cum.tolist())
        return rows


@dataclass(frozen=True, eq=False)
class ChainAnalysis:
    """Instance-level quantities derived from one transition matrix"""

    stationary: np.ndarray
    min_stationary: float
    gini: np.ndarray
    inv_stationary_sum: float
    reversible: bool
    spectral_gap: Optional[float]
    pseudo_spectral_gap: float


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """K chains on a common state space, with their allocation summary.

    Attributes:
        chains (tuple): (TransitionMatrix, ChainAnalysis) pairs. The
            analysis is None only for non-ergodic chains accepted in
            permissive mode.
        lambda_total (float): Total Gini mass over chains and states
        eta (np.ndarray): Asymptotically optimal sampling fractions
        initial_dists (tuple): One initial state distribution per chain
    """

    chains: Tuple[Tuple[TransitionMatrix, Optional[ChainAnalysis]], ...]
    lambda_total: float
    eta: np.ndarray
    initial_dists: Tuple[np.ndarray, ...]

    @property
    def num_chains(self):
        """K"""
        return len(self.chains)

    @property
    def num_states(self):
        """S"""
        return self.chains[0][0].size

    @property
    def transitions(self):
        """List of the K TransitionMatrix objects"""
        return [pair[0] for pair in self.chains]

    @property
    def analyses(self):
        """List of the K ChainAnalysis objects (None for non-ergodic chains)"""
        return [pair[1] for pair in self.chains]

    @property
    def sum_gini(self):
        """Per-chain total Gini index, sum_x G_k(x)"""
        return np.array([gini_index(trans).sum() for trans in self.transitions])

    @property
    def analyzed(self):
        """True if every chain carries an analysis"""
        return all(analysis is not None for analysis in self.analyses)

    def require_analysis(self):
        """Return the analyses, raising if any chain lacks one"""
        if not self.analyzed:
            raise NotErgodic(
                "Instance contains non-ergodic chains, stationary quantities "
                "are undefined"
            )
        return self.analyses


@dataclass(eq=False)
class ChainProcessState:
    """The running state of one chain in one replication.

    Single-writer: only step_chain() changes current_state. A state of
    None means the chain has not been observed yet.
    """

    chain_id: int
    rng: np.random.Generator
    current_state: Optional[int] = None
    _uniforms: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    _position: int = 0

    @classmethod
    def from_seed(cls, chain_id, seed):
        """Make an unstarted chain process with its own random stream"""
        return cls(chain_id=chain_id, rng=chain_stream(seed, chain_id))

    def next_uniform(self):
        """Next uniform from the chain's stream, refilled in blocks"""
        if self._position >= len(self._uniforms):
            self._uniforms = self.rng.random(UNIFORM_BLOCK)
            self._position = 0
        value = self._uniforms[self._position]
        self._position += 1
        return value


def is_ergodic(entries):
    """Test ergodicity from the positivity pattern.

    The chain is ergodic iff some power P^m is entrywise positive.
    Since every row has a positive entry, positivity persists in higher
    powers, so it is enough to square the boolean pattern until the
    exponent reaches S^2.

    Args:
        entries (np.ndarray): Row-stochastic matrix

    Returns:
        bool
    """
    size = entries.shape[0]
    pattern = (entries > 0).astype(np.int64)
    exponent = 1
    while True:
        if pattern.all():
            return True
        if exponent >= size * size:
            return False
        pattern = (pattern @ pattern > 0).astype(np.int64)
        exponent *= 2


def validate_chain(matrix, permissive=False):
    """Validate a transition matrix.

    Args:
        matrix (array_like): S x S matrix, S >= 2
        permissive (bool): Accept reducible or periodic chains. Only the
            generic loss bound stays meaningful for such chains.

    Returns:
        TransitionMatrix

    Raises:
        NotStochastic: shape, finiteness, entry range or row sums are wrong
        NotErgodic: the chain is not ergodic and permissive is False
    """
    entries = np.array(matrix, dtype=np.float64)
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        raise NotStochastic(f"Transition matrix must be square, got {entries.shape}")
    if entries.shape[0] < 2:
        raise NotStochastic("Transition matrix needs at least two states")
    if not np.isfinite(entries).all():
        raise NotStochastic("Transition matrix has non-finite entries")
    if (entries < 0).any() or (entries > 1).any():
        bad_row = int(np.flatnonzero(((entries < 0) | (entries > 1)).any(axis=1))[0])
        raise NotStochastic(f"Row {bad_row} has entries outside [0, 1]", bad_row)
    rowsums = entries.sum(axis=1)
    offending = np.flatnonzero(np.abs(rowsums - 1.0) > ROWSUM_TOLERANCE)
    if len(offending):
        bad_row = int(offending[0])
        raise NotStochastic(
            f"Row {bad_row} sums to {rowsums[bad_row]!r}, not 1", bad_row
        )
    ergodic = is_ergodic(entries)
    if not ergodic:
        if not permissive:
            raise NotErgodic("Transition matrix is reducible or periodic")
        logger.warning("Accepting non-ergodic chain in permissive mode")
    entries.setflags(write=False)
    return TransitionMatrix(entries=entries, ergodic=ergodic)


def _stationarity_residual(entries, stationary):
    return float(np.max(np.abs(stationary @ entries - stationary)))


def _power_iteration(entries, tol, max_iter):
    size = entries.shape[0]
    stationary = np.full(size, 1.0 / size)
    for _ in range(max_iter):
        stationary = stationary @ entries
        stationary /= stationary.sum()
        if _stationarity_residual(entries, stationary) <= tol:
            return stationary
    raise NoConvergence(
        f"Power iteration did not reach tolerance {tol} in {max_iter} iterations"
    )


def stationary_distribution(transition, tol=STATIONARY_TOLERANCE):
    """Compute the stationary distribution pi = pi P.

    Solves (I - P^T + 11^T) pi = 1 directly, falling back to power
    iteration if the system is singular or the solve misses the tolerance.

    Args:
        transition (TransitionMatrix): Validated ergodic chain
        tol (float): Bound on max |pi P - pi|

    Returns:
        np.ndarray: strictly positive probability vector

    Raises:
        NoConvergence
    """
    entries = transition.entries
    size = transition.size
    system = np.eye(size) - entries.T + np.ones((size, size))
    stationary = None
    try:
        stationary = scipy.linalg.solve(system, np.ones(size))
        stationary = stationary / stationary.sum()
        if _stationarity_residual(entries, stationary) > tol:
            logger.debug("Direct solve missed tolerance, trying power iteration")
            stationary = None
    except (scipy.linalg.LinAlgError, ValueError):
        logger.debug("Singular stationary system, trying power iteration")
    if stationary is None:
        stationary = _power_iteration(entries, tol, POWER_ITERATION_CAP)
    if (stationary <= 0).any():
        raise NoConvergence("Stationary distribution is not strictly positive")
    return stationary


def gini_index(transition):
    """Per-state Gini index G(x) = sum_y P(x,y)(1 - P(x,y))"""
    entries = getattr(transition, "entries", transition)
    return (entries * (1.0 - entries)).sum(axis=1)


def _gap_of_selfadjoint(matrix, stationary):
    """Absolute spectral gap of a matrix self-adjoint in L2(pi)"""
    sqrt_pi = np.sqrt(stationary)
    symmetric = sqrt_pi[:, None] * matrix / sqrt_pi[None, :]
    eigenvalues = scipy.linalg.eigvalsh(0.5 * (symmetric + symmetric.T))
    magnitudes = np.sort(np.abs(eigenvalues))[::-1]
    return float(1.0 - magnitudes[1])


def is_reversible(transition, stationary, tol=REVERSIBILITY_TOLERANCE):
    """Check detailed balance pi(x)P(x,y) = pi(y)P(y,x)"""
    flux = stationary[:, None] * transition.entries
    return bool(np.max(np.abs(flux - flux.T)) <= tol)


def spectral_gap(transition, stationary):
    """Absolute spectral gap 1 - lambda_star of a reversible chain.

    Args:
        transition (TransitionMatrix): Validated chain
        stationary (np.ndarray): Its stationary distribution

    Returns:
        float in (0, 1]

    Raises:
        NotReversible: if detailed balance fails
    """
    if not is_reversible(transition, stationary):
        raise NotReversible("Detailed balance does not hold")
    return _gap_of_selfadjoint(transition.entries, stationary)


def time_reversal(transition, stationary):
    """P*(x,y) = pi(y) P(y,x) / pi(x)"""
    return transition.entries.T * stationary[None, :] / stationary[:, None]


def pseudo_spectral_gap(transition, stationary, l_max=DEFAULT_L_MAX):
    """Pseudo-spectral gap, max over l of gap((P*)^l P^l) / l.

    The supremum over all l >= 1 is truncated at l_max, so the result is
    a lower bound on the true pseudo-spectral gap.

    Args:
        transition (TransitionMatrix): Validated ergodic chain
        stationary (np.ndarray): Its stationary distribution
        l_max (int): Largest power considered

    Returns:
        float
    """
    if l_max < 1:
        raise ValueError("l_max must be at least 1")
    entries = transition.entries
    reversal = time_reversal(transition, stationary)
    power = np.eye(transition.size)
    reversal_power = np.eye(transition.size)
    best = 0.0
    for ell in range(1, l_max + 1):
        power = power @ entries
        reversal_power = reversal_power @ reversal
        gap = _gap_of_selfadjoint(reversal_power @ power, stationary)
        best = max(best, gap / ell)
    return best


def analyze_chain(transition, l_max=DEFAULT_L_MAX):
    """Compute all stationary and mixing quantities for one chain

    Args:
        transition (TransitionMatrix): Validated ergodic chain

    Returns:
        ChainAnalysis
    """
    stationary = stationary_distribution(transition)
    try:
        gap = spectral_gap(transition, stationary)
        reversible = True
    except NotReversible:
        gap = None
        reversible = False
    stationary.setflags(write=False)
    gini = gini_index(transition)
    gini.setflags(write=False)
    inv_sum = float((1.0 / stationary).sum())
    size = transition.size
    if not size ** 2 * (1 - 1e-9) <= inv_sum <= size / stationary.min() * (1 + 1e-9):
        logger.error("H=%g outside [S^2, S/min(pi)], numerical trouble", inv_sum)
    return ChainAnalysis(
        stationary=stationary,
        min_stationary=float(stationary.min()),
        gini=gini,
        inv_stationary_sum=inv_sum,
        reversible=reversible,
        spectral_gap=gap,
        pseudo_spectral_gap=pseudo_spectral_gap(transition, stationary, l_max),
    )


def step_chain(state, transition, p_init):
    """Advance a chain one step and observe it.

    An unstarted chain draws its first state from p_init, otherwise
    the next state is drawn from the row of the current state. The draw
    is a deterministic function of the chain's stream position.

    Args:
        state (ChainProcessState): Mutated in place
        transition (TransitionMatrix): The chain's dynamics
        p_init (np.ndarray): Initial distribution

    Returns:
        tuple: (observed state index, the same ChainProcessState)
    """
    uniform = state.next_uniform()
    if state.current_state is None:
        cumulative = np.cumsum(p_init)
        cumulative[int(np.flatnonzero(np.asarray(p_init) > 0)[-1]) :] = 1.0
        new_state = bisect.bisect_right(cumulative.tolist(), uniform)
    else:
        new_state = bisect.bisect_right(
            transition.cumulative_rows[state.current_state], uniform
        )
    state.current_state = new_state
    return new_state, state


def _validate_initial_dist(dist, size):
    dist = np.array(dist, dtype=np.float64)
    if dist.shape != (size,):
        raise NotStochastic(f"Initial distribution must have length {size}")
    if (dist < 0).any() or abs(dist.sum() - 1.0) > ROWSUM_TOLERANCE:
        raise NotStochastic("Initial distribution is not a probability vector")
    dist.setflags(write=False)
    return dist


def build_instance(matrices, initial_dists=None, permissive=False):
    """Validate K chains and compute the allocation summary.

    Args:
        matrices (list): K square matrices on a common state space
        initial_dists (list): K probability vectors, uniform if None
        permissive (bool): Accept non-ergodic chains (no analysis for them)

    Returns:
        ProblemInstance

    Raises:
        DegenerateInstance: if some chain has zero total Gini index
        NotStochastic, NotErgodic, NoConvergence: from validation
    """
    if len(matrices) < 1:
        raise ValueError("Need at least one chain")
    transitions = [validate_chain(matrix, permissive=permissive) for matrix in matrices]
    size = transitions[0].size
    if any(trans.size != size for trans in transitions):
        raise NotStochastic("All chains must share the same number of states")

    sum_gini = np.array([gini_index(trans).sum() for trans in transitions])
    degenerate = np.flatnonzero(sum_gini <= 0)
    if len(degenerate):
        raise DegenerateInstance(
            f"Chain {int(degenerate[0]) + 1} has deterministic transitions"
        )
    lambda_total = float(sum_gini.sum())
    eta = sum_gini / lambda_total
    eta.setflags(write=False)
    if lambda_total > len(transitions) * (size - 1) * (1 + 1e-12):
        logger.error("Lambda=%g exceeds K(S-1), this should not happen", lambda_total)

    if initial_dists is None:
        initial_dists = [np.full(size, 1.0 / size)] * len(transitions)
    if len(initial_dists) != len(transitions):
        raise ValueError("Need one initial distribution per chain")
    initial_dists = tuple(_validate_initial_dist(dist, size) for dist in initial_dists)

    chains = []
    for idx, trans in enumerate(transitions):
        analysis = analyze_chain(trans) if trans.ergodic else None
        if analysis is not None:
            logger.info(
                "Chain %d: sum G = %.6g, min pi = %.6g, gamma_ps = %.6g",
                idx + 1,
                sum_gini[idx],
                analysis.min_stationary,
                analysis.pseudo_spectral_gap,
            )
        chains.append((trans, analysis))
    return ProblemInstance(
        chains=tuple(chains),
        lambda_total=lambda_total,
        eta=eta,
        initial_dists=initial_dists,
    )


def df(instance):
    """Produce a dataframe with one row per chain and state.

    Columns are CHAIN, STATE, PI, GINI and P_1 .. P_S holding the
    transition row. PI is empty for non-ergodic chains.

    Args:
        instance (ProblemInstance)

    Returns:
        pd.DataFrame
    """
    rows = []
    for chain_idx, (trans, analysis) in enumerate(instance.chains):
        gini = gini_index(trans)
        for state in range(trans.size):
            row = {
                "CHAIN": chain_idx + 1,
                "STATE": state + 1,
                "PI": analysis.stationary[state] if analysis else np.nan,
                "GINI": gini[state],
            }
            for target in range(trans.size):
                row[f"P_{target + 1}"] = trans.entries[state, target]
            rows.append(row)
    return pd.DataFrame(rows)


def summary_df(instance, delta=None):
    """Produce a dataframe with one row per chain.

    Columns: CHAIN, SUM_GINI, ETA, H, MIN_PI, REVERSIBLE, GAMMA, GAMMA_PS.
    If delta is given, the instance-wide N_CUTOFF is added as a column.
    """
    rows = []
    for chain_idx, (trans, analysis) in enumerate(instance.chains):
        rows.append(
            {
                "CHAIN": chain_idx + 1,
                "SUM_GINI": gini_index(trans).sum(),
                "ETA": instance.eta[chain_idx],
                "H": analysis.inv_stationary_sum if analysis else np.nan,
                "MIN_PI": analysis.min_stationary if analysis else np.nan,
                "REVERSIBLE": analysis.reversible if analysis else False,
                "GAMMA": (
                    analysis.spectral_gap
                    if analysis and analysis.spectral_gap is not None
                    else np.nan
                ),
                "GAMMA_PS": analysis.pseudo_spectral_gap if analysis else np.nan,
            }
        )
    dframe = pd.DataFrame(rows)
    if delta is not None and instance.analyzed:
        # pylint: disable=import-outside-toplevel
        from .concentration import n_cutoff

        dframe["N_CUTOFF"] = n_cutoff(instance, delta)
    return dframe


def _delta_argument(value):
    """argparse type for a confidence level strictly between 0 and 1"""
    delta = float(value)
    if not 0 < delta < 1:
        raise argparse.ArgumentTypeError(f"delta must be in (0, 1), got {value}")
    return delta


def fill_parser(parser):
    """Set up sys.argv parsers.

    Arguments:
        parser: argparse.ArgumentParser or argparse.subparser
    """
    parser.add_argument(
        "--instance", required=True, help="Name of instance file (JSON)."
    )
    parser.add_argument(
        "--delta",
        type=_delta_argument,
        default=0.05,
        help="Confidence parameter used for the cutoff budget.",
    )
    parser.add_argument(
        "--states",
        action="store_true",
        help="Output one row per chain and state instead of one row per chain.",
    )
    parser.add_argument(
        "-o",
        "--output",
        type=str,
        help="Name of output csv file. Use '-' for stdout.",
        default="-",
    )
    fill_verbose_argument(parser)
    return parser


def analyze_main(args):
    """Read an instance file and write its analysis as CSV"""
    if args.verbose:
        logging.basicConfig(level=logging.INFO)
    # pylint: disable=import-outside-toplevel
    from .instancefiles import InstanceFile

    instance = InstanceFile(args.instance).get_instance()
    if args.states:
        dframe = df(instance)
    else:
        dframe = summary_df(instance, delta=args.delta)
        logger.info("Lambda = %g", instance.lambda_total)
    write_dframe_stdout_file(
        dframe,
        args.output,
        index=False,
        caller_logger=logger,
        logstr=f"Wrote to {args.output}",
    )
