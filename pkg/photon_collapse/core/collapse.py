"""Smeared photon-number observables and the discrete Gaussian collapse process."""

import logging
import math
from collections.abc import Callable, Mapping, Sequence
from functools import lru_cache

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg
from scipy.sparse.linalg import expm_multiply

from photon_collapse.core.errors import NormalizationError
from photon_collapse.core.models import (
    CollapseEvent,
    CollapseParams,
    ComplexArray,
    DensityMatrix,
    FloatArray,
    FockBasis,
    ModeLattice,
    SparseOperator,
    StateVector,
    TrajectoryRecord,
)
from photon_collapse.core.utils import derive_seed, make_rng

logger = logging.getLogger(__name__)

DENSE_EXPM_LIMIT = 512
PROPAGATOR_CACHE_SIZE = 32
HERMITICITY_TOLERANCE = 1e-10
COLLAPSE_NORM_TOLERANCE = 1e-6

Observable = Callable[[StateVector], float]
Watch = Callable[[StateVector], bool]


def gaussian_weights(lattice: ModeLattice, a: float, center_cell: int) -> FloatArray:
    """exp(-d(x_j, x_center)^2 / a^2) over all cells, minimal-image distance."""
    if not a > 0:
        raise ValueError(f"smearing length a must be positive, got {a}")
    if not 0 <= center_cell < lattice.n_cells:
        raise IndexError(f"cell index {center_cell} out of range for {lattice.n_cells} cells")
    weights: FloatArray = np.exp(-lattice.squared_distances[center_cell] / a**2)
    return weights


@lru_cache(maxsize=512)
def smeared_eigenvalues(basis: FockBasis, a: float, center_cell: int) -> FloatArray:
    """Eigenvalue of N(a, x_center) on every joint basis state."""
    weights = gaussian_weights(basis.lattice, a, center_cell)
    values = basis.lift_diagonal(basis.occupations @ weights)
    values.flags.writeable = False
    return values


def smeared_number_op(
    basis: FockBasis, lattice: ModeLattice, a: float, center_cell: int
) -> SparseOperator:
    """
    Gaussian-smeared photon number N(a, x) = sum_j exp(-d_j^2 / a^2) n_j.

    Args:
        basis: Fock basis the operator acts on
        lattice: Lattice of the basis
        a: Smearing length in meters
        center_cell: Cell hosting the collapse center x

    Returns:
        Diagonal SparseOperator
    """
    if lattice != basis.lattice:
        raise ValueError("lattice does not match the basis lattice")
    return SparseOperator.from_diagonal(basis, smeared_eigenvalues(basis, a, center_cell))


def collapse_operator(n_op: SparseOperator, b: float, n: float) -> SparseOperator:
    """(b/pi)^{1/4} exp(-(b/2) (N - n)^2) for a diagonal N."""
    if not b > 0:
        raise ValueError(f"resolution b must be positive, got {b}")
    if not n_op.is_diagonal():
        raise ValueError("collapse operators require a diagonal smeared-number operator")
    nu = np.real(n_op.diagonal())
    entries = (b / math.pi) ** 0.25 * np.exp(-0.5 * b * (nu - n) ** 2)
    return SparseOperator.from_diagonal(n_op.basis, entries)


def sample_next_event(
    params: CollapseParams,
    lattice: ModeLattice,
    t_now: float,
    horizon: float,
    rng: np.random.Generator,
) -> tuple[float, int] | None:
    """
    Draw the next collapse after t_now.

    Waiting times are exponential with total rate mu * V; the center cell is
    uniform. Returns None when the draw lands beyond the horizon.
    """
    if not horizon > t_now:
        raise ValueError(f"horizon {horizon} must exceed the current time {t_now}")
    rate = params.total_rate(lattice)
    if rate <= 0.0:
        return None
    time = t_now + float(rng.exponential(1.0 / rate))
    if time > horizon:
        return None
    return time, int(rng.integers(lattice.n_cells))


def _sector_weights(nu: FloatArray, probabilities: FloatArray) -> tuple[tuple[float, float], ...]:
    values, inverse = np.unique(np.round(nu, 12), return_inverse=True)
    weights = np.bincount(inverse.ravel(), weights=probabilities, minlength=len(values))
    return tuple((float(v), float(w)) for v, w in zip(values, weights, strict=True) if w > 0.0)


def apply_collapse(
    state: StateVector,
    cell_index: int,
    params: CollapseParams,
    rng: np.random.Generator,
    *,
    time: float = 0.0,
) -> tuple[StateVector, CollapseEvent]:
    """
    Apply one collapse centered on a cell.

    The pointer value is drawn from p(n) = ||phi_n||^2 in two stages: a basis
    state k with probability |psi_k|^2, then n ~ Normal(nu_k, 1 / (2b)). Since
    N(a, x) is diagonal in the occupation basis this reproduces the sector mixture
    exactly.

    Returns:
        Tuple of (collapsed state, event record)
    """
    amplitudes = state.amplitudes
    norm = float(np.linalg.norm(amplitudes))
    if abs(norm - 1.0) > COLLAPSE_NORM_TOLERANCE:
        raise NormalizationError(f"state norm {norm!r} differs from 1 before collapse")

    b = params.b
    nu = smeared_eigenvalues(state.basis, params.a, cell_index)
    probabilities = np.abs(amplitudes) ** 2
    probabilities /= probabilities.sum()

    cumulative = np.cumsum(probabilities)
    k = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
    k = min(k, len(probabilities) - 1)
    outcome = float(nu[k] + rng.normal(0.0, math.sqrt(1.0 / (2.0 * b))))

    # Gaussian factor in log space, shifted by its maximum over the support.
    log_factor = -0.5 * b * (nu - outcome) ** 2
    support = probabilities > 0.0
    factor = np.exp(log_factor - np.max(log_factor[support]))
    collapsed = factor * amplitudes
    new_state = StateVector.normalized(state.basis, collapsed)

    event = CollapseEvent(
        time=float(time),
        cell_index=int(cell_index),
        outcome_n=outcome,
        pre_norm_weights=_sector_weights(nu, probabilities),
    )
    return new_state, event


class UnitaryPropagator:
    """Advances state vectors under exp(-i H t) between collapses."""

    def __init__(self, hamiltonian: SparseOperator) -> None:
        deviation = hamiltonian.hermiticity_deviation()
        if deviation > HERMITICITY_TOLERANCE:
            raise ValueError(f"hamiltonian is not Hermitian (max deviation {deviation:.3e})")
        self.basis = hamiltonian.basis
        self._is_zero = hamiltonian.nnz == 0
        self._dense = hamiltonian.to_dense() if hamiltonian.basis.dim <= DENSE_EXPM_LIMIT else None
        self._sparse = hamiltonian.matrix
        self._steps: dict[float, ComplexArray] = {}

    def step_matrix(self, duration: float) -> ComplexArray:
        """Dense exp(-i H duration), cached per duration."""
        if self._dense is None:
            raise ValueError("dense propagators are limited to small bases")
        matrix = self._steps.get(duration)
        if matrix is None:
            if len(self._steps) >= PROPAGATOR_CACHE_SIZE:
                self._steps.clear()
            matrix = linalg.expm(-1j * duration * self._dense)
            self._steps[duration] = matrix
        return matrix

    def advance(self, state: StateVector, duration: float) -> StateVector:
        """State after evolving for the given duration."""
        if self._is_zero or duration <= 0.0:
            return state
        if self._dense is not None:
            evolved = self.step_matrix(duration) @ state.amplitudes
        else:
            evolved = expm_multiply(-1j * duration * self._sparse, state.amplitudes)
        return StateVector.normalized(self.basis, evolved)


def _check_sample_times(sample_times: Sequence[float], t_final: float) -> FloatArray:
    times = np.asarray(sample_times, dtype=np.float64)
    if times.size and (np.any(np.diff(times) < 0) or times[0] < 0 or times[-1] > t_final):
        raise ValueError("sample times must be sorted and lie within [0, t_final]")
    return times


def run_trajectory(
    initial: StateVector,
    hamiltonian: SparseOperator,
    params: CollapseParams,
    t_final: float,
    sample_times: Sequence[float] = (),
    seed: int = 0,
    *,
    observables: Mapping[str, Observable] | None = None,
    watch: Watch | None = None,
    keep_states: bool = False,
) -> TrajectoryRecord:
    """
    Run one stochastic collapse trajectory.

    Between events the state evolves unitarily; at each event a collapse is
    applied and the state renormalized.

    Args:
        initial: Normalized initial state
        hamiltonian: Hermitian Hamiltonian (1/s, hbar = 1)
        params: Collapse parameters
        t_final: End time in seconds
        sample_times: Sorted times in [0, t_final] at which observables are recorded
        seed: 64-bit seed of this trajectory
        observables: Named real functions of the state, evaluated at sample times
        watch: Predicate whose first true time (checked at events and samples) is recorded
        keep_states: Whether to keep state snapshots at the sample times

    Returns:
        TrajectoryRecord
    """
    if not t_final > 0:
        raise ValueError(f"t_final must be positive, got {t_final}")
    if hamiltonian.basis is not initial.basis:
        raise ValueError("hamiltonian and initial state live on different bases")
    times = _check_sample_times(sample_times, t_final)
    propagator = UnitaryPropagator(hamiltonian)
    lattice = initial.basis.lattice
    rng = make_rng(seed)
    observables = observables or {}

    series: dict[str, list[float]] = {name: [] for name in observables}
    snapshots: list[StateVector] = []
    events: list[CollapseEvent] = []
    watch_time: float | None = 0.0 if watch is not None and watch(initial) else None

    def record(current: StateVector, at: float) -> None:
        nonlocal watch_time
        for name, observable in observables.items():
            series[name].append(float(observable(current)))
        if keep_states:
            snapshots.append(current)
        if watch is not None and watch_time is None and watch(current):
            watch_time = at

    state = initial
    t = 0.0
    next_sample = 0
    while True:
        drawn = sample_next_event(params, lattice, t, t_final, rng) if t < t_final else None
        stop = drawn[0] if drawn is not None else t_final
        while next_sample < len(times) and (
            times[next_sample] < stop or (drawn is None and times[next_sample] <= stop)
        ):
            state = propagator.advance(state, times[next_sample] - t)
            t = float(times[next_sample])
            record(state, t)
            next_sample += 1
        state = propagator.advance(state, stop - t)
        t = stop
        if drawn is None:
            break
        state, event = apply_collapse(state, drawn[1], params, rng, time=t)
        events.append(event)
        if watch is not None and watch_time is None and watch(state):
            watch_time = t

    logger.debug("trajectory seed=%d finished with %d events", seed, len(events))
    return TrajectoryRecord(
        seed=seed,
        events=events,
        sample_times=[float(s) for s in times],
        final_state=state,
        sampled_states=snapshots if keep_states else None,
        observables=series,
        watch_time=watch_time,
    )


def run_ensemble(
    initial: StateVector,
    hamiltonian: SparseOperator,
    params: CollapseParams,
    t_final: float,
    sample_times: Sequence[float],
    n_trajectories: int,
    master_seed: int,
    *,
    threads: int = 1,
    observables: Mapping[str, Observable] | None = None,
    watch: Watch | None = None,
    keep_states: bool = False,
) -> list[TrajectoryRecord]:
    """
    Run independent trajectories, ordered by trajectory index.

    Trajectory i uses derive_seed(master_seed, i); the thread count never
    changes the results.
    """
    if n_trajectories < 1:
        raise ValueError(f"n_trajectories must be at least 1, got {n_trajectories}")
    seeds = [derive_seed(master_seed, index) for index in range(n_trajectories)]
    logger.info(
        "running %d trajectories (rate mu*V = %.3e 1/s, threads=%d)",
        n_trajectories,
        params.total_rate(initial.basis.lattice),
        threads,
    )
    kwargs = {"observables": observables, "watch": watch, "keep_states": keep_states}
    if threads <= 1:
        return [
            run_trajectory(initial, hamiltonian, params, t_final, sample_times, seed, **kwargs)
            for seed in seeds
        ]
    records: list[TrajectoryRecord] = Parallel(n_jobs=threads, prefer="threads")(
        delayed(run_trajectory)(initial, hamiltonian, params, t_final, sample_times, seed, **kwargs)
        for seed in seeds
    )
    return records


def ensemble_average(records: Sequence[TrajectoryRecord]) -> list[DensityMatrix]:
    """(1/M) sum_m |psi_m(t)><psi_m(t)| at every sample time."""
    if not records or records[0].sampled_states is None:
        raise ValueError("ensemble averaging needs records with sampled states")
    basis = records[0].final_state.basis
    n_samples = len(records[0].sample_times)
    averages: list[DensityMatrix] = []
    for index in range(n_samples):
        stacked: ComplexArray = np.array(
            [record.sampled_states[index].amplitudes for record in records]  # type: ignore[index]
        )
        mean = stacked.T @ stacked.conj() / len(records)
        averages.append(DensityMatrix(basis, mean))
    return averages
