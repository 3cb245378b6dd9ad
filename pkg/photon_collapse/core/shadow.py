"""Two-branch dust grain whose position is recorded in the ambient photon field."""

import dataclasses
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import expm_multiply

from photon_collapse.core.collapse import run_ensemble, smeared_eigenvalues
from photon_collapse.core.errors import NormalizationError
from photon_collapse.core.lattice import annihilation_op
from photon_collapse.core.models import (
    CollapseParams,
    DensityMatrix,
    FockBasis,
    SparseOperator,
    StateVector,
    TrajectoryRecord,
)
from photon_collapse.core.utils import json_number

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.1
SCATTERING_NORM_TOLERANCE = 1e-8


@dataclass(frozen=True)
class ShadowModel:
    """
    Ambient light with a branch-dependent shadow.

    ``branch_shadow_cells[0]`` are the cells shadowed when the grain sits at A,
    ``branch_shadow_cells[1]`` those shadowed at B. A shadowed cell holds
    round(ambient_occupancy * (1 - deficit)) photons. ``reservoir_cells`` pairs a
    shadow cell with the cell receiving its scattered photons; reservoirs start
    empty. ``rate_multiplier`` stands in for shadow cells that are not simulated.
    """

    branch_shadow_cells: tuple[frozenset[int], frozenset[int]]
    deficit: float = 1.0 / 3.0
    ambient_occupancy: int = 3
    reservoir_cells: tuple[tuple[int, int], ...] = ()
    rate_multiplier: float = 1.0

    def __post_init__(self) -> None:
        shadow_a, shadow_b = (frozenset(cells) for cells in self.branch_shadow_cells)
        object.__setattr__(self, "branch_shadow_cells", (shadow_a, shadow_b))
        object.__setattr__(
            self, "reservoir_cells", tuple((int(s), int(r)) for s, r in self.reservoir_cells)
        )
        if shadow_a & shadow_b:
            raise ValueError(f"branch shadows overlap in cells {sorted(shadow_a & shadow_b)}")
        if not 0.0 <= self.deficit <= 1.0:
            raise ValueError(f"deficit must lie in [0, 1], got {self.deficit}")
        if self.ambient_occupancy < 0:
            raise ValueError(f"ambient_occupancy must be non-negative: {self.ambient_occupancy}")
        if not self.rate_multiplier > 0:
            raise ValueError(f"rate_multiplier must be positive, got {self.rate_multiplier}")
        reservoirs = {r for _, r in self.reservoir_cells}
        if reservoirs & (shadow_a | shadow_b):
            raise ValueError(
                f"reservoir cells {sorted(reservoirs & (shadow_a | shadow_b))} overlap shadow cells"
            )
        if any(s == r for s, r in self.reservoir_cells):
            raise ValueError("a reservoir cell cannot scatter into itself")

    @property
    def shadow_occupancy(self) -> int:
        """Photons left in a shadowed cell."""
        return int(round(self.ambient_occupancy * (1.0 - self.deficit)))

    @property
    def reservoirs(self) -> frozenset[int]:
        """Cells that receive scattered photons."""
        return frozenset(r for _, r in self.reservoir_cells)

    def photon_configuration(self, branch: int, n_cells: int) -> tuple[int, ...]:
        """Definite occupation vector of the photons when the grain is in a branch."""
        shadow = self.branch_shadow_cells[branch]
        reservoirs = self.reservoirs
        return tuple(
            0 if cell in reservoirs
            else self.shadow_occupancy if cell in shadow
            else self.ambient_occupancy
            for cell in range(n_cells)
        )

    def check_cells(self, n_cells: int) -> None:
        """Raise IndexError when a referenced cell is outside the lattice."""
        cells = set(self.branch_shadow_cells[0]) | set(self.branch_shadow_cells[1])
        cells |= {c for pair in self.reservoir_cells for c in pair}
        outside = sorted(c for c in cells if not 0 <= c < n_cells)
        if outside:
            raise IndexError(f"cells {outside} out of range for {n_cells} cells")

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready model."""
        return {
            "branch_shadow_cells": [sorted(cells) for cells in self.branch_shadow_cells],
            "deficit": self.deficit,
            "ambient_occupancy": self.ambient_occupancy,
            "shadow_occupancy": self.shadow_occupancy,
            "reservoir_cells": [list(pair) for pair in self.reservoir_cells],
            "rate_multiplier": self.rate_multiplier,
        }


def _check_two_branches(basis: FockBasis) -> None:
    if basis.matter_dim != 2:
        raise ValueError(f"the grain model needs matter_dim = 2, got {basis.matter_dim}")


def build_joint_state(
    grain_amplitudes: Sequence[complex], shadow_model: ShadowModel, basis: FockBasis
) -> StateVector:
    """
    c_A |A> (x) |photons shadowed by A> + c_B |B> (x) |photons shadowed by B>.

    Args:
        grain_amplitudes: Normalized (c_A, c_B)
        shadow_model: Shadow geometry and ambient occupancy
        basis: Joint basis with matter_dim = 2

    Returns:
        Normalized joint StateVector
    """
    _check_two_branches(basis)
    if len(grain_amplitudes) != 2:
        raise ValueError(f"expected two grain amplitudes, got {len(grain_amplitudes)}")
    n_cells = basis.lattice.n_cells
    shadow_model.check_cells(n_cells)

    amplitudes = np.zeros(basis.dim, dtype=np.complex128)
    for branch, coefficient in enumerate(grain_amplitudes):
        configuration = shadow_model.photon_configuration(branch, n_cells)
        if sum(configuration) > basis.max_total:
            raise ValueError(
                f"cutoff {basis.max_total} too small for {sum(configuration)} ambient photons"
            )
        amplitudes[basis.joint_index(configuration, branch)] += complex(coefficient)
    return StateVector(basis, amplitudes)


def _scattering_generator(shadow_model: ShadowModel, basis: FockBasis) -> sparse.csr_matrix:
    n_occ = basis.n_occupations
    generator = sparse.csr_matrix((basis.dim, basis.dim), dtype=np.complex128)
    for branch in range(2):
        projector = sparse.kron(
            sparse.diags(np.eye(2)[branch]), sparse.identity(n_occ), format="csr"
        )
        for shadow_cell, reservoir in shadow_model.reservoir_cells:
            if shadow_cell not in shadow_model.branch_shadow_cells[branch]:
                continue
            a_s = annihilation_op(basis, shadow_cell).matrix
            a_r = annihilation_op(basis, reservoir).matrix
            transfer = a_r.conj().T @ a_s
            generator = generator + projector @ (transfer - transfer.conj().T)
    return generator.tocsr()


def apply_shadow_scattering(
    joint: StateVector, shadow_model: ShadowModel, strength: float
) -> StateVector:
    """
    Branch-controlled beam splitter exp(theta (a_r^dagger a_s - a_s^dagger a_r)).

    In each branch every (shadow, reservoir) pair whose shadow cell belongs to
    that branch is rotated by ``strength``. Total photon number is conserved, so
    the map is exactly unitary on the truncated basis; a norm change beyond
    SCATTERING_NORM_TOLERANCE raises NormalizationError before renormalizing.
    """
    basis = joint.basis
    _check_two_branches(basis)
    shadow_model.check_cells(basis.lattice.n_cells)
    if strength == 0.0 or not shadow_model.reservoir_cells:
        return joint
    generator = _scattering_generator(shadow_model, basis)
    rotated = expm_multiply(strength * generator, joint.amplitudes)
    norm = float(np.linalg.norm(rotated))
    if abs(norm - 1.0) > SCATTERING_NORM_TOLERANCE:
        raise NormalizationError(f"scattering changed the state norm to {norm!r}")
    return StateVector.normalized(basis, rotated)


def _reduced(state_or_rho: StateVector | DensityMatrix) -> np.ndarray:
    _check_two_branches(state_or_rho.basis)
    return state_or_rho.reduced_matter()


def grain_coherence(state_or_rho: StateVector | DensityMatrix) -> float:
    """|<A| tr_photons(rho) |B>|."""
    return float(abs(_reduced(state_or_rho)[0, 1]))


def branch_coherence(state_or_rho: StateVector | DensityMatrix) -> float:
    """
    Trace norm of the A-B block of the joint state.

    This is the grain superposition that survives when the which-path record
    held by the photons is disregarded; for a pure state it equals |c_A| |c_B|.
    Entanglement alone leaves it unchanged, collapses reduce it.
    """
    basis = state_or_rho.basis
    _check_two_branches(basis)
    if isinstance(state_or_rho, StateVector):
        blocks = state_or_rho.matter_blocks()
        return float(np.linalg.norm(blocks[0]) * np.linalg.norm(blocks[1]))
    n = basis.n_occupations
    block = state_or_rho.matrix.reshape(2, n, 2, n)[0, :, 1, :]
    return float(np.linalg.norm(block, ord="nuc"))


def branch_distinguishing_rate(
    shadow_model: ShadowModel, params: CollapseParams, basis: FockBasis
) -> float:
    """
    Decay rate of branch coherence, mu V_cell sum_x (1 - exp(-(b/4) dnu_x^2)).

    dnu_x is the smeared-number gap between the two branch photon configurations
    for a collapse centered on cell x; mu includes the rate multiplier. The gaps are
    taken between the unscattered shadow configurations, so the rate is exact only
    without scattering; after apply_shadow_scattering it is an estimate.
    """
    _check_two_branches(basis)
    n_cells = basis.lattice.n_cells
    index_a = basis.joint_index(shadow_model.photon_configuration(0, n_cells), 0)
    index_b = basis.joint_index(shadow_model.photon_configuration(1, n_cells), 1)
    gaps = np.array(
        [
            smeared_eigenvalues(basis, params.a, cell)[index_a]
            - smeared_eigenvalues(basis, params.a, cell)[index_b]
            for cell in range(n_cells)
        ]
    )
    per_event = 1.0 - np.exp(-0.25 * params.b * gaps**2)
    cell_rate = params.cell_rate(basis.lattice) * shadow_model.rate_multiplier
    return float(cell_rate * per_event.sum())


@dataclass(frozen=True)
class CoherencePoint:
    """Ensemble statistics of branch coherence at one sample time."""

    time: float
    mean: float
    median: float
    q1: float
    q3: float
    analytic_mean: float


@dataclass(frozen=True)
class ThresholdPoint:
    """First sampled crossing of a coherence threshold."""

    threshold: float
    median: float
    censored: int


@dataclass(frozen=True)
class ShadowStatistics:
    """First-passage statistics of the grain localization."""

    threshold: float
    n_trajectories: int
    t_final: float
    crossing_times: tuple[float, ...]
    censored: int
    median: float
    q1: float
    q3: float
    distinguishing_rate: float
    analytic_time: float
    analytic_median: float
    curve: tuple[CoherencePoint, ...]
    thresholds: tuple[ThresholdPoint, ...]

    @property
    def all_censored(self) -> bool:
        """True when no trajectory crossed the threshold before t_final."""
        return self.censored == self.n_trajectories

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready summary; infinite times appear as null."""
        return {
            "threshold": self.threshold,
            "n_trajectories": self.n_trajectories,
            "t_final": self.t_final,
            "censored": self.censored,
            "median": json_number(self.median),
            "q1": json_number(self.q1),
            "q3": json_number(self.q3),
            "distinguishing_rate": self.distinguishing_rate,
            "analytic_time": json_number(self.analytic_time),
            "analytic_median": json_number(self.analytic_median),
            "crossing_times": [json_number(t) for t in self.crossing_times],
            "thresholds": [
                {"threshold": p.threshold, "median": json_number(p.median), "censored": p.censored}
                for p in self.thresholds
            ],
        }


def order_statistic(values: Sequence[float], q: float) -> float:
    """Inverted-CDF quantile: the smallest value whose empirical CDF reaches q."""
    ordered = np.sort(np.asarray(values, dtype=np.float64))
    index = min(max(math.ceil(q * len(ordered)) - 1, 0), len(ordered) - 1)
    return float(ordered[index])


def _quantiles(values: Sequence[float]) -> tuple[float, float, float]:
    # censored entries are inf, so interpolating quantiles are not usable here
    return (
        order_statistic(values, 0.5),
        order_statistic(values, 0.25),
        order_statistic(values, 0.75),
    )


def _horizon(
    rate: float, params: CollapseParams, shadow_model: ShadowModel, basis: FockBasis
) -> float:
    if rate > 0:
        return 20.0 / rate
    cell_rate = params.cell_rate(basis.lattice) * shadow_model.rate_multiplier
    return 10.0 / cell_rate if cell_rate > 0 else 1.0


def coherence_curve(
    records: Sequence[TrajectoryRecord], initial_coherence: float, rate: float
) -> tuple[CoherencePoint, ...]:
    """Mean, median and quartiles of branch coherence at each sample time."""
    times = records[0].sample_times
    values = np.array([record.observables["branch_coherence"] for record in records])
    points = []
    for index, time in enumerate(times):
        median, q1, q3 = _quantiles(values[:, index])
        points.append(
            CoherencePoint(
                time=time,
                mean=float(values[:, index].mean()),
                median=median,
                q1=q1,
                q3=q3,
                analytic_mean=initial_coherence * math.exp(-rate * time),
            )
        )
    return tuple(points)


def threshold_curve(
    records: Sequence[TrajectoryRecord], thresholds: Sequence[float]
) -> tuple[ThresholdPoint, ...]:
    """Median first sample time at which branch coherence falls below each threshold."""
    times = np.asarray(records[0].sample_times)
    values = np.array([record.observables["branch_coherence"] for record in records])
    points = []
    for threshold in thresholds:
        below = values < threshold
        first = np.where(below.any(axis=1), times[np.argmax(below, axis=1)], np.inf)
        median, _, _ = _quantiles(first)
        points.append(ThresholdPoint(float(threshold), median, int(np.isinf(first).sum())))
    return tuple(points)


def effective_collapse_time(
    shadow_model: ShadowModel,
    collapse_params: CollapseParams,
    hamiltonian: SparseOperator,
    threshold: float = DEFAULT_THRESHOLD,
    n_trajectories: int = 200,
    seed: int = 0,
    *,
    grain_amplitudes: Sequence[complex] = (math.sqrt(0.5), math.sqrt(0.5)),
    t_final: float | None = None,
    n_samples: int = 41,
    scattering_strength: float = 0.0,
    threads: int = 1,
    thresholds: Sequence[float] = (0.4, 0.3, 0.2, 0.1, 0.05, 0.01),
) -> ShadowStatistics:
    """
    Time until photon-only collapses effectively localize the grain.

    Each trajectory records the first time its branch coherence drops below
    ``threshold``; trajectories that never cross before ``t_final`` count as
    censored and enter the statistics as infinite times.

    Args:
        shadow_model: Shadow geometry; its rate multiplier scales mu
        collapse_params: Collapse parameters before the multiplier
        hamiltonian: Hamiltonian on the joint basis (matter_dim = 2)
        threshold: Coherence level regarded as collapsed, in (0, 0.5)
        n_trajectories: Ensemble size
        seed: Master seed
        grain_amplitudes: Initial (c_A, c_B)
        t_final: Horizon (default 20 / distinguishing rate)
        n_samples: Number of coherence samples on [0, t_final]
        scattering_strength: Beam-splitter angle applied before the run
        threads: Worker threads; results do not depend on it
        thresholds: Extra thresholds for the sampled threshold curve

    Returns:
        ShadowStatistics
    """
    if not 0.0 < threshold < 0.5:
        raise ValueError(f"threshold must lie in (0, 0.5), got {threshold}")
    if n_samples < 2:
        raise ValueError(f"n_samples must be at least 2, got {n_samples}")
    basis = hamiltonian.basis
    initial = build_joint_state(grain_amplitudes, shadow_model, basis)
    initial = apply_shadow_scattering(initial, shadow_model, scattering_strength)

    effective = dataclasses.replace(
        collapse_params, mu=collapse_params.mu * shadow_model.rate_multiplier
    )
    rate = branch_distinguishing_rate(shadow_model, collapse_params, basis)
    horizon = t_final
    if horizon is None:
        horizon = _horizon(rate, collapse_params, shadow_model, basis)
    sample_times = tuple(float(t) for t in np.linspace(0.0, horizon, n_samples))
    logger.info(
        "shadow run: distinguishing rate %.4e 1/s, horizon %.4e s, %d trajectories",
        rate,
        horizon,
        n_trajectories,
    )

    records = run_ensemble(
        initial,
        hamiltonian,
        effective,
        horizon,
        sample_times,
        n_trajectories,
        seed,
        threads=threads,
        observables={"branch_coherence": branch_coherence, "grain_coherence": grain_coherence},
        watch=lambda state: branch_coherence(state) < threshold,
    )
    crossings = tuple(
        record.watch_time if record.watch_time is not None else math.inf for record in records
    )
    censored = sum(1 for t in crossings if math.isinf(t))
    if censored:
        logger.warning(
            "%d of %d trajectories never crossed %.3g", censored, len(records), threshold
        )
    median, q1, q3 = _quantiles(crossings)
    return ShadowStatistics(
        threshold=threshold,
        n_trajectories=n_trajectories,
        t_final=horizon,
        crossing_times=crossings,
        censored=censored,
        median=median,
        q1=q1,
        q3=q3,
        distinguishing_rate=rate,
        analytic_time=1.0 / rate if rate > 0 else math.inf,
        analytic_median=math.log(2.0) / rate if rate > 0 else math.inf,
        curve=coherence_curve(records, branch_coherence(initial), rate),
        thresholds=threshold_curve(records, thresholds),
    )


def resolution_sweep(
    shadow_model: ShadowModel,
    collapse_params: CollapseParams,
    basis: FockBasis,
    resolutions: Sequence[float],
) -> list[tuple[float, float]]:
    """(b, 1 / distinguishing rate) for each resolution b."""
    sweep = []
    for b in resolutions:
        params = dataclasses.replace(collapse_params, b=float(b))
        rate = branch_distinguishing_rate(shadow_model, params, basis)
        sweep.append((float(b), 1.0 / rate if rate > 0 else math.inf))
    return sweep
