"""CSL master equations, the averaged discrete-collapse generator and decoherence fits."""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
from scipy import constants

from photon_collapse.core.collapse import ensemble_average, run_ensemble, smeared_eigenvalues
from photon_collapse.core.errors import IntegrationError
from photon_collapse.core.lattice import half_k_field_op, number_op
from photon_collapse.core.models import (
    CollapseParams,
    ComplexArray,
    DensityMatrix,
    FloatArray,
    FockBasis,
    ModeLattice,
    SparseOperator,
    StateVector,
)
from photon_collapse.core.utils import complex_matrix, json_number

logger = logging.getLogger(__name__)

STEP_TRACE_TOLERANCE = 1e-10
CUMULATIVE_TRACE_TOLERANCE = 1e-6
CUMULATIVE_HERMITICITY_TOLERANCE = 1e-6
DEFAULT_R_SQUARED_THRESHOLD = 0.99
BAND_CONSTANT = 5.0


class DissipatorKind(str, Enum):
    """Collapse generator families."""

    NUMBER_CSL = "number_csl"
    ENERGY_CSL = "energy_csl"
    GRW_AVERAGE = "grw_average"


def collapse_kernel(lattice: ModeLattice, a: float) -> FloatArray:
    """G(x, x') = exp(-(x - x')^2 / 4a^2) over cell pairs, minimal-image distance."""
    kernel: FloatArray = np.exp(-lattice.squared_distances / (4.0 * a**2))
    return kernel


def inverse_length_mass(mass_kg: float) -> float:
    """Mass in natural units (hbar = c = 1) expressed as an inverse length, 1/m."""
    return mass_kg * constants.c / constants.hbar


@dataclass(frozen=True, eq=False)
class Dissipator:
    """
    Collapse part of a master equation.

    For the CSL kinds the generator is
    ``-rate * sum_ij kernel[i, j] [A_i, [A_j, rho]]``; for ``grw_average`` it is
    ``sum_x rate * (integral dn L_n rho L_n - rho)`` evaluated in closed form,
    an elementwise dephasing with factors exp(-(b/4)(nu - nu')^2).
    """

    kind: DissipatorKind
    basis: FockBasis
    operators: tuple[SparseOperator, ...]
    kernel: FloatArray
    rate: float
    resolution: float | None = None
    _rate_matrix: FloatArray | None = field(init=False, repr=False, default=None)
    _dense_pairs: tuple[tuple[ComplexArray, ComplexArray], ...] = field(
        init=False, repr=False, default=()
    )

    def __post_init__(self) -> None:
        kernel = np.asarray(self.kernel, dtype=np.float64)
        if kernel.shape != (len(self.operators), len(self.operators)):
            raise ValueError("kernel shape must match the number of generators")
        if not np.allclose(kernel, kernel.T):
            raise ValueError("collapse kernel must be symmetric")
        smallest = float(np.linalg.eigvalsh(kernel)[0]) if kernel.size else 0.0
        if smallest < -1e-12:
            logger.warning("collapse kernel has negative eigenvalue %.3e", smallest)
        for operator in self.operators:
            if operator.basis is not self.basis:
                raise ValueError("dimension mismatch: generator built on another basis")

        if self.kind is DissipatorKind.GRW_AVERAGE:
            object.__setattr__(self, "_rate_matrix", self._grw_rates())
        elif all(operator.is_diagonal() for operator in self.operators):
            object.__setattr__(self, "_rate_matrix", self._diagonal_csl_rates(kernel))
        else:
            dense = [operator.to_dense() for operator in self.operators]
            mixed = np.tensordot(kernel, np.array(dense), axes=(1, 0)) if dense else []
            pairs = tuple((d, m) for d, m in zip(dense, mixed, strict=True))
            object.__setattr__(self, "_dense_pairs", pairs)

    def _diagonal_csl_rates(self, kernel: FloatArray) -> FloatArray:
        # [A_i, [A_j, rho]]_kl = (a_ik - a_il)(a_jk - a_jl) rho_kl for diagonal A
        dim = self.basis.dim
        rates = np.zeros((dim, dim))
        differences = [
            np.subtract.outer(np.real(op.diagonal()), np.real(op.diagonal()))
            for op in self.operators
        ]
        for i, d_i in enumerate(differences):
            for j, d_j in enumerate(differences):
                if kernel[i, j] != 0.0:
                    rates -= self.rate * kernel[i, j] * d_i * d_j
        return rates

    def _grw_rates(self) -> FloatArray:
        if self.resolution is None:
            raise ValueError("grw_average generator needs the resolution b")
        dim = self.basis.dim
        rates = np.zeros((dim, dim))
        for operator in self.operators:
            nu = np.real(operator.diagonal())
            gap = np.subtract.outer(nu, nu)
            rates += self.rate * (np.exp(-0.25 * self.resolution * gap**2) - 1.0)
        return rates

    @property
    def rate_matrix(self) -> FloatArray | None:
        """Elementwise rates R with D(rho) = R * rho, when the generator is diagonal."""
        return self._rate_matrix

    def is_zero(self) -> bool:
        """True when the generator vanishes identically."""
        if self._rate_matrix is not None:
            return not np.any(self._rate_matrix)
        return self.rate == 0.0 or all(not np.any(d) for d, _ in self._dense_pairs)

    def __call__(self, rho: ComplexArray) -> ComplexArray:
        if self._rate_matrix is not None:
            result: ComplexArray = self._rate_matrix * rho
            return result
        total = np.zeros_like(rho)
        for a_i, m_i in self._dense_pairs:
            inner = m_i @ rho - rho @ m_i
            total += a_i @ inner - inner @ a_i
        scaled: ComplexArray = -self.rate * total
        return scaled


def _check_lattice(basis: FockBasis, lattice: ModeLattice) -> None:
    if lattice != basis.lattice:
        raise ValueError("dimension mismatch: lattice does not match the basis lattice")


def build_number_csl(basis: FockBasis, lattice: ModeLattice, params: CollapseParams) -> Dissipator:
    """
    Photon-number CSL generator.

    Integrals become cell sums weighted by the cell volume, and with
    xi(x_i) = a_i / s^{d/2} the generators xi^dagger xi * V_cell reduce to n_i.
    The per-cell rate is therefore lambda' = lambda.
    """
    _check_lattice(basis, lattice)
    operators = tuple(number_op(basis, i) for i in range(lattice.n_cells))
    kernel = collapse_kernel(lattice, params.a)
    logger.info("number CSL: discrete per-cell rate lambda' = %.6e 1/s", params.lambda_csl)
    return Dissipator(DissipatorKind.NUMBER_CSL, basis, operators, kernel, params.lambda_csl)


def build_energy_csl(basis: FockBasis, lattice: ModeLattice, params: CollapseParams) -> Dissipator:
    """
    Photon energy-density CSL generator with A_x = (K^{1/2} a)^dagger (K^{1/2} a).

    The prefactor lambda / 2 M_N^2 uses M_N as an inverse length (hbar = c = 1),
    so the generators carry 1/m and the rate comes out in 1/s.
    """
    _check_lattice(basis, lattice)
    operators = []
    for i in range(lattice.n_cells):
        field_i = half_k_field_op(basis, lattice, i)
        operators.append(field_i.dagger() @ field_i)
    mass = inverse_length_mass(params.neutron_mass)
    rate = params.lambda_csl / (2.0 * mass**2)
    logger.info("energy CSL: prefactor lambda / 2 M_N^2 = %.6e m^2/s", rate)
    return Dissipator(
        DissipatorKind.ENERGY_CSL,
        basis,
        tuple(operators),
        collapse_kernel(lattice, params.a),
        rate,
    )


def build_grw_average(basis: FockBasis, lattice: ModeLattice, params: CollapseParams) -> Dissipator:
    """Exact ensemble-average generator of the discrete collapse process."""
    _check_lattice(basis, lattice)
    operators = tuple(
        SparseOperator.from_diagonal(basis, smeared_eigenvalues(basis, params.a, i))
        for i in range(lattice.n_cells)
    )
    cell_rate = params.cell_rate(lattice)
    logger.info(
        "grw average: mu*V_cell = %.6e 1/s, small-b CSL equivalent %.6e 1/s",
        cell_rate,
        lindblad_equivalent_rate(params.b, cell_rate),
    )
    return Dissipator(
        DissipatorKind.GRW_AVERAGE,
        basis,
        operators,
        np.eye(lattice.n_cells),
        cell_rate,
        resolution=params.b,
    )


def lindblad_equivalent_rate(b: float, mu_cell: float) -> float:
    """Number-CSL rate matching the discrete process for small b (nu-nu')^2: mu V_cell b / 4."""
    return mu_cell * b / 4.0


@dataclass
class EvolutionResult:
    """Sampled density matrices and integration diagnostics."""

    times: list[float]
    states: list[DensityMatrix]
    trace_deviations: list[float]
    hermiticity_deviations: list[float]
    step_sizes: list[float]
    step_trace_deviations: list[float]
    failed: bool = False
    message: str = ""

    def element_series(self, row: int, col: int) -> ComplexArray:
        """rho_{row, col}(t) over the samples."""
        return np.array([state.matrix[row, col] for state in self.states])

    def max_trace_deviation(self) -> float:
        """Largest |tr rho - 1| over samples."""
        return max(self.trace_deviations, default=0.0)

    def max_hermiticity_deviation(self) -> float:
        """Largest max|rho - rho^dagger| over samples."""
        return max(self.hermiticity_deviations, default=0.0)

    def min_eigenvalue(self) -> float:
        """Smallest eigenvalue over all samples (computed on demand)."""
        return min(state.min_eigenvalue() for state in self.states)

    def to_dict(self, include_states: bool = True) -> dict[str, Any]:
        """JSON-ready result."""
        payload: dict[str, Any] = {
            "times": list(self.times),
            "diagnostics": {
                "trace_deviation": [json_number(v) for v in self.trace_deviations],
                "hermiticity_deviation": [json_number(v) for v in self.hermiticity_deviations],
                "n_steps": len(self.step_sizes),
                "min_step": min(self.step_sizes, default=0.0),
                "max_step": max(self.step_sizes, default=0.0),
                "max_step_trace_deviation": max(self.step_trace_deviations, default=0.0),
            },
            "failed": self.failed,
            "message": self.message,
        }
        if include_states:
            payload["states"] = [complex_matrix(state.matrix) for state in self.states]
        return payload


class _Integrator:
    """Classical RK4 with step halving on trace drift."""

    def __init__(
        self,
        hamiltonian: ComplexArray | None,
        dissipator: Dissipator | None,
        max_halvings: int,
    ) -> None:
        self.hamiltonian = hamiltonian
        self.dissipator = dissipator
        self.max_halvings = max_halvings
        self.step_sizes: list[float] = []
        self.step_trace_deviations: list[float] = []

    def rhs(self, rho: ComplexArray) -> ComplexArray:
        derivative = np.zeros_like(rho)
        if self.hamiltonian is not None:
            derivative += -1j * (self.hamiltonian @ rho - rho @ self.hamiltonian)
        if self.dissipator is not None:
            derivative += self.dissipator(rho)
        return derivative

    def rk4(self, rho: ComplexArray, h: float) -> ComplexArray:
        k1 = self.rhs(rho)
        k2 = self.rhs(rho + 0.5 * h * k1)
        k3 = self.rhs(rho + 0.5 * h * k2)
        k4 = self.rhs(rho + h * k3)
        result: ComplexArray = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return result

    def step(self, rho: ComplexArray, h: float, depth: int = 0) -> ComplexArray:
        candidate = self.rk4(rho, h)
        drift = abs(np.trace(candidate) - np.trace(rho))
        if drift > STEP_TRACE_TOLERANCE and depth < self.max_halvings:
            logger.info("halving step %.3e (trace drift %.3e)", h, drift)
            half = self.step(rho, 0.5 * h, depth + 1)
            return self.step(half, 0.5 * h, depth + 1)
        self.step_sizes.append(h)
        self.step_trace_deviations.append(float(drift))
        return candidate


def _sample_grid(t_final: float, dt: float, sample_times: Sequence[float] | None) -> list[float]:
    if sample_times is None:
        n_steps = max(1, math.ceil(t_final / dt - 1e-9))
        return [t_final * i / n_steps for i in range(n_steps + 1)]
    grid = sorted(float(t) for t in sample_times)
    if grid and (grid[0] < 0 or grid[-1] > t_final):
        raise ValueError("sample times must lie within [0, t_final]")
    if not grid or grid[0] > 0:
        grid.insert(0, 0.0)
    return grid


def evolve(
    rho0: DensityMatrix,
    hamiltonian: SparseOperator | None,
    dissipator: Dissipator | None,
    t_final: float,
    dt: float,
    *,
    sample_times: Sequence[float] | None = None,
    max_halvings: int = 8,
) -> EvolutionResult:
    """
    Integrate d rho / dt = -i [H, rho] + D(rho) with fixed-step RK4.

    A sample that is non-finite, or whose trace or Hermiticity deviation exceeds
    1e-6, ends the run with IntegrationError.

    Args:
        rho0: Initial density matrix
        hamiltonian: Hermitian Hamiltonian or None for H = 0
        dissipator: Collapse generator or None
        t_final: End time in seconds
        dt: Maximum step size
        sample_times: Times to record (default: every step); t = 0 is always recorded
        max_halvings: Maximum recursive step halvings on trace drift

    Returns:
        EvolutionResult with states at the sample times
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not t_final > 0:
        raise ValueError(f"t_final must be positive, got {t_final}")
    basis = rho0.basis
    for part in (hamiltonian, dissipator):
        if part is not None and part.basis is not basis:
            raise ValueError("dimension mismatch: operator built on another basis")

    dense_h = None
    if hamiltonian is not None and hamiltonian.nnz:
        dense_h = hamiltonian.to_dense()
    active_dissipator = dissipator if dissipator is not None and not dissipator.is_zero() else None
    integrator = _Integrator(dense_h, active_dissipator, max_halvings)

    grid = _sample_grid(t_final, dt, sample_times)
    rho = np.array(rho0.matrix, dtype=np.complex128)
    result = EvolutionResult([], [], [], [], [], [])

    def record(at: float, current: ComplexArray) -> None:
        state = DensityMatrix(basis, current)
        result.times.append(float(at))
        result.states.append(state)
        result.trace_deviations.append(state.trace_deviation())
        result.hermiticity_deviations.append(state.hermiticity_deviation())

    t = 0.0
    record(t, rho)
    for target in grid[1:]:
        span = target - t
        n_steps = max(1, math.ceil(span / dt - 1e-9))
        h = span / n_steps
        for _ in range(n_steps):
            rho = integrator.step(rho, h)
        t = target
        record(t, rho)
        if not np.all(np.isfinite(rho)):
            result.failed, result.message = True, f"non-finite density matrix at t={t}"
        elif result.trace_deviations[-1] > CUMULATIVE_TRACE_TOLERANCE:
            result.failed = True
            result.message = f"trace drifted by {result.trace_deviations[-1]:.3e} at t={t}"
        elif result.hermiticity_deviations[-1] > CUMULATIVE_HERMITICITY_TOLERANCE:
            result.failed = True
            result.message = f"Hermiticity lost by {result.hermiticity_deviations[-1]:.3e} at t={t}"
        if result.failed:
            result.step_sizes = integrator.step_sizes
            result.step_trace_deviations = integrator.step_trace_deviations
            logger.warning("master-equation run aborted: %s", result.message)
            raise IntegrationError(result.message, result)

    result.step_sizes = integrator.step_sizes
    result.step_trace_deviations = integrator.step_trace_deviations
    return result


def analytic_grw_dephasing(
    rho0: DensityMatrix, dissipator: Dissipator, times: Sequence[float]
) -> list[DensityMatrix]:
    """Closed-form solution rho(t) = rho0 * exp(R t) of a diagonal generator with H = 0."""
    rates = dissipator.rate_matrix
    if rates is None:
        raise ValueError("closed-form dephasing needs a diagonal generator")
    return [DensityMatrix(rho0.basis, rho0.matrix * np.exp(rates * t)) for t in times]


@dataclass(frozen=True)
class DecoherenceFit:
    """Exponential fit of an off-diagonal magnitude."""

    rate: float
    intercept: float
    r_squared: float
    residual: float
    non_exponential: bool
    times: tuple[float, ...]
    magnitudes: tuple[float, ...]

    def fitted(self) -> FloatArray:
        """Fitted magnitudes exp(intercept - rate t)."""
        fitted: FloatArray = np.exp(self.intercept - self.rate * np.asarray(self.times))
        return fitted


def fit_decay_rate(
    times: Sequence[float],
    magnitudes: Sequence[float],
    r_squared_threshold: float = DEFAULT_R_SQUARED_THRESHOLD,
) -> DecoherenceFit:
    """Least-squares slope of log|rho_ij(t)|; flags fits with R^2 below the threshold."""
    t = np.asarray(times, dtype=np.float64)
    m = np.asarray(magnitudes, dtype=np.float64)
    if t.size < 3 or t.size != m.size:
        raise ValueError("a decoherence fit needs at least 3 matching samples")
    if np.any(m <= 0) or not np.all(np.isfinite(m)):
        raise ValueError("magnitudes must be positive and finite for a log fit")

    y = np.log(m)
    slope, intercept = np.polyfit(t, y, 1)
    predicted = slope * t + intercept
    ss_res = float(np.sum((y - predicted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot > 1e-24:
        r_squared = 1.0 - ss_res / ss_tot
    else:
        r_squared = 1.0 if ss_res <= 1e-24 else 0.0
    return DecoherenceFit(
        rate=float(-slope),
        intercept=float(intercept),
        r_squared=r_squared,
        residual=math.sqrt(ss_res / t.size),
        non_exponential=r_squared < r_squared_threshold,
        times=tuple(float(v) for v in t),
        magnitudes=tuple(float(v) for v in m),
    )


def decoherence_rate(
    result: EvolutionResult,
    index_pair: tuple[int, int],
    r_squared_threshold: float = DEFAULT_R_SQUARED_THRESHOLD,
) -> DecoherenceFit:
    """Decay rate of |rho_ij(t)| from an evolution result."""
    row, col = index_pair
    magnitudes = np.abs(result.element_series(row, col))
    fit = fit_decay_rate(result.times, magnitudes, r_squared_threshold)
    if fit.non_exponential:
        logger.warning(
            "decay of rho[%d, %d] is not exponential (R^2=%.4f)", row, col, fit.r_squared
        )
    return fit


@dataclass(frozen=True)
class CrossValidationSetup:
    """Shared inputs for comparing trajectories with the averaged generator."""

    initial: StateVector
    hamiltonian: SparseOperator
    params: CollapseParams
    sample_times: tuple[float, ...]
    dt: float = 1e-3


@dataclass(frozen=True)
class CrossValidationReport:
    """Trajectory ensemble versus averaged master equation."""

    n_trajectories: int
    times: tuple[float, ...]
    deviations: tuple[float, ...]
    max_deviation: float
    band_constant: float
    band: float
    passed: bool

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready report."""
        return {
            "n_trajectories": self.n_trajectories,
            "times": list(self.times),
            "deviations": list(self.deviations),
            "max_deviation": self.max_deviation,
            "band_constant": self.band_constant,
            "band": self.band,
            "passed": self.passed,
        }


def cross_validate(
    setup: CrossValidationSetup,
    n_trajectories: int,
    seed: int,
    *,
    threads: int = 1,
    band_constant: float = BAND_CONSTANT,
) -> CrossValidationReport:
    """
    Compare the trajectory ensemble mean with the grw_average master equation.

    The comparison passes when the max-norm deviation at every sample time is
    within band_constant / sqrt(n_trajectories).
    """
    times = tuple(sorted(float(t) for t in setup.sample_times))
    if not times or times[-1] <= 0:
        raise ValueError("cross-validation needs at least one positive sample time")
    basis = setup.initial.basis
    records = run_ensemble(
        setup.initial,
        setup.hamiltonian,
        setup.params,
        times[-1],
        times,
        n_trajectories,
        seed,
        threads=threads,
        keep_states=True,
    )
    ensemble = ensemble_average(records)

    dissipator = build_grw_average(basis, basis.lattice, setup.params)
    rho0 = setup.initial.density_matrix()
    if setup.hamiltonian.nnz == 0:
        reference = analytic_grw_dephasing(rho0, dissipator, times)
    else:
        evolution = evolve(
            rho0, setup.hamiltonian, dissipator, times[-1], setup.dt, sample_times=times
        )
        by_time = dict(zip(evolution.times, evolution.states, strict=True))
        reference = [by_time[t] for t in times]

    deviations = tuple(
        float(np.max(np.abs(mean.matrix - exact.matrix)))
        for mean, exact in zip(ensemble, reference, strict=True)
    )
    band = band_constant / math.sqrt(n_trajectories)
    max_deviation = max(deviations)
    report = CrossValidationReport(
        n_trajectories=n_trajectories,
        times=times,
        deviations=deviations,
        max_deviation=max_deviation,
        band_constant=band_constant,
        band=band,
        passed=max_deviation <= band,
    )
    if not report.passed:
        logger.warning("cross-validation outside band: %.3e > %.3e", max_deviation, band)
    return report
