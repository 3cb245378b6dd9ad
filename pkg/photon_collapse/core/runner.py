"""Configuration-driven experiment runner with reproducible outputs and a run manifest."""

import dataclasses
import json
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from photon_collapse import __version__
from photon_collapse.core.collapse import run_ensemble
from photon_collapse.core.config import ExperimentConfig, ExperimentKind, config_to_dict
from photon_collapse.core.errors import IntegrationError
from photon_collapse.core.estimators import (
    EstimatorInputs,
    dust_grain_collapse_time,
    evaluate_estimate_suite,
    perception_consistency,
)
from photon_collapse.core.exporters import (
    SCHEMA_VERSION,
    OutputFile,
    export_csv,
    export_json,
    json_text,
    write_atomic,
)
from photon_collapse.core.lattice import (
    build_fock_basis,
    build_lattice,
    hopping_hamiltonian,
    number_op,
    total_number_op,
)
from photon_collapse.core.master_eq import (
    CrossValidationSetup,
    Dissipator,
    EvolutionResult,
    analytic_grw_dephasing,
    build_energy_csl,
    build_grw_average,
    build_number_csl,
    cross_validate,
    decoherence_rate,
    evolve,
)
from photon_collapse.core.models import (
    CollapseParams,
    DensityMatrix,
    FockBasis,
    ModeLattice,
    SparseOperator,
    StateVector,
)
from photon_collapse.core.shadow import ShadowModel, effective_collapse_time, resolution_sweep
from photon_collapse.core.utils import (
    RNG_ALGORITHM,
    canonical_json,
    json_number,
    sha256_hex,
    within_factor,
)

logger = logging.getLogger(__name__)

TRACE_LIMIT = 1e-9
HERMITICITY_LIMIT = 1e-10
EIGENVALUE_FLOOR = -1e-8
ANALYTIC_RELATIVE_LIMIT = 1e-6
SHADOW_AGREEMENT_FACTOR = 2.0
MAX_STORED_DIM = 64
MAX_CELL_OBSERVABLES = 16
SWEEP_RESOLUTIONS = (0.25, 1.0, 4.0, 16.0, 64.0)


@dataclass(frozen=True)
class CheckResult:
    """An acceptance check; passed is None for informational entries."""

    name: str
    passed: bool | None
    value: float | None = None
    limit: float | None = None
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready check."""
        return {
            "name": self.name,
            "passed": self.passed,
            "value": json_number(self.value) if self.value is not None else None,
            "limit": self.limit,
            "detail": self.detail,
        }


@dataclass
class RunManifest:
    """Provenance record of one run."""

    experiment: str
    config_hash: str
    code_version: str
    rng_algorithm: str
    started_at: str
    config: dict[str, Any]
    finished_at: str | None = None
    outputs: list[OutputFile] = field(default_factory=list)
    checks: list[CheckResult] = field(default_factory=list)
    complete: bool = False
    error: str | None = None

    @property
    def passed(self) -> bool:
        """True when the run completed and no check failed."""
        return self.complete and all(check.passed is not False for check in self.checks)

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready manifest."""
        return {
            "schema_version": SCHEMA_VERSION,
            "experiment": self.experiment,
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "rng_algorithm": self.rng_algorithm,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "complete": self.complete,
            "passed": self.passed,
            "error": self.error,
            "outputs": [output.to_dict() for output in self.outputs],
            "checks": [check.to_dict() for check in self.checks],
            "config": self.config,
        }


@dataclass
class _RunContext:
    config: ExperimentConfig
    out_dir: Path
    manifest: RunManifest

    def write_json(self, name: str, payload: dict[str, Any]) -> None:
        output = export_json(payload, self.out_dir / name)
        self.manifest.outputs.append(output)
        logger.info("wrote %s (%d bytes)", name, output.size)

    def write_csv(self, name: str, fieldnames: list[str], rows: list[dict[str, Any]]) -> None:
        output = export_csv(fieldnames, rows, self.out_dir / name)
        self.manifest.outputs.append(output)
        logger.info("wrote %s (%d bytes)", name, output.size)

    def check(self, result: CheckResult) -> None:
        self.manifest.checks.append(result)
        if result.passed is False:
            logger.warning(
                "check %s failed: value %s, limit %s", result.name, result.value, result.limit
            )


@dataclass(frozen=True)
class System:
    """Objects shared by the simulation experiments."""

    lattice: ModeLattice
    basis: FockBasis
    params: CollapseParams
    hamiltonian: SparseOperator


def config_hash(config: ExperimentConfig) -> str:
    """Hash of everything that can influence result files (threads and output excluded)."""
    payload = config_to_dict(config)
    payload.pop("threads", None)
    payload.pop("output", None)
    return sha256_hex(canonical_json(payload))


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def load_custom_hamiltonian(path: str | Path, basis: FockBasis) -> SparseOperator:
    """
    Read a Hamiltonian matrix from JSON.

    The file holds a square matrix (or {"matrix": ...}) whose entries are numbers
    or [re, im] pairs, in the joint basis order.
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    rows = data["matrix"] if isinstance(data, dict) else data
    matrix = np.array(
        [[complex(*e) if isinstance(e, list) else complex(e) for e in row] for row in rows],
        dtype=np.complex128,
    )
    if matrix.shape != (basis.dim, basis.dim):
        raise ValueError(
            f"dimension mismatch: custom hamiltonian is {matrix.shape}, basis dimension {basis.dim}"
        )
    return SparseOperator(basis, matrix)


def build_system(config: ExperimentConfig) -> System:
    """Lattice, basis, collapse parameters and Hamiltonian described by a configuration."""
    spec = config.lattice
    lattice = build_lattice(spec.dims, spec.cells_per_axis, spec.cell_size)
    basis = build_fock_basis(
        lattice, config.basis.max_total, config.basis.matter_dim, config.basis.max_dim
    )
    collapse = config.collapse
    params = CollapseParams.from_cell_rate(
        lattice,
        collapse.mu_cell,
        collapse.a,
        collapse.b,
        lambda_csl=collapse.lambda_csl,
        neutron_mass=collapse.neutron_mass,
    )
    logger.info(
        "basis dimension %d, mu = %.4e 1/(m^%d s), mu*V_cell = %.4e 1/s",
        basis.dim,
        params.mu,
        lattice.dims,
        params.cell_rate(lattice),
    )
    preset = config.hamiltonian
    if preset.preset == "free_hopping":
        hamiltonian = hopping_hamiltonian(basis, preset.hopping)
    elif preset.preset == "custom" and preset.path is not None:
        hamiltonian = load_custom_hamiltonian(preset.path, basis)
    else:
        hamiltonian = SparseOperator.zero(basis)
    if not hamiltonian.is_hermitian():
        raise ValueError("hamiltonian is not Hermitian")
    return System(lattice, basis, params, hamiltonian)


def build_initial_state(config: ExperimentConfig, basis: FockBasis) -> StateVector:
    """matter (x) photon superposition from the initial_state section, normalized."""
    spec = config.initial_state
    photon = np.zeros(basis.n_occupations, dtype=np.complex128)
    for occupation, amplitude in zip(spec.occupations, spec.amplitudes, strict=True):
        photon[basis.occupation_index(occupation)] += amplitude
    matter = np.asarray(spec.matter_amplitudes, dtype=np.complex128)
    return StateVector.normalized(basis, np.kron(matter, photon))


def _run_trajectory(ctx: _RunContext, system: System) -> None:
    config = ctx.config
    basis = system.basis
    initial = build_initial_state(config, basis)
    observables: dict[str, Callable[[StateVector], float]] = {}
    total = total_number_op(basis)
    observables["n_total"] = lambda state: float(np.real(total.expectation(state)))
    for cell in range(min(system.lattice.n_cells, MAX_CELL_OBSERVABLES)):
        operator = number_op(basis, cell)
        observables[f"n_{cell}"] = lambda state, op=operator: float(np.real(op.expectation(state)))

    sample_times = config.times.grid()
    records = run_ensemble(
        initial,
        system.hamiltonian,
        system.params,
        config.times.t_final,
        sample_times,
        config.trajectories,
        config.seed,
        threads=config.threads,
        observables=observables,
    )
    ctx.write_json(
        "trajectories.json",
        {
            "code_version": __version__,
            "rng_algorithm": RNG_ALGORITHM,
            "basis": basis.describe(),
            "params": system.params.to_dict(),
            "mu_cell": config.collapse.mu_cell,
            "trajectories": [record.to_dict() for record in records],
        },
    )
    names = list(observables)
    rows = [
        {"trajectory": index, "seed": record.seed, "time": time}
        | {name: record.observables[name][k] for name in names}
        for index, record in enumerate(records)
        for k, time in enumerate(record.sample_times)
    ]
    ctx.write_csv("observables.csv", ["trajectory", "seed", "time", *names], rows)

    n_events = sum(len(record.events) for record in records)
    if config.collapse.mu_cell == 0.0:
        ctx.check(CheckResult("event_free", n_events == 0, float(n_events), 0.0))
    else:
        ctx.check(CheckResult("events", None, float(n_events), detail="total collapse events"))


def _dissipator(config: ExperimentConfig, system: System) -> Dissipator:
    builders = {
        "number": build_number_csl,
        "energy": build_energy_csl,
        "grw_average": build_grw_average,
    }
    return builders[config.model](system.basis, system.lattice, system.params)


def _hygiene_checks(ctx: _RunContext, result: EvolutionResult) -> None:
    trace = result.max_trace_deviation()
    hermiticity = result.max_hermiticity_deviation()
    eigenvalue = result.min_eigenvalue()
    ctx.check(CheckResult("trace_deviation", trace < TRACE_LIMIT, trace, TRACE_LIMIT))
    ctx.check(
        CheckResult(
            "hermiticity_deviation",
            hermiticity < HERMITICITY_LIMIT,
            hermiticity,
            HERMITICITY_LIMIT,
        )
    )
    ctx.check(
        CheckResult("min_eigenvalue", eigenvalue >= EIGENVALUE_FLOOR, eigenvalue, EIGENVALUE_FLOOR)
    )


def _relative_error(numeric: DensityMatrix, reference: DensityMatrix) -> float:
    magnitude = np.abs(reference.matrix)
    mask = magnitude > 0
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(numeric.matrix - reference.matrix)[mask] / magnitude[mask]))


def _run_master(ctx: _RunContext, system: System) -> None:
    config = ctx.config
    basis = system.basis
    times = config.times
    rho0 = build_initial_state(config, basis).density_matrix()
    dissipator = _dissipator(config, system)
    hamiltonian = system.hamiltonian if system.hamiltonian.nnz else None

    header = {
        "model": config.model,
        "basis": basis.describe(),
        "params": system.params.to_dict(),
        "generator_rate": dissipator.rate,
    }
    try:
        result = evolve(
            rho0, hamiltonian, dissipator, times.t_final, times.dt, sample_times=times.grid()
        )
    except IntegrationError as exc:
        if isinstance(exc.result, EvolutionResult):
            ctx.write_json("evolution.json", header | exc.result.to_dict(include_states=False))
        raise

    ctx.write_json(
        "evolution.json", header | result.to_dict(include_states=basis.dim <= MAX_STORED_DIM)
    )
    _hygiene_checks(ctx, result)

    row, col = config.analysis.index_pair
    magnitudes = np.abs(result.element_series(row, col))
    exact = None
    if hamiltonian is None and dissipator.rate_matrix is not None:
        exact = analytic_grw_dephasing(rho0, dissipator, result.times)
        worst = max(
            _relative_error(numeric, reference)
            for numeric, reference in zip(result.states, exact, strict=True)
        )
        ctx.check(
            CheckResult(
                "analytic_dephasing",
                worst < ANALYTIC_RELATIVE_LIMIT,
                worst,
                ANALYTIC_RELATIVE_LIMIT,
            )
        )

    fitted = None
    if len(result.times) >= 3 and np.all(magnitudes > 0):
        fit = decoherence_rate(result, (row, col), config.analysis.r_squared_threshold)
        fitted = fit.fitted()
        detail = f"R^2={fit.r_squared:.6f}"
        if fit.non_exponential:
            detail += ", non-exponential"
        ctx.check(CheckResult("decoherence_rate", None, fit.rate, detail=detail))

    rows = []
    for k, time in enumerate(result.times):
        entry: dict[str, Any] = {"time": time, "magnitude": float(magnitudes[k])}
        if fitted is not None:
            entry["fitted"] = float(fitted[k])
        if exact is not None:
            entry["analytic"] = float(abs(exact[k].matrix[row, col]))
        rows.append(entry)
    ctx.write_csv("decoherence.csv", ["time", "magnitude", "fitted", "analytic"], rows)


def _run_cross_validation(ctx: _RunContext, system: System) -> None:
    config = ctx.config
    setup = CrossValidationSetup(
        initial=build_initial_state(config, system.basis),
        hamiltonian=system.hamiltonian,
        params=system.params,
        sample_times=config.times.grid(),
        dt=config.times.dt,
    )
    report = cross_validate(
        setup,
        config.trajectories,
        config.seed,
        threads=config.threads,
        band_constant=config.analysis.band_constant,
    )
    ctx.write_json(
        "cross_validation.json",
        {"basis": system.basis.describe(), "params": system.params.to_dict()} | report.to_dict(),
    )
    ctx.check(
        CheckResult("cross_validation_band", report.passed, report.max_deviation, report.band)
    )


def _shadow_estimator_inputs(config: ExperimentConfig, model: ShadowModel) -> EstimatorInputs:
    cell = config.lattice.cell_size
    return dataclasses.replace(
        config.estimator_inputs(),
        cell_size=cell,
        grain_size=cell,
        shadow_length=model.rate_multiplier * cell,
        mu_cell=config.collapse.mu_cell,
        deficit=model.deficit,
        ambient_occupancy=float(model.ambient_occupancy),
        resolution_b=config.collapse.b,
    )


def _run_shadow(ctx: _RunContext, system: System) -> None:
    config = ctx.config
    spec = config.shadow
    model = ShadowModel(
        branch_shadow_cells=(
            frozenset(spec.branch_shadow_cells[0]),
            frozenset(spec.branch_shadow_cells[1]),
        ),
        deficit=spec.deficit,
        ambient_occupancy=spec.ambient_occupancy,
        reservoir_cells=spec.reservoir_cells,
        rate_multiplier=spec.rate_multiplier,
    )
    amplitudes = np.asarray(config.initial_state.matter_amplitudes, dtype=np.complex128)
    amplitudes = amplitudes / np.linalg.norm(amplitudes)
    stats = effective_collapse_time(
        model,
        system.params,
        system.hamiltonian,
        spec.threshold,
        config.trajectories,
        config.seed,
        grain_amplitudes=tuple(amplitudes),
        t_final=spec.horizon,
        n_samples=spec.samples,
        scattering_strength=spec.scattering_strength,
        threads=config.threads,
    )
    inputs = _shadow_estimator_inputs(config, model)
    estimate = dust_grain_collapse_time(inputs)
    sweep = resolution_sweep(model, system.params, system.basis, SWEEP_RESOLUTIONS)
    ctx.write_json(
        "shadow_summary.json",
        {
            "model": model.to_dict(),
            "params": system.params.to_dict(),
            "statistics": stats.to_dict(),
            "estimator": {
                "dust_grain_collapse_time": json_number(estimate),
                "perception": perception_consistency(stats.median, inputs.perception_time).value,
            },
            "resolution_sweep": [{"b": b, "analytic_time": json_number(t)} for b, t in sweep],
        },
    )
    ctx.write_csv(
        "shadow_coherence.csv",
        ["time", "mean", "median", "q1", "q3", "analytic_mean"],
        [dataclasses.asdict(point) for point in stats.curve],
    )
    ctx.check(
        CheckResult("censored", None, float(stats.censored), detail=f"of {stats.n_trajectories}")
    )
    if math.isfinite(estimate):
        agrees = within_factor(stats.median, estimate, SHADOW_AGREEMENT_FACTOR)
        ctx.check(CheckResult("estimator_agreement", agrees, json_number(stats.median), estimate))
    else:
        ctx.check(
            CheckResult(
                "estimator_agreement",
                None,
                json_number(stats.median),
                detail="no which-path record",
            )
        )


def _run_estimate(ctx: _RunContext, system: System | None) -> None:
    inputs = ctx.config.estimator_inputs()
    records = evaluate_estimate_suite(inputs)
    ctx.write_json(
        "estimates.json",
        {"inputs": inputs.to_dict(), "records": [record.to_dict() for record in records]},
    )
    for record in records:
        ctx.check(CheckResult(record.name, record.passed, record.output, record.target))


_DISPATCH: dict[ExperimentKind, Callable[[_RunContext, Any], None]] = {
    ExperimentKind.TRAJECTORY: _run_trajectory,
    ExperimentKind.MASTER: _run_master,
    ExperimentKind.CROSS_VALIDATE: _run_cross_validation,
    ExperimentKind.SHADOW: _run_shadow,
    ExperimentKind.ESTIMATE: _run_estimate,
}


def write_manifest(manifest: RunManifest, out_dir: str | Path) -> OutputFile:
    """Write manifest.json atomically."""
    return write_atomic(Path(out_dir) / "manifest.json", json_text(manifest.to_dict()))


def run(config: ExperimentConfig) -> RunManifest:
    """
    Execute one experiment and persist its results.

    Result files never contain timestamps or thread counts, so a rerun of the
    same configuration reproduces them byte for byte. The manifest is written
    last; when the experiment fails it is written with complete = False and the
    error is re-raised.

    Args:
        config: Validated configuration

    Returns:
        RunManifest of the finished run
    """
    out_dir = Path(config.output)
    manifest = RunManifest(
        experiment=config.experiment.value,
        config_hash=config_hash(config),
        code_version=__version__,
        rng_algorithm=RNG_ALGORITHM,
        started_at=_timestamp(),
        config=config_to_dict(config),
    )
    ctx = _RunContext(config, out_dir, manifest)
    logger.info("running %s experiment into %s", config.experiment.value, out_dir)
    try:
        system = None if config.experiment is ExperimentKind.ESTIMATE else build_system(config)
        _DISPATCH[config.experiment](ctx, system)
        manifest.complete = True
    except Exception as exc:
        manifest.error = str(exc)
        raise
    finally:
        manifest.finished_at = _timestamp()
        write_manifest(manifest, out_dir)
    return manifest
