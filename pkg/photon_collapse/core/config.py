"""Experiment configuration: JSON parsing, validation, serialization and overrides."""

import dataclasses
import json
import logging
import os
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

from rapidfuzz import fuzz, process

from photon_collapse.core.errors import ConfigError, ConfigIssue
from photon_collapse.core.estimators import EstimatorInputs
from photon_collapse.core.lattice import DEFAULT_MAX_DIM, basis_dimension
from photon_collapse.core.models import MAX_RESOLUTION, NEUTRON_MASS_KG

logger = logging.getLogger(__name__)

ENV_SEED = "PHOTON_COLLAPSE_SEED"
ENV_THREADS = "PHOTON_COLLAPSE_THREADS"
ENV_OUT = "PHOTON_COLLAPSE_OUT"

SUGGESTION_CUTOFF = 60
MAX_SEED = (1 << 64) - 1


class ExperimentKind(str, Enum):
    """Experiment dispatched by the runner."""

    TRAJECTORY = "trajectory"
    MASTER = "master"
    CROSS_VALIDATE = "cross_validate"
    SHADOW = "shadow"
    ESTIMATE = "estimate"


MODELS = ("number", "energy", "grw_average")
HAMILTONIAN_PRESETS = ("zero", "free_hopping", "custom")


@dataclass(frozen=True)
class LatticeSpec:
    dims: int = 1
    cells_per_axis: int = 1
    cell_size: float = 1e-4


@dataclass(frozen=True)
class BasisSpec:
    max_total: int = 1
    matter_dim: int = 1
    max_dim: int = DEFAULT_MAX_DIM


@dataclass(frozen=True)
class CollapseSpec:
    """Collapse parameters with the event rate given per cell (mu * V_cell, 1/s)."""

    a: float = 1e-4
    b: float = 4.0
    mu_cell: float = 1.0
    lambda_csl: float = 1.0
    neutron_mass: float = NEUTRON_MASS_KG


@dataclass(frozen=True)
class HamiltonianSpec:
    preset: str = "zero"
    hopping: float = 0.0
    path: str | None = None


@dataclass(frozen=True)
class InitialStateSpec:
    """Photon superposition sum_k amplitudes[k] |occupations[k]>, tensored with matter."""

    occupations: tuple[tuple[int, ...], ...] = ((0,),)
    amplitudes: tuple[complex, ...] = (1.0,)
    matter_amplitudes: tuple[complex, ...] = (1.0,)


@dataclass(frozen=True)
class TimesSpec:
    t_final: float = 1.0
    dt: float = 1e-3
    samples: int = 11
    sample_times: tuple[float, ...] | None = None

    def grid(self) -> tuple[float, ...]:
        """Explicit sample times, or an even grid with `samples` points on [0, t_final]."""
        if self.sample_times is not None:
            return self.sample_times
        step = self.t_final / (self.samples - 1)
        return tuple(i * step for i in range(self.samples - 1)) + (self.t_final,)


@dataclass(frozen=True)
class ShadowSpec:
    branch_shadow_cells: tuple[tuple[int, ...], tuple[int, ...]] = ((0,), ())
    deficit: float = 1.0 / 3.0
    ambient_occupancy: int = 3
    reservoir_cells: tuple[tuple[int, int], ...] = ()
    rate_multiplier: float = 1.0
    threshold: float = 0.1
    scattering_strength: float = 0.0
    horizon: float | None = None
    samples: int = 41


@dataclass(frozen=True)
class AnalysisSpec:
    index_pair: tuple[int, int] = (0, 1)
    r_squared_threshold: float = 0.99
    band_constant: float = 5.0


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment description; every default is explicit."""

    experiment: ExperimentKind
    lattice: LatticeSpec = field(default_factory=LatticeSpec)
    basis: BasisSpec = field(default_factory=BasisSpec)
    collapse: CollapseSpec = field(default_factory=CollapseSpec)
    model: str = "number"
    hamiltonian: HamiltonianSpec = field(default_factory=HamiltonianSpec)
    initial_state: InitialStateSpec = field(default_factory=InitialStateSpec)
    times: TimesSpec = field(default_factory=TimesSpec)
    seed: int = 0
    trajectories: int = 100
    threads: int = 1
    output: str = "results"
    shadow: ShadowSpec = field(default_factory=ShadowSpec)
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    estimate: dict[str, Any] = field(default_factory=lambda: EstimatorInputs().to_dict())

    @property
    def n_cells(self) -> int:
        """Cells on the configured lattice."""
        return int(self.lattice.cells_per_axis**self.lattice.dims)

    def estimator_inputs(self) -> EstimatorInputs:
        """EstimatorInputs built from the resolved estimate section."""
        overrides = dict(self.estimate)
        if "spectrum_band" in overrides:
            overrides["spectrum_band"] = tuple(overrides["spectrum_band"])
        return EstimatorInputs(**overrides)


SECTION_KEYS: dict[str, tuple[str, ...]] = {
    "": tuple(f.name for f in dataclasses.fields(ExperimentConfig)),
    "lattice": tuple(f.name for f in dataclasses.fields(LatticeSpec)),
    "basis": tuple(f.name for f in dataclasses.fields(BasisSpec)),
    "collapse": tuple(f.name for f in dataclasses.fields(CollapseSpec)),
    "hamiltonian": tuple(f.name for f in dataclasses.fields(HamiltonianSpec)),
    "initial_state": tuple(f.name for f in dataclasses.fields(InitialStateSpec)),
    "times": tuple(f.name for f in dataclasses.fields(TimesSpec)),
    "shadow": tuple(f.name for f in dataclasses.fields(ShadowSpec)),
    "analysis": tuple(f.name for f in dataclasses.fields(AnalysisSpec)),
    "estimate": tuple(f.name for f in dataclasses.fields(EstimatorInputs)),
}


def suggest(name: str, choices: tuple[str, ...] | list[str]) -> str | None:
    """Closest known name, if any is similar enough."""
    match = process.extractOne(name, choices, scorer=fuzz.ratio, score_cutoff=SUGGESTION_CUTOFF)
    return match[0] if match else None


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


class _Validator:
    """Reads sections while collecting every problem found."""

    def __init__(self) -> None:
        self.issues: list[ConfigIssue] = []

    def fail(self, path: str, message: str) -> None:
        self.issues.append(ConfigIssue(path or "<root>", message))

    def section(self, data: Any, path: str) -> dict[str, Any]:
        if data is None:
            return {}
        if not isinstance(data, dict):
            self.fail(path, "expected an object")
            return {}
        known = SECTION_KEYS[path]
        for key in data:
            if key not in known:
                hint = suggest(key, known)
                extra = f" (did you mean '{hint}'?)" if hint else ""
                self.fail(_join(path, key), f"unknown key{extra}")
        return data

    def number(
        self,
        data: dict[str, Any],
        path: str,
        key: str,
        default: Any,
        *,
        integer: bool = False,
        minimum: float | None = None,
        positive: bool = False,
        maximum: float | None = None,
        nullable: bool = False,
    ) -> Any:
        if key not in data:
            return default
        value = data[key]
        where = _join(path, key)
        if value is None and nullable:
            return None
        kinds: tuple[type, ...] = (int,) if integer else (int, float)
        if isinstance(value, bool) or not isinstance(value, kinds):
            self.fail(where, f"expected {'an integer' if integer else 'a number'}")
            return default
        if positive and not value > 0:
            self.fail(where, f"must be positive, got {value}")
            return default
        if minimum is not None and value < minimum:
            self.fail(where, f"must be at least {minimum:g}, got {value}")
            return default
        if maximum is not None and value > maximum:
            self.fail(where, f"must be at most {maximum:g}, got {value}")
            return default
        return value if integer else float(value)

    def choice(
        self, data: dict[str, Any], path: str, key: str, default: str, choices: tuple[str, ...]
    ) -> str:
        if key not in data:
            return default
        value = data[key]
        if value not in choices:
            hint = suggest(str(value), choices)
            extra = f" (did you mean '{hint}'?)" if hint else ""
            self.fail(_join(path, key), f"must be one of {', '.join(choices)}{extra}")
            return default
        return str(value)

    def complex_value(self, value: Any, where: str) -> complex:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return complex(value)
        if (
            isinstance(value, list)
            and len(value) == 2
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
        ):
            return complex(value[0], value[1])
        self.fail(where, "expected a number or a [re, im] pair")
        return 0j

    def int_list(self, value: Any, where: str) -> tuple[int, ...]:
        if not isinstance(value, list) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in value
        ):
            self.fail(where, "expected a list of integers")
            return ()
        return tuple(value)


def _read_lattice(v: _Validator, data: Any) -> LatticeSpec:
    raw = v.section(data, "lattice")
    d = LatticeSpec()
    return LatticeSpec(
        dims=v.number(raw, "lattice", "dims", d.dims, integer=True, minimum=1, maximum=3),
        cells_per_axis=v.number(
            raw, "lattice", "cells_per_axis", d.cells_per_axis, integer=True, minimum=1
        ),
        cell_size=v.number(raw, "lattice", "cell_size", d.cell_size, positive=True),
    )


def _read_basis(v: _Validator, data: Any) -> BasisSpec:
    raw = v.section(data, "basis")
    d = BasisSpec()
    return BasisSpec(
        max_total=v.number(raw, "basis", "max_total", d.max_total, integer=True, minimum=0),
        matter_dim=v.number(raw, "basis", "matter_dim", d.matter_dim, integer=True, minimum=1),
        max_dim=v.number(raw, "basis", "max_dim", d.max_dim, integer=True, minimum=1),
    )


def _read_collapse(v: _Validator, data: Any) -> CollapseSpec:
    raw = v.section(data, "collapse")
    d = CollapseSpec()
    return CollapseSpec(
        a=v.number(raw, "collapse", "a", d.a, positive=True),
        b=v.number(raw, "collapse", "b", d.b, positive=True, maximum=MAX_RESOLUTION),
        mu_cell=v.number(raw, "collapse", "mu_cell", d.mu_cell, minimum=0),
        lambda_csl=v.number(raw, "collapse", "lambda_csl", d.lambda_csl, minimum=0),
        neutron_mass=v.number(raw, "collapse", "neutron_mass", d.neutron_mass, positive=True),
    )


def _read_hamiltonian(v: _Validator, data: Any) -> HamiltonianSpec:
    raw = v.section(data, "hamiltonian")
    d = HamiltonianSpec()
    preset = v.choice(raw, "hamiltonian", "preset", d.preset, HAMILTONIAN_PRESETS)
    path = raw.get("path", d.path)
    if path is not None and not isinstance(path, str):
        v.fail("hamiltonian.path", "expected a string")
        path = None
    if preset == "custom" and path is None:
        v.fail("hamiltonian.path", "required when preset is 'custom'")
    return HamiltonianSpec(
        preset=preset, hopping=v.number(raw, "hamiltonian", "hopping", d.hopping), path=path
    )


def _read_initial_state(v: _Validator, data: Any) -> InitialStateSpec:
    raw = v.section(data, "initial_state")
    d = InitialStateSpec()
    occupations = d.occupations
    if "occupations" in raw:
        value = raw["occupations"]
        if not isinstance(value, list) or not value:
            v.fail("initial_state.occupations", "expected a non-empty list of occupation lists")
        else:
            occupations = tuple(
                v.int_list(row, f"initial_state.occupations[{i}]") for i, row in enumerate(value)
            )
    amplitudes = d.amplitudes
    matter = d.matter_amplitudes
    for key in ("amplitudes", "matter_amplitudes"):
        if key not in raw:
            continue
        value = raw[key]
        if not isinstance(value, list) or not value:
            v.fail(f"initial_state.{key}", "expected a non-empty list")
            continue
        parsed = tuple(
            v.complex_value(item, f"initial_state.{key}[{i}]") for i, item in enumerate(value)
        )
        if key == "amplitudes":
            amplitudes = parsed
        else:
            matter = parsed
    if "amplitudes" not in raw and len(occupations) > 1:
        amplitudes = tuple(1.0 + 0j for _ in occupations)
    return InitialStateSpec(
        occupations=occupations, amplitudes=amplitudes, matter_amplitudes=matter
    )


def _read_times(v: _Validator, data: Any) -> TimesSpec:
    raw = v.section(data, "times")
    d = TimesSpec()
    sample_times = d.sample_times
    if raw.get("sample_times") is not None:
        value = raw["sample_times"]
        if not isinstance(value, list) or not all(
            isinstance(t, (int, float)) and not isinstance(t, bool) for t in value
        ):
            v.fail("times.sample_times", "expected a list of numbers")
        else:
            sample_times = tuple(float(t) for t in value)
    return TimesSpec(
        t_final=v.number(raw, "times", "t_final", d.t_final, positive=True),
        dt=v.number(raw, "times", "dt", d.dt, positive=True),
        samples=v.number(raw, "times", "samples", d.samples, integer=True, minimum=2),
        sample_times=sample_times,
    )


def _read_shadow(v: _Validator, data: Any) -> ShadowSpec:
    raw = v.section(data, "shadow")
    d = ShadowSpec()
    cells = d.branch_shadow_cells
    if "branch_shadow_cells" in raw:
        value = raw["branch_shadow_cells"]
        if not isinstance(value, list) or len(value) != 2:
            v.fail("shadow.branch_shadow_cells", "expected two lists of cell indices")
        else:
            first = v.int_list(value[0], "shadow.branch_shadow_cells[0]")
            second = v.int_list(value[1], "shadow.branch_shadow_cells[1]")
            cells = (first, second)
    reservoirs = d.reservoir_cells
    if "reservoir_cells" in raw:
        value = raw["reservoir_cells"]
        parsed = []
        for i, pair in enumerate(value if isinstance(value, list) else [None]):
            entry = v.int_list(pair, f"shadow.reservoir_cells[{i}]")
            if len(entry) != 2:
                v.fail(f"shadow.reservoir_cells[{i}]", "expected a [shadow, reservoir] pair")
            else:
                parsed.append((entry[0], entry[1]))
        reservoirs = tuple(parsed)
    return ShadowSpec(
        branch_shadow_cells=cells,
        deficit=v.number(raw, "shadow", "deficit", d.deficit, minimum=0, maximum=1),
        ambient_occupancy=v.number(
            raw, "shadow", "ambient_occupancy", d.ambient_occupancy, integer=True, minimum=0
        ),
        reservoir_cells=reservoirs,
        rate_multiplier=v.number(
            raw, "shadow", "rate_multiplier", d.rate_multiplier, positive=True
        ),
        threshold=v.number(raw, "shadow", "threshold", d.threshold, positive=True, maximum=0.5),
        scattering_strength=v.number(raw, "shadow", "scattering_strength", d.scattering_strength),
        horizon=v.number(raw, "shadow", "horizon", d.horizon, positive=True, nullable=True),
        samples=v.number(raw, "shadow", "samples", d.samples, integer=True, minimum=2),
    )


def _read_analysis(v: _Validator, data: Any) -> AnalysisSpec:
    raw = v.section(data, "analysis")
    d = AnalysisSpec()
    pair = d.index_pair
    if "index_pair" in raw:
        entry = v.int_list(raw["index_pair"], "analysis.index_pair")
        if len(entry) != 2 or min(entry, default=0) < 0:
            v.fail("analysis.index_pair", "expected two non-negative basis indices")
        else:
            pair = (entry[0], entry[1])
    return AnalysisSpec(
        index_pair=pair,
        r_squared_threshold=v.number(
            raw, "analysis", "r_squared_threshold", d.r_squared_threshold, minimum=0, maximum=1
        ),
        band_constant=v.number(raw, "analysis", "band_constant", d.band_constant, positive=True),
    )


def _read_estimate(v: _Validator, data: Any) -> dict[str, Any]:
    raw = v.section(data, "estimate")
    overrides: dict[str, Any] = {}
    for key, value in raw.items():
        if key not in SECTION_KEYS["estimate"]:
            continue
        if key == "spectrum_band":
            if (
                not isinstance(value, list)
                or len(value) != 2
                or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value)
            ):
                v.fail("estimate.spectrum_band", "expected [low, high] in Hz")
                continue
            overrides[key] = [float(x) for x in value]
        elif key == "n_photons":
            overrides[key] = v.number(raw, "estimate", key, None, integer=True, minimum=0)
        else:
            overrides[key] = v.number(raw, "estimate", key, None)
    overrides = {k: val for k, val in overrides.items() if val is not None}
    if "spectrum_band" in overrides:
        overrides["spectrum_band"] = tuple(overrides["spectrum_band"])
    try:
        return EstimatorInputs(**overrides).to_dict()
    except ValueError as exc:
        v.fail("estimate", str(exc))
        return EstimatorInputs().to_dict()


def _cross_checks(v: _Validator, config: ExperimentConfig) -> None:
    n_cells = config.n_cells
    basis = config.basis
    state = config.initial_state
    kind = config.experiment

    if kind is not ExperimentKind.ESTIMATE:
        dim = basis_dimension(n_cells, basis.max_total, basis.matter_dim)
        if dim > basis.max_dim:
            v.fail("basis.max_dim", f"basis dimension {dim} exceeds the limit {basis.max_dim}")
        if kind is ExperimentKind.MASTER and max(config.analysis.index_pair) >= dim:
            v.fail("analysis.index_pair", f"indices must be below the basis dimension {dim}")

    if kind is ExperimentKind.SHADOW:
        if basis.matter_dim != 2:
            v.fail("basis.matter_dim", "the shadow experiment needs matter_dim = 2")
        if len(state.matter_amplitudes) != 2:
            v.fail("initial_state.matter_amplitudes", "the shadow experiment needs two amplitudes")
        shadow = config.shadow
        referenced = [c for cells in shadow.branch_shadow_cells for c in cells]
        referenced += [c for pair in shadow.reservoir_cells for c in pair]
        if any(not 0 <= c < n_cells for c in referenced):
            v.fail("shadow", f"cell indices must lie in [0, {n_cells})")
        if set(shadow.branch_shadow_cells[0]) & set(shadow.branch_shadow_cells[1]):
            v.fail("shadow.branch_shadow_cells", "branch shadows must not overlap")
        reservoirs = {r for _, r in shadow.reservoir_cells}
        if reservoirs & (set(shadow.branch_shadow_cells[0]) | set(shadow.branch_shadow_cells[1])):
            v.fail("shadow.reservoir_cells", "reservoir cells overlap shadow cells")
        shadowed = round(shadow.ambient_occupancy * (1.0 - shadow.deficit))
        for branch, cells in enumerate(shadow.branch_shadow_cells):
            total = sum(
                0 if cell in reservoirs
                else shadowed if cell in cells
                else shadow.ambient_occupancy
                for cell in range(n_cells)
            )
            if total > basis.max_total:
                v.fail("basis.max_total", f"cutoff too small for {total} photons (branch {branch})")
    elif kind is not ExperimentKind.ESTIMATE:
        if len(state.matter_amplitudes) != basis.matter_dim:
            v.fail("initial_state.matter_amplitudes", f"expected {basis.matter_dim} amplitude(s)")
        if len(state.amplitudes) != len(state.occupations):
            v.fail("initial_state.amplitudes", "must match the number of occupations")
        for i, occupation in enumerate(state.occupations):
            if len(occupation) != n_cells:
                v.fail(f"initial_state.occupations[{i}]", f"expected {n_cells} entries")
            elif min(occupation, default=0) < 0 or sum(occupation) > basis.max_total:
                v.fail(f"initial_state.occupations[{i}]", "outside the truncated basis")
        if not any(abs(c) > 0 for c in state.amplitudes) or not any(
            abs(c) > 0 for c in state.matter_amplitudes
        ):
            v.fail("initial_state", "amplitudes must not all vanish")

    times = config.times
    if times.sample_times is not None:
        grid = times.sample_times
        if list(grid) != sorted(grid) or (grid and (grid[0] < 0 or grid[-1] > times.t_final)):
            v.fail("times.sample_times", "must be sorted and lie within [0, t_final]")


def config_from_dict(data: Any) -> ExperimentConfig:
    """Validate a decoded document, collecting every issue before raising ConfigError."""
    v = _Validator()
    raw = v.section(data, "")
    if "experiment" not in raw:
        v.fail("experiment", "required")
        kind = ExperimentKind.ESTIMATE
    else:
        values = tuple(k.value for k in ExperimentKind)
        kind = ExperimentKind(v.choice(raw, "", "experiment", "estimate", values))

    output = raw.get("output", "results")
    if not isinstance(output, str) or not output:
        v.fail("output", "expected a directory path")
        output = "results"
    config = ExperimentConfig(
        experiment=kind,
        lattice=_read_lattice(v, raw.get("lattice")),
        basis=_read_basis(v, raw.get("basis")),
        collapse=_read_collapse(v, raw.get("collapse")),
        model=v.choice(raw, "", "model", "number", MODELS),
        hamiltonian=_read_hamiltonian(v, raw.get("hamiltonian")),
        initial_state=_read_initial_state(v, raw.get("initial_state")),
        times=_read_times(v, raw.get("times")),
        seed=v.number(raw, "", "seed", 0, integer=True, minimum=0, maximum=MAX_SEED),
        trajectories=v.number(raw, "", "trajectories", 100, integer=True, minimum=1),
        threads=v.number(raw, "", "threads", 1, integer=True, minimum=1),
        output=output,
        shadow=_read_shadow(v, raw.get("shadow")),
        analysis=_read_analysis(v, raw.get("analysis")),
        estimate=_read_estimate(v, raw.get("estimate")),
    )
    if not v.issues:
        _cross_checks(v, config)
    if v.issues:
        raise ConfigError(v.issues)
    return config


def parse_config(text: str) -> ExperimentConfig:
    """
    Parse and validate a JSON experiment configuration.

    Raises:
        ConfigError: With a line and column for syntax errors, or with every
            semantic problem addressed by its dotted key path
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([ConfigIssue("<document>", exc.msg, exc.lineno, exc.colno)]) from exc
    return config_from_dict(data)


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and parse a configuration file."""
    text = Path(path).read_text(encoding="utf-8")
    logger.info("loaded configuration from %s", path)
    return parse_config(text)


def _complex_out(value: complex) -> float | list[float]:
    return float(value.real) if value.imag == 0 else [float(value.real), float(value.imag)]


def config_to_dict(config: ExperimentConfig) -> dict[str, Any]:
    """Fully resolved configuration as plain JSON data."""
    payload = dataclasses.asdict(config)
    payload["experiment"] = config.experiment.value
    state = config.initial_state
    payload["initial_state"] = {
        "occupations": [list(o) for o in state.occupations],
        "amplitudes": [_complex_out(c) for c in state.amplitudes],
        "matter_amplitudes": [_complex_out(c) for c in state.matter_amplitudes],
    }
    times = config.times
    payload["times"]["sample_times"] = (
        list(times.sample_times) if times.sample_times is not None else None
    )
    shadow = config.shadow
    payload["shadow"]["branch_shadow_cells"] = [list(c) for c in shadow.branch_shadow_cells]
    payload["shadow"]["reservoir_cells"] = [list(p) for p in shadow.reservoir_cells]
    payload["analysis"]["index_pair"] = list(config.analysis.index_pair)
    payload["estimate"] = config.estimator_inputs().to_dict()
    return payload


def serialize_config(config: ExperimentConfig) -> str:
    """JSON text that parses back to an equal configuration."""
    return json.dumps(config_to_dict(config), indent=2, sort_keys=True)


def _env_value(
    environ: Mapping[str, str], name: str, convert: Callable[[str], Any], issues: list[ConfigIssue]
) -> Any:
    if name not in environ:
        return None
    try:
        return convert(environ[name])
    except ValueError:
        issues.append(ConfigIssue(f"env.{name}", f"invalid value {environ[name]!r}"))
        return None


def apply_overrides(
    config: ExperimentConfig,
    *,
    seed: int | None = None,
    threads: int | None = None,
    out: str | None = None,
    environ: Mapping[str, str] | None = None,
) -> ExperimentConfig:
    """Apply seed, thread and output overrides with precedence flag > environment > file."""
    environ = os.environ if environ is None else environ
    issues: list[ConfigIssue] = []
    env_seed = _env_value(environ, ENV_SEED, int, issues)
    env_threads = _env_value(environ, ENV_THREADS, int, issues)
    env_out = _env_value(environ, ENV_OUT, str, issues)

    resolved_seed = next(v for v in (seed, env_seed, config.seed) if v is not None)
    resolved_threads = next(v for v in (threads, env_threads, config.threads) if v is not None)
    resolved_out = next(v for v in (out, env_out, config.output) if v is not None)
    if not 0 <= resolved_seed <= MAX_SEED:
        issues.append(ConfigIssue("seed", f"must be an unsigned 64-bit integer: {resolved_seed}"))
    if resolved_threads < 1:
        issues.append(ConfigIssue("threads", f"must be at least 1, got {resolved_threads}"))
    if issues:
        raise ConfigError(issues)
    return dataclasses.replace(
        config, seed=resolved_seed, threads=resolved_threads, output=resolved_out
    )
