"""Closed-form order-of-magnitude estimates for photon collapse effects."""

import dataclasses
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any

from scipy import constants

from photon_collapse.core.utils import json_number, within_factor

logger = logging.getLogger(__name__)

# Published reference figures; each is compared with a tolerance factor, never used in a formula.
SUNLIGHT_DENSITY_TARGET = 3e12  # photons per m^3 (3e6 per cm^3)
PHOTONS_PER_CELL_TARGET = 3.0
DUST_TIME_TARGET = 1e-4  # s
MZ_PROBABILITY_TARGET = 3e-9
BOSON_PROBABILITY_TARGET = 4e-6
ENERGY_FACTOR_TARGET = 2.0

ORDER_OF_MAGNITUDE = 3.0
PERCEPTION_TIME = 1e-2  # s


class PerceptionVerdict(str, Enum):
    """Whether a collapse completes before a human could notice the superposition."""

    CONSISTENT = "consistent"
    INCONSISTENT = "inconsistent"


@dataclass(frozen=True)
class EstimatorInputs:
    """
    Physical inputs for the desk estimates (SI units).

    The default irradiance counts only the visible part of sunlight, which sets
    the ambient density to a few photons per 10^-4 m cube.
    """

    irradiance: float = 400.0
    mean_photon_frequency: float = 5.5e14
    cell_size: float = 1e-4
    mu_cell: float = 1.0
    grain_size: float = 1e-4
    shadow_length: float = 1.0
    deficit: float = 1.0 / 3.0
    ambient_occupancy: float = 3.0
    resolution_b: float = 4.0
    path_length: float = 1.0
    n_photons: int = 25
    flight_time: float = 1e-8
    spectrum_band: tuple[float, float] = (4e14, 8e14)
    anomaly_factor: float = 1.0
    perception_time: float = PERCEPTION_TIME

    def __post_init__(self) -> None:
        non_negative = ("irradiance", "mu_cell", "path_length", "n_photons", "flight_time")
        positive = (
            "mean_photon_frequency",
            "cell_size",
            "grain_size",
            "shadow_length",
            "resolution_b",
            "anomaly_factor",
            "perception_time",
        )
        for name in non_negative:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.deficit <= 1.0:
            raise ValueError(f"deficit must lie in [0, 1], got {self.deficit}")
        if self.ambient_occupancy < 0:
            raise ValueError(f"ambient_occupancy must be non-negative: {self.ambient_occupancy}")
        low, high = self.spectrum_band
        if not 0 < low <= high:
            raise ValueError(f"spectrum_band must be ordered and positive: {self.spectrum_band}")
        object.__setattr__(self, "spectrum_band", (float(low), float(high)))

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready inputs."""
        payload = dataclasses.asdict(self)
        payload["spectrum_band"] = list(self.spectrum_band)
        return payload


def sunlight_photon_density(irradiance: float, mean_photon_frequency: float) -> float:
    """Photon number density (1/m^3) of a beam: (irradiance / c) / (h nu)."""
    if irradiance < 0:
        raise ValueError(f"irradiance must be non-negative, got {irradiance}")
    if not mean_photon_frequency > 0:
        raise ValueError(f"mean_photon_frequency must be positive, got {mean_photon_frequency}")
    return irradiance / constants.c / (constants.h * mean_photon_frequency)


def photons_per_cell(density: float, cell_size: float) -> float:
    """Expected photons in a cube of the given edge."""
    if density < 0 or not cell_size > 0:
        raise ValueError("density must be non-negative and cell_size positive")
    return density * cell_size**3


def shadow_cell_count(inputs: EstimatorInputs) -> float:
    """Cells in the shadow column: (length / cell) * (grain / cell)^2."""
    return (inputs.shadow_length / inputs.cell_size) * (inputs.grain_size / inputs.cell_size) ** 2


def per_event_distinguishability(resolution_b: float, occupancy_gap: float) -> float:
    """1 - exp(-(b/4) dnu^2), capped at 1."""
    return min(1.0, 1.0 - math.exp(-0.25 * resolution_b * occupancy_gap**2))


def dust_grain_collapse_time(inputs: EstimatorInputs) -> float:
    """
    Time for photon collapses to tell the two shadows apart.

    1 / (mu_cell * N_shadow * distinguishability), with the occupancy gap
    deficit * ambient_occupancy. Returns inf when nothing distinguishes them.
    """
    gap = inputs.deficit * inputs.ambient_occupancy
    rate = (
        inputs.mu_cell
        * shadow_cell_count(inputs)
        * per_event_distinguishability(inputs.resolution_b, gap)
    )
    if rate <= 0.0:
        return math.inf
    return 1.0 / rate


def mz_anomaly_probability(inputs: EstimatorInputs) -> float:
    """Collapse probability of a photon in flight, mu_cell * path_length / c."""
    return inputs.mu_cell * inputs.path_length / constants.c


def boson_sampling_anomaly(inputs: EstimatorInputs) -> float:
    """anomaly_factor * n_photons * mu_cell * flight_time."""
    return inputs.anomaly_factor * inputs.n_photons * inputs.mu_cell * inputs.flight_time


def implied_anomaly_factor(
    inputs: EstimatorInputs, target: float = BOSON_PROBABILITY_TARGET
) -> float:
    """Multiplier the naive product needs to reach a reported probability."""
    naive = boson_sampling_anomaly(dataclasses.replace(inputs, anomaly_factor=1.0))
    return target / naive if naive > 0 else math.inf


def energy_model_factor(spectrum_band: tuple[float, float]) -> float:
    """
    Strength of the energy-density model relative to the number model.

    The energy resolution is set by h * nu_max while a photon at the band edge
    carries h * nu_min, so the headline factor is nu_max / nu_min.
    """
    low, high = spectrum_band
    if not 0 < low <= high:
        raise ValueError(f"spectrum_band must be ordered and positive, got {spectrum_band}")
    return high / low


def energy_model_collapse_time(inputs: EstimatorInputs) -> float:
    """Dust-grain collapse time under the energy-density model."""
    return dust_grain_collapse_time(inputs) / energy_model_factor(inputs.spectrum_band)


def perception_consistency(
    collapse_time: float, perception_time: float = PERCEPTION_TIME
) -> PerceptionVerdict:
    """Consistent when the collapse completes strictly before the perception time."""
    if collapse_time < perception_time:
        return PerceptionVerdict.CONSISTENT
    return PerceptionVerdict.INCONSISTENT


@dataclass(frozen=True)
class EstimateRecord:
    """One estimate compared with its reference figure."""

    name: str
    output: float
    unit: str
    target: float
    tolerance: float
    passed: bool | None
    inputs: dict[str, Any]
    extras: dict[str, Any] = dataclasses.field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready record."""
        return {
            "name": self.name,
            "output": json_number(self.output),
            "unit": self.unit,
            "target": self.target,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "inputs": self.inputs,
            "extras": self.extras,
        }


def evaluate_estimate_suite(inputs: EstimatorInputs | None = None) -> list[EstimateRecord]:
    """
    Evaluate every estimator against its reference figure.

    The boson-sampling record is informational: its verdict is None and it
    reports the multiplier implied by the published figure.
    """
    inputs = inputs or EstimatorInputs()
    density = sunlight_photon_density(inputs.irradiance, inputs.mean_photon_frequency)
    per_cell = photons_per_cell(density, inputs.cell_size)
    dust_time = dust_grain_collapse_time(inputs)
    mz = mz_anomaly_probability(inputs)
    boson = boson_sampling_anomaly(inputs)
    factor = energy_model_factor(inputs.spectrum_band)

    records = [
        EstimateRecord(
            name="sunlight_photon_density",
            output=density,
            unit="1/m^3",
            target=SUNLIGHT_DENSITY_TARGET,
            tolerance=ORDER_OF_MAGNITUDE,
            passed=within_factor(density, SUNLIGHT_DENSITY_TARGET, ORDER_OF_MAGNITUDE),
            inputs={
                "irradiance": inputs.irradiance,
                "mean_photon_frequency": inputs.mean_photon_frequency,
            },
        ),
        EstimateRecord(
            name="photons_per_cell",
            output=per_cell,
            unit="photons",
            target=PHOTONS_PER_CELL_TARGET,
            tolerance=ORDER_OF_MAGNITUDE,
            passed=within_factor(per_cell, PHOTONS_PER_CELL_TARGET, ORDER_OF_MAGNITUDE),
            inputs={"density": density, "cell_size": inputs.cell_size},
        ),
        EstimateRecord(
            name="dust_grain_collapse_time",
            output=dust_time,
            unit="s",
            target=DUST_TIME_TARGET,
            tolerance=ORDER_OF_MAGNITUDE,
            passed=within_factor(dust_time, DUST_TIME_TARGET, ORDER_OF_MAGNITUDE),
            inputs={
                "mu_cell": inputs.mu_cell,
                "cell_size": inputs.cell_size,
                "grain_size": inputs.grain_size,
                "shadow_length": inputs.shadow_length,
                "deficit": inputs.deficit,
                "ambient_occupancy": inputs.ambient_occupancy,
                "resolution_b": inputs.resolution_b,
            },
            extras={
                "shadow_cells": shadow_cell_count(inputs),
                "perception": perception_consistency(dust_time, inputs.perception_time).value,
                "perception_time": inputs.perception_time,
                "energy_model_time": json_number(energy_model_collapse_time(inputs)),
            },
        ),
        EstimateRecord(
            name="mz_anomaly_probability",
            output=mz,
            unit="probability",
            target=MZ_PROBABILITY_TARGET,
            tolerance=2.0,
            passed=within_factor(mz, MZ_PROBABILITY_TARGET, 2.0),
            inputs={"mu_cell": inputs.mu_cell, "path_length": inputs.path_length},
            extras={"flight_time": inputs.path_length / constants.c},
        ),
        EstimateRecord(
            name="boson_sampling_anomaly",
            output=boson,
            unit="probability",
            target=BOSON_PROBABILITY_TARGET,
            tolerance=ORDER_OF_MAGNITUDE,
            passed=None,
            inputs={
                "n_photons": inputs.n_photons,
                "mu_cell": inputs.mu_cell,
                "flight_time": inputs.flight_time,
                "anomaly_factor": inputs.anomaly_factor,
            },
            extras={"implied_anomaly_factor": json_number(implied_anomaly_factor(inputs))},
        ),
        EstimateRecord(
            name="energy_model_factor",
            output=factor,
            unit="ratio",
            target=ENERGY_FACTOR_TARGET,
            tolerance=1.05,
            passed=within_factor(factor, ENERGY_FACTOR_TARGET, 1.05),
            inputs={"spectrum_band": list(inputs.spectrum_band)},
        ),
    ]
    for record in records:
        if record.passed is False:
            logger.warning(
                "%s = %.3e outside x%g of %.3e",
                record.name,
                record.output,
                record.tolerance,
                record.target,
            )
    return records
