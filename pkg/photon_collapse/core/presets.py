"""Named experiment presets."""

import copy
import math
from typing import Any

from photon_collapse.core.config import ExperimentConfig, config_from_dict, suggest
from photon_collapse.core.errors import ConfigError, ConfigIssue

HALF = math.sqrt(0.5)

PRESETS: dict[str, dict[str, Any]] = {
    "desk-estimates": {
        "experiment": "estimate",
        "output": "results/desk-estimates",
    },
    "vacuum-trajectory": {
        "experiment": "trajectory",
        "lattice": {"dims": 1, "cells_per_axis": 2, "cell_size": 1e-4},
        "basis": {"max_total": 2},
        "collapse": {"mu_cell": 0.0},
        "hamiltonian": {"preset": "free_hopping", "hopping": 1.0},
        "initial_state": {"occupations": [[1, 0], [0, 1]], "amplitudes": [HALF, HALF]},
        "times": {"t_final": 1.0, "samples": 11},
        "trajectories": 4,
        "output": "results/vacuum-trajectory",
    },
    "single-cell-dephasing": {
        "experiment": "master",
        "model": "number",
        "basis": {"max_total": 2},
        "collapse": {"lambda_csl": 1.0},
        "initial_state": {"occupations": [[0], [1], [2]]},
        "times": {"t_final": 5.0, "dt": 1e-3, "samples": 51},
        "analysis": {"index_pair": [0, 1]},
        "output": "results/single-cell-dephasing",
    },
    "energy-dephasing": {
        "experiment": "master",
        "model": "energy",
        "lattice": {"dims": 1, "cells_per_axis": 3, "cell_size": 1e-4},
        "basis": {"max_total": 1},
        "collapse": {"a": 1e-4, "lambda_csl": 1e24},
        "initial_state": {"occupations": [[0, 0, 0], [1, 0, 0]], "amplitudes": [HALF, HALF]},
        "times": {"t_final": 1.0, "dt": 1e-3, "samples": 21},
        "analysis": {"index_pair": [0, 1]},
        "output": "results/energy-dephasing",
    },
    "grw-average": {
        "experiment": "master",
        "model": "grw_average",
        "basis": {"max_total": 1},
        "collapse": {"b": 4.0, "mu_cell": 10.0},
        "initial_state": {"occupations": [[0], [1]], "amplitudes": [HALF, HALF]},
        "times": {"t_final": 0.5, "dt": 1e-3, "samples": 26},
        "analysis": {"index_pair": [0, 1]},
        "output": "results/grw-average",
    },
    "grw-cross-validation": {
        "experiment": "cross_validate",
        "basis": {"max_total": 1},
        "collapse": {"b": 4.0, "mu_cell": 10.0},
        "initial_state": {"occupations": [[0], [1]], "amplitudes": [HALF, HALF]},
        "times": {"t_final": 0.5, "dt": 1e-3, "samples": 6},
        "trajectories": 10000,
        "seed": 20240101,
        "output": "results/grw-cross-validation",
    },
    "dust-grain-shadow": {
        "experiment": "shadow",
        "basis": {"max_total": 3, "matter_dim": 2},
        "collapse": {"a": 1e-4, "b": 4.0, "mu_cell": 1.0},
        "initial_state": {"matter_amplitudes": [HALF, HALF]},
        "shadow": {
            "branch_shadow_cells": [[0], []],
            "deficit": 1.0 / 3.0,
            "ambient_occupancy": 3,
            "rate_multiplier": 1e4,
            "threshold": 0.1,
        },
        "trajectories": 400,
        "seed": 7,
        "output": "results/dust-grain-shadow",
    },
}


def preset_names() -> list[str]:
    """Available preset names, sorted."""
    return sorted(PRESETS)


def preset_config(name: str) -> ExperimentConfig:
    """Validated configuration for a named preset."""
    if name not in PRESETS:
        hint = suggest(name, preset_names())
        extra = f" (did you mean '{hint}'?)" if hint else ""
        raise ConfigError([ConfigIssue("preset", f"unknown preset '{name}'{extra}")])
    return config_from_dict(copy.deepcopy(PRESETS[name]))
