"""Utility functions for seeding, hashing and JSON-safe number handling."""

import hashlib
import json
import math
from typing import Any

import numpy as np

RNG_ALGORITHM = "numpy.random.Philox(4x64-10)"

_SEED_MASK = (1 << 64) - 1


def derive_seed(master_seed: int, index: int) -> int:
    """
    Derive the 64-bit seed of one trajectory from the ensemble seed.

    The derivation depends only on (master_seed, index), so an ensemble gives
    the same per-trajectory streams whatever order or thread runs them.
    """
    payload = f"{master_seed & _SEED_MASK}:{index}".encode()
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator used for every stochastic draw."""
    return np.random.Generator(np.random.Philox(seed & _SEED_MASK))


def sha256_hex(data: bytes | str) -> str:
    """Hex SHA-256 of bytes or UTF-8 text."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def json_number(value: float) -> float | None:
    """Map non-finite floats to None so payloads stay valid JSON."""
    value = float(value)
    if math.isfinite(value):
        return value
    return None


def complex_pair(value: complex) -> list[float]:
    """Encode a complex number as [re, im]."""
    value = complex(value)
    return [float(value.real), float(value.imag)]


def complex_matrix(matrix: np.ndarray) -> list[list[list[float]]]:
    """Encode a complex matrix as nested [re, im] pairs."""
    return [[complex_pair(entry) for entry in row] for row in np.asarray(matrix)]


def canonical_json(obj: Any) -> str:
    """Deterministic compact JSON used for hashing."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def within_factor(value: float, target: float, factor: float) -> bool:
    """True when value lies in [target / factor, target * factor]."""
    if value <= 0 or target <= 0 or not math.isfinite(value):
        return False
    return target / factor <= value <= target * factor
