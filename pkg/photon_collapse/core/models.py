"""Data models for lattices, Fock bases, states, operators and collapse records."""

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy import constants, sparse

from photon_collapse.core.errors import NormalizationError
from photon_collapse.core.utils import complex_pair

ComplexArray = npt.NDArray[np.complex128]
FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]

STATE_NORM_TOLERANCE = 1e-10
MAX_RESOLUTION = 1e12
NEUTRON_MASS_KG: float = constants.m_n


@dataclass(frozen=True)
class ModeLattice:
    """Regular periodic grid of cells, one scalar photon mode per cell."""

    dims: int
    cells_per_axis: int
    cell_size: float

    @property
    def n_cells(self) -> int:
        """Number of cells (and photon modes)."""
        return int(self.cells_per_axis**self.dims)

    @property
    def edge_length(self) -> float:
        """Edge length L of the periodic cube."""
        return self.cells_per_axis * self.cell_size

    @property
    def cell_volume(self) -> float:
        """Volume of a single cell, cell_size**dims."""
        return float(self.cell_size**self.dims)

    @property
    def volume(self) -> float:
        """Total region volume V."""
        return self.n_cells * self.cell_volume

    @cached_property
    def cell_indices(self) -> IntArray:
        """Integer grid coordinates of every cell, C-order, shape (n_cells, dims)."""
        grid = itertools.product(range(self.cells_per_axis), repeat=self.dims)
        return np.array(list(grid), dtype=np.int64).reshape(self.n_cells, self.dims)

    @cached_property
    def cell_centers(self) -> FloatArray:
        """Cell centers (i + 1/2) * cell_size per axis, in meters."""
        return (self.cell_indices + 0.5) * self.cell_size

    @cached_property
    def squared_distances(self) -> FloatArray:
        """Minimal-image squared distances between all pairs of cell centers."""
        delta = self.cell_centers[:, None, :] - self.cell_centers[None, :, :]
        delta -= self.edge_length * np.round(delta / self.edge_length)
        distances: FloatArray = np.sum(delta**2, axis=-1)
        return distances


@dataclass(frozen=True, eq=False)
class FockBasis:
    """
    Truncated multimode bosonic basis, optionally tensored with a matter factor.

    Photon occupations are ordered by increasing total photon number and, inside
    each total-number sector, in descending lexicographic order of the occupation
    tuple (for two cells: 00, 10, 01, 20, 11, 02). The joint index is
    ``matter_index * n_occupations + occupation_index``, so joint operators are
    ``kron(matter_operator, photon_operator)``.
    """

    lattice: ModeLattice
    max_total: int
    matter_dim: int
    occupations: IntArray

    @property
    def n_occupations(self) -> int:
        """Number of photon occupation vectors."""
        return int(self.occupations.shape[0])

    @property
    def dim(self) -> int:
        """Dimension of the joint Hilbert space."""
        return self.matter_dim * self.n_occupations

    @cached_property
    def _index(self) -> dict[tuple[int, ...], int]:
        return {tuple(int(n) for n in row): i for i, row in enumerate(self.occupations)}

    def occupation_index(self, occupation: tuple[int, ...] | list[int]) -> int:
        """Index of a photon occupation vector inside the photon factor."""
        key = tuple(int(n) for n in occupation)
        try:
            return self._index[key]
        except KeyError:
            raise ValueError(f"occupation {key} is not in the truncated basis") from None

    def joint_index(self, occupation: tuple[int, ...] | list[int], matter_index: int = 0) -> int:
        """Index of |matter_index> (x) |occupation> in the joint basis."""
        if not 0 <= matter_index < self.matter_dim:
            raise IndexError(f"matter index {matter_index} out of range")
        return matter_index * self.n_occupations + self.occupation_index(occupation)

    @cached_property
    def total_photons(self) -> IntArray:
        """Total photon number of every joint basis state."""
        totals = self.occupations.sum(axis=1)
        return np.tile(totals, self.matter_dim)

    def lift(self, photon_matrix: Any) -> sparse.csr_matrix:
        """Extend a photon-factor matrix to the joint space as identity on matter."""
        photon = sparse.csr_matrix(photon_matrix, dtype=np.complex128)
        if self.matter_dim == 1:
            return photon
        return sparse.kron(sparse.identity(self.matter_dim), photon, format="csr")

    def lift_diagonal(self, photon_diagonal: npt.ArrayLike) -> FloatArray:
        """Extend a photon-factor diagonal to the joint space."""
        return np.tile(np.asarray(photon_diagonal, dtype=np.float64), self.matter_dim)

    def describe(self) -> dict[str, Any]:
        """JSON-ready description used in result metadata."""
        return {
            "dims": self.lattice.dims,
            "cells_per_axis": self.lattice.cells_per_axis,
            "cell_size": self.lattice.cell_size,
            "max_total": self.max_total,
            "matter_dim": self.matter_dim,
            "dim": self.dim,
            "order": "total photon number ascending, descending lexicographic, matter-major",
        }


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Complex sparse matrix acting on a FockBasis."""

    basis: FockBasis
    matrix: sparse.csr_matrix

    def __post_init__(self) -> None:
        matrix = sparse.csr_matrix(self.matrix, dtype=np.complex128, copy=True)
        if matrix.shape != (self.basis.dim, self.basis.dim):
            raise ValueError(
                f"operator shape {matrix.shape} does not match basis dimension {self.basis.dim}"
            )
        matrix.eliminate_zeros()
        matrix.sort_indices()
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def zero(cls, basis: FockBasis) -> "SparseOperator":
        """The zero operator."""
        return cls(basis, sparse.csr_matrix((basis.dim, basis.dim), dtype=np.complex128))

    @classmethod
    def from_diagonal(cls, basis: FockBasis, diagonal: npt.ArrayLike) -> "SparseOperator":
        """Diagonal operator with the given entries."""
        return cls(basis, sparse.diags(np.asarray(diagonal), format="csr"))

    @property
    def nnz(self) -> int:
        """Number of stored (non-zero) entries."""
        return int(self.matrix.nnz)

    def dagger(self) -> "SparseOperator":
        """Conjugate transpose."""
        return SparseOperator(self.basis, self.matrix.conj().T)

    def to_dense(self) -> ComplexArray:
        """Dense copy of the matrix."""
        return np.asarray(self.matrix.toarray(), dtype=np.complex128)

    def is_diagonal(self) -> bool:
        """True when every stored entry sits on the diagonal."""
        coo = self.matrix.tocoo()
        return bool(np.all(coo.row == coo.col))

    def diagonal(self) -> ComplexArray:
        """Diagonal entries."""
        return np.asarray(self.matrix.diagonal(), dtype=np.complex128)

    def hermiticity_deviation(self) -> float:
        """max |H - H^dagger| over entries."""
        difference = self.matrix - self.matrix.conj().T
        if difference.nnz == 0:
            return 0.0
        return float(np.max(np.abs(difference.data)))

    def is_hermitian(self, tolerance: float = 1e-10) -> bool:
        """Hermiticity check in max-norm."""
        return self.hermiticity_deviation() <= tolerance

    def expectation(self, state: "StateVector") -> complex:
        """<psi|O|psi>."""
        return complex(np.vdot(state.amplitudes, self.matrix @ state.amplitudes))

    def commutator(self, other: "SparseOperator") -> "SparseOperator":
        """[self, other]."""
        return SparseOperator(
            self.basis, self.matrix @ other.matrix - other.matrix @ self.matrix
        )

    def __matmul__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator(self.basis, self.matrix @ other.matrix)

    def __add__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator(self.basis, self.matrix + other.matrix)

    def __sub__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator(self.basis, self.matrix - other.matrix)

    def __mul__(self, scalar: complex) -> "SparseOperator":
        return SparseOperator(self.basis, self.matrix * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class StateVector:
    """Normalized pure state on a FockBasis."""

    basis: FockBasis
    amplitudes: ComplexArray

    def __post_init__(self) -> None:
        amplitudes = np.array(self.amplitudes, dtype=np.complex128, copy=True)
        if amplitudes.shape != (self.basis.dim,):
            raise ValueError(
                f"state has shape {amplitudes.shape}, basis dimension is {self.basis.dim}"
            )
        norm = float(np.linalg.norm(amplitudes))
        if abs(norm - 1.0) > STATE_NORM_TOLERANCE:
            raise NormalizationError(f"state norm {norm!r} differs from 1")
        amplitudes.flags.writeable = False
        object.__setattr__(self, "amplitudes", amplitudes)

    @classmethod
    def normalized(cls, basis: FockBasis, amplitudes: npt.ArrayLike) -> "StateVector":
        """Build a state from unnormalized amplitudes."""
        raw = np.asarray(amplitudes, dtype=np.complex128)
        norm = float(np.linalg.norm(raw))
        if norm == 0.0 or not np.isfinite(norm):
            raise NormalizationError("cannot normalize a zero or non-finite vector")
        return cls(basis, raw / norm)

    @classmethod
    def basis_state(
        cls, basis: FockBasis, occupation: tuple[int, ...] | list[int], matter_index: int = 0
    ) -> "StateVector":
        """A single occupation-number basis state."""
        amplitudes = np.zeros(basis.dim, dtype=np.complex128)
        amplitudes[basis.joint_index(occupation, matter_index)] = 1.0
        return cls(basis, amplitudes)

    def matter_blocks(self) -> ComplexArray:
        """Amplitudes reshaped to (matter_dim, n_occupations)."""
        return self.amplitudes.reshape(self.basis.matter_dim, self.basis.n_occupations)

    def reduced_matter(self) -> ComplexArray:
        """Reduced matter density matrix tr_photons |psi><psi|."""
        blocks = self.matter_blocks()
        reduced: ComplexArray = blocks @ blocks.conj().T
        return reduced

    def fidelity(self, other: "StateVector") -> float:
        """|<self|other>|^2."""
        return float(abs(np.vdot(self.amplitudes, other.amplitudes)) ** 2)

    def density_matrix(self) -> "DensityMatrix":
        """|psi><psi| as a DensityMatrix."""
        return DensityMatrix(self.basis, np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Dense density matrix on a FockBasis. Validity is checked on demand."""

    basis: FockBasis
    matrix: ComplexArray

    def __post_init__(self) -> None:
        matrix = np.array(self.matrix, dtype=np.complex128, copy=True)
        if matrix.shape != (self.basis.dim, self.basis.dim):
            raise ValueError(
                f"density matrix shape {matrix.shape} does not match dimension {self.basis.dim}"
            )
        matrix.flags.writeable = False
        object.__setattr__(self, "matrix", matrix)

    def trace(self) -> complex:
        """tr rho."""
        return complex(np.trace(self.matrix))

    def trace_deviation(self) -> float:
        """|tr rho - 1|."""
        return abs(self.trace() - 1.0)

    def hermiticity_deviation(self) -> float:
        """max |rho - rho^dagger|."""
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def min_eigenvalue(self) -> float:
        """Smallest eigenvalue of the Hermitian part."""
        hermitian = 0.5 * (self.matrix + self.matrix.conj().T)
        return float(np.linalg.eigvalsh(hermitian)[0])

    def purity(self) -> float:
        """tr rho^2."""
        return float(np.real(np.vdot(self.matrix.conj().T, self.matrix)))

    def validate(
        self,
        trace_tolerance: float = 1e-9,
        hermiticity_tolerance: float = 1e-10,
        eigenvalue_floor: float = -1e-8,
    ) -> None:
        """Raise ValueError when trace, Hermiticity or positivity is out of bounds."""
        if self.trace_deviation() > trace_tolerance:
            raise ValueError(f"trace deviates from 1 by {self.trace_deviation():.3e}")
        if self.hermiticity_deviation() > hermiticity_tolerance:
            raise ValueError(f"density matrix not Hermitian ({self.hermiticity_deviation():.3e})")
        if self.min_eigenvalue() < eigenvalue_floor:
            raise ValueError(f"density matrix has eigenvalue {self.min_eigenvalue():.3e}")

    def reduced_matter(self) -> ComplexArray:
        """Partial trace over the photon factor."""
        m, n = self.basis.matter_dim, self.basis.n_occupations
        reduced: ComplexArray = np.einsum("ikjk->ij", self.matrix.reshape(m, n, m, n))
        return reduced


@dataclass(frozen=True)
class CollapseParams:
    """
    Collapse-model parameters.

    ``a`` is the smearing length (m), ``b`` the inverse variance of the collapse
    Gaussian, ``mu`` the event frequency density (events per m^dims per second),
    ``lambda_csl`` the continuous CSL rate (1/s) and ``neutron_mass`` (kg) the
    normalization of the energy-density model. ``mu`` and ``lambda_csl`` may be
    zero to switch the corresponding process off.
    """

    a: float
    b: float
    mu: float
    lambda_csl: float = 1.0
    neutron_mass: float = NEUTRON_MASS_KG

    def __post_init__(self) -> None:
        if not self.a > 0:
            raise ValueError(f"smearing length a must be positive, got {self.a}")
        if not 0 < self.b <= MAX_RESOLUTION:
            raise ValueError(f"resolution b must lie in (0, {MAX_RESOLUTION:g}], got {self.b}")
        if not self.mu >= 0:
            raise ValueError(f"frequency density mu must be non-negative, got {self.mu}")
        if not self.lambda_csl >= 0:
            raise ValueError(f"CSL rate must be non-negative, got {self.lambda_csl}")
        if not self.neutron_mass > 0:
            raise ValueError(f"neutron mass must be positive, got {self.neutron_mass}")

    @classmethod
    def from_cell_rate(
        cls, lattice: ModeLattice, mu_cell: float, a: float, b: float, **kwargs: float
    ) -> "CollapseParams":
        """Build parameters from the per-cell event rate mu * V_cell."""
        return cls(a=a, b=b, mu=mu_cell / lattice.cell_volume, **kwargs)

    def cell_rate(self, lattice: ModeLattice) -> float:
        """Event rate per cell, mu * V_cell."""
        return self.mu * lattice.cell_volume

    def total_rate(self, lattice: ModeLattice) -> float:
        """Event rate over the whole lattice, mu * V."""
        return self.mu * lattice.volume

    def to_dict(self) -> dict[str, float]:
        """JSON-ready parameters."""
        return {
            "a": self.a,
            "b": self.b,
            "mu": self.mu,
            "lambda_csl": self.lambda_csl,
            "neutron_mass": self.neutron_mass,
        }


@dataclass(frozen=True)
class CollapseEvent:
    """One realized discrete collapse."""

    time: float
    cell_index: int
    outcome_n: float
    pre_norm_weights: tuple[tuple[float, float], ...] = ()

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready event."""
        return {
            "time": self.time,
            "cell_index": self.cell_index,
            "outcome_n": self.outcome_n,
            "pre_norm_weights": [[nu, weight] for nu, weight in self.pre_norm_weights],
        }


@dataclass
class TrajectoryRecord:
    """Full history of one stochastic run."""

    seed: int
    events: list[CollapseEvent]
    sample_times: list[float]
    final_state: StateVector
    sampled_states: list[StateVector] | None = None
    observables: dict[str, list[float]] = field(default_factory=dict)
    watch_time: float | None = None

    def to_dict(self, include_states: bool = False) -> dict[str, Any]:
        """JSON-ready record."""
        payload: dict[str, Any] = {
            "seed": self.seed,
            "events": [event.to_dict() for event in self.events],
            "sample_times": list(self.sample_times),
            "observables": {name: list(values) for name, values in self.observables.items()},
            "watch_time": self.watch_time,
        }
        if include_states and self.sampled_states is not None:
            payload["sampled_states"] = [
                [complex_pair(a) for a in state.amplitudes] for state in self.sampled_states
            ]
        return payload
