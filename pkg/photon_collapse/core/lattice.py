"""Mode lattice, truncated Fock basis and elementary photon operators."""

import logging
from collections.abc import Iterator

import numpy as np
from scipy import sparse
from scipy.special import comb

from photon_collapse.core.errors import BasisTooLargeError
from photon_collapse.core.models import FloatArray, FockBasis, ModeLattice, SparseOperator

logger = logging.getLogger(__name__)

DEFAULT_MAX_DIM = 200_000


def build_lattice(dims: int, cells_per_axis: int, cell_size: float) -> ModeLattice:
    """
    Build a periodic lattice of cubic cells.

    Args:
        dims: Spatial dimension (1, 2 or 3)
        cells_per_axis: Number of cells along each axis
        cell_size: Cell edge length in meters

    Returns:
        ModeLattice with cell centers at (i + 1/2) * cell_size per axis
    """
    if dims not in (1, 2, 3):
        raise ValueError(f"dims must be 1, 2 or 3, got {dims}")
    if cells_per_axis < 1:
        raise ValueError(f"cells_per_axis must be at least 1, got {cells_per_axis}")
    if not cell_size > 0:
        raise ValueError(f"cell_size must be positive, got {cell_size}")
    return ModeLattice(dims=dims, cells_per_axis=int(cells_per_axis), cell_size=float(cell_size))


def _compositions(total: int, n_cells: int) -> Iterator[tuple[int, ...]]:
    """Occupation vectors with the given total, descending lexicographic order."""
    if n_cells == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, n_cells - 1):
            yield (first, *rest)


def basis_dimension(n_cells: int, max_total: int, matter_dim: int = 1) -> int:
    """Joint dimension without enumerating: matter_dim * C(max_total + n_cells, n_cells)."""
    return int(matter_dim * comb(max_total + n_cells, n_cells, exact=True))


def build_fock_basis(
    lattice: ModeLattice,
    max_total: int,
    matter_dim: int = 1,
    max_dim: int = DEFAULT_MAX_DIM,
) -> FockBasis:
    """
    Enumerate all photon occupations with total number <= max_total.

    Args:
        lattice: Mode lattice, one mode per cell
        max_total: Total photon-number cutoff
        matter_dim: Dimension of the matter factor (1 for photons only)
        max_dim: Safety limit on the joint dimension

    Returns:
        FockBasis in the documented deterministic order
    """
    if max_total < 0:
        raise ValueError(f"max_total must be non-negative, got {max_total}")
    if matter_dim < 1:
        raise ValueError(f"matter_dim must be at least 1, got {matter_dim}")

    dim = basis_dimension(lattice.n_cells, max_total, matter_dim)
    if dim > max_dim:
        raise BasisTooLargeError(
            f"basis dimension {dim} exceeds the safety limit {max_dim}; "
            "lower max_total or the number of cells"
        )

    rows = [
        occupation
        for total in range(max_total + 1)
        for occupation in _compositions(total, lattice.n_cells)
    ]
    occupations = np.array(rows, dtype=np.int64).reshape(len(rows), lattice.n_cells)
    occupations.flags.writeable = False
    logger.debug("built Fock basis: %d cells, cutoff %d, dim %d", lattice.n_cells, max_total, dim)
    return FockBasis(
        lattice=lattice,
        max_total=int(max_total),
        matter_dim=int(matter_dim),
        occupations=occupations,
    )


def _check_cell(basis: FockBasis, cell_index: int) -> None:
    if not 0 <= cell_index < basis.lattice.n_cells:
        raise IndexError(f"cell index {cell_index} out of range for {basis.lattice.n_cells} cells")


def _photon_annihilator(basis: FockBasis, cell_index: int) -> sparse.csr_matrix:
    occupations = basis.occupations
    counts = occupations[:, cell_index]
    cols = np.nonzero(counts > 0)[0]
    targets = occupations[cols].copy()
    targets[:, cell_index] -= 1
    rows = np.array([basis.occupation_index(tuple(t)) for t in targets], dtype=np.int64)
    data = np.sqrt(counts[cols].astype(np.float64))
    size = basis.n_occupations
    return sparse.csr_matrix((data, (rows, cols)), shape=(size, size), dtype=np.complex128)


def annihilation_op(basis: FockBasis, cell_index: int) -> SparseOperator:
    """Bosonic lowering operator a_i of one cell mode, identity on matter."""
    _check_cell(basis, cell_index)
    return SparseOperator(basis, basis.lift(_photon_annihilator(basis, cell_index)))


def creation_op(basis: FockBasis, cell_index: int) -> SparseOperator:
    """a_i^dagger, truncated at the basis cutoff."""
    return annihilation_op(basis, cell_index).dagger()


def number_op(basis: FockBasis, cell_index: int) -> SparseOperator:
    """Diagonal occupation operator n_i."""
    _check_cell(basis, cell_index)
    diagonal = basis.lift_diagonal(basis.occupations[:, cell_index])
    return SparseOperator.from_diagonal(basis, diagonal)


def total_number_op(basis: FockBasis) -> SparseOperator:
    """Total photon number, sum_i n_i."""
    return SparseOperator.from_diagonal(basis, basis.total_photons.astype(np.float64))


def field_op(basis: FockBasis, cell_index: int) -> SparseOperator:
    """Position-space field xi(x_i) = a_i / cell_size**(dims / 2)."""
    lattice = basis.lattice
    return annihilation_op(basis, cell_index) * (1.0 / lattice.cell_size ** (lattice.dims / 2))


def half_k_kernel(lattice: ModeLattice) -> FloatArray:
    """
    Discrete kernel of K^{1/2} on the periodic lattice.

    Entry r is (1/N) sum_k sqrt(|k|) exp(i k . r * cell_size) with minimal-image
    lattice wavenumbers k = 2 pi m / L. The k = 0 mode contributes sqrt(0) = 0.
    """
    n = lattice.cells_per_axis
    k_axis = 2.0 * np.pi * np.fft.fftfreq(n, d=lattice.cell_size)
    grids = np.meshgrid(*([k_axis] * lattice.dims), indexing="ij")
    k_magnitude = np.sqrt(sum(g**2 for g in grids))
    kernel: FloatArray = np.real(np.fft.ifftn(np.sqrt(k_magnitude)))
    return kernel


def half_k_coefficients(lattice: ModeLattice, cell_index: int) -> FloatArray:
    """Coefficients c_j with (K^{1/2} a)(x_cell) = sum_j c_j a_j."""
    kernel = half_k_kernel(lattice)
    offsets = (lattice.cell_indices[cell_index] - lattice.cell_indices) % lattice.cells_per_axis
    coefficients: FloatArray = kernel[tuple(offsets.T)]
    return coefficients


def half_k_field_op(basis: FockBasis, lattice: ModeLattice, cell_index: int) -> SparseOperator:
    """
    K^{1/2}-weighted annihilator centered on one cell.

    The result is expressed in mode operators, sum_j c_j a_j, with c_j in
    1/sqrt(m) for a one-dimensional lattice.
    """
    if lattice != basis.lattice:
        raise ValueError("lattice does not match the basis lattice")
    _check_cell(basis, cell_index)
    size = basis.n_occupations
    combined = sparse.csr_matrix((size, size), dtype=np.complex128)
    for j, coefficient in enumerate(half_k_coefficients(lattice, cell_index)):
        if coefficient != 0.0:
            combined = combined + coefficient * _photon_annihilator(basis, j)
    return SparseOperator(basis, basis.lift(combined))


def hopping_hamiltonian(basis: FockBasis, hopping: float) -> SparseOperator:
    """
    Free nearest-neighbour hopping, -J sum_<ij> (a_i^dagger a_j + h.c.).

    Periodic neighbours; each unordered pair is counted once. Number conserving,
    so it acts exactly inside the truncated basis. Units: 1/s (hbar = 1).
    """
    lattice = basis.lattice
    n = lattice.cells_per_axis
    pairs: set[tuple[int, int]] = set()
    strides = [n ** (lattice.dims - 1 - axis) for axis in range(lattice.dims)]
    for i, index in enumerate(lattice.cell_indices):
        for axis in range(lattice.dims):
            neighbour = index.copy()
            neighbour[axis] = (neighbour[axis] + 1) % n
            j = int(np.dot(neighbour, strides))
            if j != i:
                pairs.add((min(i, j), max(i, j)))

    size = basis.n_occupations
    photon = sparse.csr_matrix((size, size), dtype=np.complex128)
    lowering = [_photon_annihilator(basis, i) for i in range(lattice.n_cells)]
    for i, j in sorted(pairs):
        hop = lowering[i].conj().T @ lowering[j]
        photon = photon + hop + hop.conj().T
    return SparseOperator(basis, basis.lift(-hopping * photon))
