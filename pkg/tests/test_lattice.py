"""Tests for the mode lattice, Fock basis and photon operators."""

import numpy as np
import pytest

from photon_collapse.core.errors import BasisTooLargeError
from photon_collapse.core.lattice import (
    annihilation_op,
    basis_dimension,
    build_fock_basis,
    build_lattice,
    creation_op,
    field_op,
    half_k_coefficients,
    half_k_field_op,
    hopping_hamiltonian,
    number_op,
    total_number_op,
)


class TestBuildLattice:
    """Tests for lattice construction."""

    def test_counts_cells_and_volume(self) -> None:
        """Test that cell count and volumes follow the grid shape."""
        lattice = build_lattice(2, 3, 1e-4)
        assert lattice.n_cells == 9
        assert lattice.cell_volume == pytest.approx(1e-8)
        assert lattice.volume == pytest.approx(9e-8)
        assert lattice.edge_length == pytest.approx(3e-4)

    def test_minimal_image_distances(self) -> None:
        """Test that distances wrap around the periodic boundary."""
        lattice = build_lattice(1, 4, 1.0)
        assert lattice.squared_distances[0, 3] == pytest.approx(1.0)
        assert lattice.squared_distances[0, 2] == pytest.approx(4.0)

    def test_rejects_invalid_arguments(self) -> None:
        """Test that invalid dimensions and sizes are rejected."""
        with pytest.raises(ValueError):
            build_lattice(4, 2, 1.0)
        with pytest.raises(ValueError):
            build_lattice(1, 0, 1.0)
        with pytest.raises(ValueError):
            build_lattice(1, 2, 0.0)


class TestFockBasis:
    """Tests for truncated basis enumeration."""

    def test_documented_order_for_two_cells(self) -> None:
        """Test that occupations are ordered by total then descending lexicographic."""
        basis = build_fock_basis(build_lattice(1, 2, 1e-4), max_total=2)
        rows = [tuple(row) for row in basis.occupations]
        assert rows == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]

    def test_dimension_matches_binomial(self) -> None:
        """Test that the dimension equals C(N + M, M) times the matter dimension."""
        lattice = build_lattice(1, 2, 1e-4)
        assert build_fock_basis(lattice, 3).dim == 10
        assert build_fock_basis(lattice, 3, matter_dim=2).dim == 20
        assert basis_dimension(3, 4) == 35

    def test_single_cell_cutoff_zero(self) -> None:
        """Test that a zero cutoff leaves only the vacuum."""
        basis = build_fock_basis(build_lattice(1, 1, 1e-4), 0)
        assert basis.dim == 1

    def test_size_limit(self) -> None:
        """Test that oversized bases are refused before enumeration."""
        with pytest.raises(BasisTooLargeError):
            build_fock_basis(build_lattice(3, 4, 1e-4), 6, max_dim=1000)

    def test_joint_index_is_matter_major(self) -> None:
        """Test that the joint index is matter_index * n_occupations + occupation index."""
        basis = build_fock_basis(build_lattice(1, 2, 1e-4), 1, matter_dim=2)
        assert basis.joint_index((0, 1), 1) == 3 + 2

    def test_unknown_occupation(self) -> None:
        """Test that occupations beyond the cutoff are reported."""
        basis = build_fock_basis(build_lattice(1, 2, 1e-4), 1)
        with pytest.raises(ValueError):
            basis.occupation_index((2, 0))


class TestOperators:
    """Tests for ladder, number and field operators."""

    def test_annihilation_lowers_occupation(self) -> None:
        """Test that a_i maps |1, 0> to |0, 0>."""
        basis = build_fock_basis(build_lattice(1, 2, 1e-4), 2)
        a0 = annihilation_op(basis, 0).to_dense()
        assert a0[basis.occupation_index((0, 0)), basis.occupation_index((1, 0))] == 1.0
        assert a0[basis.occupation_index((1, 0)), basis.occupation_index((2, 0))] == pytest.approx(
            np.sqrt(2.0)
        )

    def test_canonical_commutator_below_cutoff(self) -> None:
        """Test that [a_i, a_i^dagger] = 1 on states below the cutoff."""
        basis = build_fock_basis(build_lattice(1, 2, 1e-4), 3)
        a = annihilation_op(basis, 1)
        commutator = (a @ a.dagger() - a.dagger() @ a).to_dense()
        below = basis.total_photons < basis.max_total
        assert np.allclose(np.diag(commutator)[below], 1.0)

    def test_creation_truncates_at_cutoff(self) -> None:
        """Test that a^dagger annihilates states at the cutoff."""
        basis = build_fock_basis(build_lattice(1, 1, 1e-4), 2)
        a_dag = creation_op(basis, 0).to_dense()
        assert np.allclose(a_dag[:, basis.occupation_index((2,))], 0.0)

    def test_number_operator_diagonal(self) -> None:
        """Test that n_i has the occupations on its diagonal."""
        basis = build_fock_basis(build_lattice(1, 2, 1e-4), 2)
        assert np.allclose(np.real(number_op(basis, 1).diagonal()), basis.occupations[:, 1])
        assert np.allclose(np.real(total_number_op(basis).diagonal()), basis.total_photons)

    def test_matter_lift(self) -> None:
        """Test that photon operators act as identity on the matter factor."""
        basis = build_fock_basis(build_lattice(1, 1, 1e-4), 2, matter_dim=2)
        expected = np.kron(np.eye(2), np.diag([0.0, 1.0, 2.0]))
        assert np.allclose(number_op(basis, 0).to_dense(), expected)

    def test_field_normalization(self) -> None:
        """Test that xi(x) = a / s^(d/2)."""
        basis = build_fock_basis(build_lattice(2, 2, 1e-2), 1)
        field = field_op(basis, 0).to_dense()
        lowering = annihilation_op(basis, 0).to_dense()
        assert np.allclose(field, lowering / 1e-2)
        assert abs(field[0, 1]) == pytest.approx(100.0)

    def test_cell_index_out_of_range(self) -> None:
        """Test that unknown cells raise IndexError."""
        basis = build_fock_basis(build_lattice(1, 2, 1e-4), 1)
        with pytest.raises(IndexError):
            number_op(basis, 2)


class TestHalfKField:
    """Tests for the K^(1/2) smoothed annihilator."""

    def test_zero_mode_vanishes(self) -> None:
        """Test that the coefficients sum to sqrt(|k = 0|) = 0."""
        lattice = build_lattice(1, 5, 1e-4)
        assert abs(half_k_coefficients(lattice, 2).sum()) < 1e-9 * np.abs(
            half_k_coefficients(lattice, 2)
        ).max()

    def test_coefficients_are_symmetric(self) -> None:
        """Test that neighbours on either side get equal weights."""
        coefficients = half_k_coefficients(build_lattice(1, 3, 1e-4), 0)
        assert coefficients[1] == pytest.approx(coefficients[2])
        assert coefficients[0] > 0

    def test_two_cell_kernel(self) -> None:
        """Test that two cells give c = sqrt(pi / s) / 2 with opposite signs."""
        cell_size = 1e-4
        expected = 0.5 * np.sqrt(np.pi / cell_size)
        lattice = build_lattice(1, 2, cell_size)
        assert half_k_coefficients(lattice, 0).tolist() == pytest.approx([expected, -expected])
        assert half_k_coefficients(lattice, 1).tolist() == pytest.approx([-expected, expected])
        assert expected == pytest.approx(88.6227, rel=1e-6)

    def test_single_cell_field_is_zero(self) -> None:
        """Test that one cell carries only the k = 0 mode."""
        lattice = build_lattice(1, 1, 1e-4)
        basis = build_fock_basis(lattice, 2)
        assert half_k_field_op(basis, lattice, 0).nnz == 0


class TestHopping:
    """Tests for the free hopping Hamiltonian."""

    def test_hermitian_and_number_conserving(self) -> None:
        """Test that hopping is Hermitian and commutes with total number."""
        basis = build_fock_basis(build_lattice(2, 2, 1e-4), 2)
        hamiltonian = hopping_hamiltonian(basis, 0.7)
        assert hamiltonian.is_hermitian()
        commutator = hamiltonian.commutator(total_number_op(basis))
        assert np.allclose(commutator.to_dense(), 0.0)

    def test_two_cell_matrix_element(self) -> None:
        """Test that -J couples |1, 0> and |0, 1>."""
        basis = build_fock_basis(build_lattice(1, 2, 1e-4), 1)
        dense = hopping_hamiltonian(basis, 2.0).to_dense()
        assert dense[basis.occupation_index((1, 0)), basis.occupation_index((0, 1))] == -2.0
