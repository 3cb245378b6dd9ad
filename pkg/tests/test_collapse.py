"""Tests for smeared number operators and the discrete collapse process."""

import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from photon_collapse.core import collapse
from photon_collapse.core.collapse import (
    UnitaryPropagator,
    apply_collapse,
    collapse_operator,
    ensemble_average,
    gaussian_weights,
    run_ensemble,
    run_trajectory,
    sample_next_event,
    smeared_number_op,
)
from photon_collapse.core.lattice import (
    build_fock_basis,
    build_lattice,
    hopping_hamiltonian,
    number_op,
)
from photon_collapse.core.models import CollapseParams, SparseOperator, StateVector
from photon_collapse.core.utils import make_rng

CELL = 1e-4


@pytest.fixture
def lattice():
    """Two cells of 10^-4 m on a line."""
    return build_lattice(1, 2, CELL)


@pytest.fixture
def basis(lattice):
    """Cutoff 3 on two cells."""
    return build_fock_basis(lattice, 3)


def _random_state(basis, rng):
    raw = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    return StateVector.normalized(basis, raw)


class TestSmearedNumber:
    """Tests for the Gaussian-smeared number operator."""

    def test_weights(self, lattice) -> None:
        """Test that the center weighs 1 and the neighbour exp(-d^2 / a^2)."""
        weights = gaussian_weights(lattice, CELL, 0)
        assert weights[0] == 1.0
        assert weights[1] == pytest.approx(math.exp(-1.0))

    def test_eigenvalues(self, basis, lattice) -> None:
        """Test that N(a, x) is diagonal with nu = sum_j w_j n_j."""
        operator = smeared_number_op(basis, lattice, CELL, 0)
        assert operator.is_diagonal()
        index = basis.occupation_index((1, 2))
        assert operator.diagonal()[index].real == pytest.approx(1.0 + 2.0 * math.exp(-1.0))

    def test_narrow_smearing_reduces_to_number(self, basis, lattice) -> None:
        """Test that a << cell size gives the bare cell number."""
        operator = smeared_number_op(basis, lattice, 1e-7, 1)
        assert np.allclose(operator.to_dense(), number_op(basis, 1).to_dense())

    def test_lattice_mismatch(self, basis) -> None:
        """Test that a foreign lattice is refused."""
        with pytest.raises(ValueError):
            smeared_number_op(basis, build_lattice(1, 3, CELL), CELL, 0)


class TestCollapseOperator:
    """Tests for the collapse operators K_n."""

    def test_completeness_by_quadrature(self, basis, lattice) -> None:
        """Test that the integral of ||K_n psi||^2 over n is 1 for random states."""
        b = 4.0
        n_op = smeared_number_op(basis, lattice, CELL, 0)
        grid = np.linspace(-5.0, 10.0, 3001)
        squared = np.array([np.abs(collapse_operator(n_op, b, n).diagonal()) ** 2 for n in grid])
        rng = np.random.default_rng(11)
        for _ in range(100):
            probabilities = np.abs(_random_state(basis, rng).amplitudes) ** 2
            total = trapezoid(squared @ probabilities, grid)
            assert total == pytest.approx(1.0, abs=1e-8)

    def test_rejects_off_diagonal_operator(self, basis) -> None:
        """Test that only diagonal smeared numbers are accepted."""
        with pytest.raises(ValueError):
            collapse_operator(hopping_hamiltonian(basis, 1.0), 4.0, 0.0)


class TestApplyCollapse:
    """Tests for single collapse events."""

    def test_result_is_normalized(self, basis) -> None:
        """Test that collapsed states are normalized and events are recorded."""
        rng = make_rng(5)
        state = _random_state(basis, np.random.default_rng(0))
        params = CollapseParams(a=CELL, b=4.0, mu=1.0)
        collapsed, event = apply_collapse(state, 1, params, rng, time=0.25)
        assert np.linalg.norm(collapsed.amplitudes) == pytest.approx(1.0, abs=1e-12)
        assert event.cell_index == 1
        assert event.time == 0.25
        assert sum(weight for _, weight in event.pre_norm_weights) == pytest.approx(1.0)

    def test_sharp_collapse_follows_born_rule(self) -> None:
        """Test that a sharp collapse picks |0> or |1> with their Born weights."""
        single = build_lattice(1, 1, CELL)
        basis = build_fock_basis(single, 1)
        state = StateVector.normalized(basis, [1.0, math.sqrt(3.0)])
        params = CollapseParams(a=CELL, b=200.0, mu=1.0)
        rng = make_rng(99)
        ones = 0
        for _ in range(4000):
            collapsed, _ = apply_collapse(state, 0, params, rng)
            ones += int(abs(collapsed.amplitudes[1]) ** 2 > 0.5)
        assert ones / 4000 == pytest.approx(0.75, abs=0.03)

    def test_isolated_matter_stays_pure(self) -> None:
        """Test that 1000 collapses leave an uncoupled matter factor untouched."""
        lattice = build_lattice(1, 3, CELL)
        basis = build_fock_basis(lattice, 2, matter_dim=2)
        photons = np.random.default_rng(8).normal(size=basis.n_occupations)
        photons /= np.linalg.norm(photons)
        matter = np.array([0.6, 0.8j])
        state = StateVector.normalized(basis, np.kron(matter, photons))
        expected = np.outer(matter, matter.conj())
        params = CollapseParams(a=CELL, b=4.0, mu=1.0)
        rng = make_rng(2024)
        for _ in range(1000):
            state, _ = apply_collapse(state, int(rng.integers(3)), params, rng)
        assert np.max(np.abs(state.reduced_matter() - expected)) < 1e-12

    def test_single_event_dephasing_kernel(self) -> None:
        """Test that averaging one event over outcomes scales rho_01 by exp(-(b/4) dnu^2)."""
        basis = build_fock_basis(build_lattice(1, 1, CELL), 1)
        state = StateVector.normalized(basis, [1.0, 1.0])
        params = CollapseParams(a=CELL, b=4.0, mu=1.0)
        rng = make_rng(31)
        coherences = []
        for _ in range(20000):
            collapsed, _ = apply_collapse(state, 0, params, rng)
            coherences.append(collapsed.amplitudes[0] * collapsed.amplitudes[1].conjugate())
        assert abs(np.mean(coherences)) == pytest.approx(0.5 * math.exp(-1.0), abs=0.01)

    def test_eigenstate_is_fixed(self, basis) -> None:
        """Test that a number eigenstate is returned unchanged by any collapse."""
        state = StateVector.basis_state(basis, (1, 2))
        params = CollapseParams(a=CELL, b=4.0, mu=1.0)
        rng = make_rng(12)
        for cell in (0, 1, 0, 1):
            collapsed, event = apply_collapse(state, cell, params, rng)
            assert collapsed.fidelity(state) >= 1.0 - 1e-12
            assert len(event.pre_norm_weights) == 1

    def test_posterior_weights_near_one_photon(self) -> None:
        """Test that b = 4 and an outcome near 1 leave weights close to 0.0180 and 0.9820."""
        basis = build_fock_basis(build_lattice(1, 1, CELL), 1)
        state = StateVector.normalized(basis, [1.0, 1.0])
        params = CollapseParams(a=CELL, b=4.0, mu=1.0)
        rng = make_rng(17)
        best = None
        for _ in range(2000):
            collapsed, event = apply_collapse(state, 0, params, rng)
            weights = np.abs(collapsed.amplitudes) ** 2
            n = event.outcome_n
            expected_zero = 1.0 / (1.0 + math.exp(params.b * (n**2 - (1.0 - n) ** 2)))
            assert weights[0] == pytest.approx(expected_zero, abs=1e-12)
            if best is None or abs(n - 1.0) < abs(best[0] - 1.0):
                best = (n, weights)
        assert best is not None
        assert abs(best[0] - 1.0) < 0.01
        assert best[1].tolist() == pytest.approx([0.0180, 0.9820], abs=2e-3)

    def test_sharp_limit_projects(self) -> None:
        """Test that b = 10^6 leaves an occupation eigenstate with Born frequencies."""
        basis = build_fock_basis(build_lattice(1, 1, CELL), 1)
        state = StateVector.normalized(basis, [1.0, math.sqrt(3.0)])
        params = CollapseParams(a=CELL, b=1e6, mu=1.0)
        rng = make_rng(23)
        ones = 0
        for _ in range(2000):
            collapsed, _ = apply_collapse(state, 0, params, rng)
            probabilities = np.abs(collapsed.amplitudes) ** 2
            assert max(probabilities) >= 1.0 - 1e-12
            ones += int(probabilities[1] > 0.5)
        assert ones / 2000 == pytest.approx(0.75, abs=0.03)


class TestEventSampling:
    """Tests for Poisson event times."""

    def test_zero_rate_draws_nothing(self, lattice) -> None:
        """Test that mu = 0 produces no events."""
        params = CollapseParams(a=CELL, b=4.0, mu=0.0)
        assert sample_next_event(params, lattice, 0.0, 1.0, make_rng(1)) is None

    def test_horizon_must_be_ahead(self, lattice) -> None:
        """Test that a horizon in the past is refused."""
        params = CollapseParams(a=CELL, b=4.0, mu=1.0)
        with pytest.raises(ValueError):
            sample_next_event(params, lattice, 1.0, 1.0, make_rng(1))

    def test_waiting_time_and_cell_distribution(self, lattice) -> None:
        """Test that waits average 1 / (mu V) and centers are uniform over cells."""
        params = CollapseParams.from_cell_rate(lattice, 5.0, a=CELL, b=4.0)
        rng = make_rng(41)
        draws = [sample_next_event(params, lattice, 0.0, 1e9, rng) for _ in range(100000)]
        assert all(draw is not None for draw in draws)
        waits = np.array([draw[0] for draw in draws if draw is not None])
        cells = np.array([draw[1] for draw in draws if draw is not None])
        assert waits.mean() == pytest.approx(0.1, rel=0.01)
        fractions = np.bincount(cells, minlength=2) / len(cells)
        assert fractions.tolist() == pytest.approx([0.5, 0.5], abs=0.01)

    def test_mean_event_count(self, lattice) -> None:
        """Test that event counts average mu * V * t."""
        params = CollapseParams.from_cell_rate(lattice, 5.0, a=CELL, b=4.0)
        basis = build_fock_basis(lattice, 1)
        vacuum = StateVector.basis_state(basis, (0, 0))
        records = run_ensemble(
            vacuum, SparseOperator.zero(basis), params, 1.0, (), 400, master_seed=3
        )
        mean = np.mean([len(record.events) for record in records])
        assert mean == pytest.approx(10.0, rel=0.1)


class TestUnitaryPropagator:
    """Tests for free evolution between collapses."""

    def test_single_photon_hopping(self, lattice) -> None:
        """Test that one photon oscillates as sin^2(J t) between two cells."""
        basis = build_fock_basis(lattice, 1)
        propagator = UnitaryPropagator(hopping_hamiltonian(basis, 2.0))
        evolved = propagator.advance(StateVector.basis_state(basis, (1, 0)), 0.3)
        probability = abs(evolved.amplitudes[basis.occupation_index((0, 1))]) ** 2
        assert probability == pytest.approx(math.sin(0.6) ** 2)

    def test_rejects_non_hermitian(self, basis) -> None:
        """Test that a non-Hermitian generator is refused."""
        matrix = np.zeros((basis.dim, basis.dim), dtype=complex)
        matrix[0, 1] = 1.0
        with pytest.raises(ValueError):
            UnitaryPropagator(SparseOperator(basis, matrix))

    def test_step_matrix_is_cached_per_duration(self, lattice, monkeypatch) -> None:
        """Test that repeated durations reuse one matrix exponential."""
        basis = build_fock_basis(lattice, 1)
        propagator = UnitaryPropagator(hopping_hamiltonian(basis, 2.0))
        calls = []
        original = collapse.linalg.expm

        def counting_expm(matrix):
            calls.append(matrix.shape)
            return original(matrix)

        monkeypatch.setattr(collapse.linalg, "expm", counting_expm)
        state = StateVector.basis_state(basis, (1, 0))
        first = propagator.advance(state, 0.1)
        second = propagator.advance(first, 0.1)
        propagator.advance(second, 0.2)
        assert len(calls) == 2
        assert np.array_equal(propagator.step_matrix(0.1), propagator.step_matrix(0.1))
        direct = propagator.advance(state, 0.2)
        assert second.fidelity(direct) == pytest.approx(1.0, abs=1e-12)


class TestTrajectories:
    """Tests for trajectories and ensembles."""

    def test_no_events_without_collapse(self, basis) -> None:
        """Test that mu = 0 with H = 0 leaves the state unchanged."""
        state = _random_state(basis, np.random.default_rng(4))
        params = CollapseParams(a=CELL, b=4.0, mu=0.0)
        record = run_trajectory(
            state, SparseOperator.zero(basis), params, 1.0, [0.0, 0.5, 1.0], keep_states=True
        )
        assert record.events == []
        assert len(record.sampled_states) == 3
        assert record.final_state.fidelity(state) == pytest.approx(1.0)

    def test_sample_times_validated(self, basis) -> None:
        """Test that samples beyond t_final are refused."""
        state = StateVector.basis_state(basis, (0, 0))
        params = CollapseParams(a=CELL, b=4.0, mu=0.0)
        with pytest.raises(ValueError):
            run_trajectory(state, SparseOperator.zero(basis), params, 1.0, [2.0])

    def test_observables_and_watch(self, basis, lattice) -> None:
        """Test that observables are sampled and the watch time recorded."""
        state = StateVector.basis_state(basis, (1, 0))
        params = CollapseParams.from_cell_rate(lattice, 1.0, a=CELL, b=4.0)
        record = run_trajectory(
            state,
            SparseOperator.zero(basis),
            params,
            0.5,
            [0.0, 0.25, 0.5],
            seed=9,
            observables={"n0": lambda s: number_op(basis, 0).expectation(s).real},
            watch=lambda s: True,
        )
        assert record.observables["n0"] == pytest.approx([1.0, 1.0, 1.0])
        assert record.watch_time == 0.0

    def test_thread_count_does_not_change_results(self, basis, lattice) -> None:
        """Test that 1 and 4 threads give identical trajectories."""
        state = _random_state(basis, np.random.default_rng(6))
        hamiltonian = hopping_hamiltonian(basis, 3.0)
        params = CollapseParams.from_cell_rate(lattice, 4.0, a=CELL, b=4.0)
        kwargs = {"n_trajectories": 16, "master_seed": 77}
        serial = run_ensemble(state, hamiltonian, params, 1.0, [0.5, 1.0], **kwargs)
        threaded = run_ensemble(state, hamiltonian, params, 1.0, [0.5, 1.0], threads=4, **kwargs)
        for first, second in zip(serial, threaded, strict=True):
            assert first.seed == second.seed
            assert [e.to_dict() for e in first.events] == [e.to_dict() for e in second.events]
            assert np.array_equal(first.final_state.amplitudes, second.final_state.amplitudes)

    def test_ensemble_average_is_a_density_matrix(self, basis, lattice) -> None:
        """Test that averaged projectors have unit trace and are positive."""
        state = _random_state(basis, np.random.default_rng(7))
        params = CollapseParams.from_cell_rate(lattice, 2.0, a=CELL, b=4.0)
        records = run_ensemble(
            state, SparseOperator.zero(basis), params, 1.0, [0.0, 1.0], 50, 1, keep_states=True
        )
        averages = ensemble_average(records)
        assert len(averages) == 2
        for rho in averages:
            rho.validate()
        assert averages[0].purity() == pytest.approx(1.0)

    def test_ensemble_average_needs_states(self, basis) -> None:
        """Test that records without snapshots cannot be averaged."""
        state = StateVector.basis_state(basis, (0, 0))
        params = CollapseParams(a=CELL, b=4.0, mu=0.0)
        records = run_ensemble(state, SparseOperator.zero(basis), params, 1.0, [1.0], 2, 1)
        with pytest.raises(ValueError):
            ensemble_average(records)
