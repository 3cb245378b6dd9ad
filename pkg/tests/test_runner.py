"""Tests for the experiment runner, result exporters and the command line."""

import csv
import dataclasses
import json
import math

import pytest

from photon_collapse.app import main
from photon_collapse.core.config import config_from_dict
from photon_collapse.core.exporters import (
    SCHEMA_VERSION,
    csv_text,
    export_csv,
    export_json,
    write_atomic,
)
from photon_collapse.core.lattice import build_fock_basis, build_lattice
from photon_collapse.core.presets import preset_config
from photon_collapse.core.runner import config_hash, load_custom_hamiltonian, run
from photon_collapse.core.utils import sha256_hex


def _preset(name, out_dir, **changes):
    return dataclasses.replace(preset_config(name), output=str(out_dir), **changes)


def _read_json(path):
    return json.loads(path.read_text(encoding="utf-8"))


def _checks(manifest):
    return {check.name: check for check in manifest.checks}


class TestExporters:
    """Tests for result writers."""

    def test_json_gets_schema_version(self, tmp_path) -> None:
        """Test that exported JSON carries the schema version and a matching hash."""
        output = export_json({"value": 1.5}, tmp_path / "result.json")
        text = (tmp_path / "result.json").read_text(encoding="utf-8")
        assert json.loads(text) == {"schema_version": SCHEMA_VERSION, "value": 1.5}
        assert output.sha256 == sha256_hex(text)
        assert output.size == len(text.encode("utf-8"))

    def test_json_refuses_nan(self, tmp_path) -> None:
        """Test that NaN never reaches a result file."""
        with pytest.raises(ValueError):
            export_json({"value": math.nan}, tmp_path / "bad.json")
        assert not (tmp_path / "bad.json").exists()

    def test_csv_header_and_rows(self, tmp_path) -> None:
        """Test that CSV rows follow the header and missing columns stay empty."""
        rows = [{"time": 0.0, "value": 1.0}, {"time": 1.0}]
        export_csv(["time", "value"], rows, tmp_path / "s.csv")
        with open(tmp_path / "s.csv", newline="", encoding="utf-8") as handle:
            rows = list(csv.DictReader(handle))
        assert rows == [{"time": "0.0", "value": "1.0"}, {"time": "1.0", "value": ""}]
        assert csv_text(["a"], []) == "a\n"

    def test_atomic_write_leaves_no_temporaries(self, tmp_path) -> None:
        """Test that only the target file remains after a write."""
        write_atomic(tmp_path / "nested" / "file.txt", "content")
        assert [p.name for p in (tmp_path / "nested").iterdir()] == ["file.txt"]


class TestRunEstimate:
    """Tests for the estimate experiment."""

    def test_estimate_preset(self, tmp_path) -> None:
        """Test that the estimate preset writes every record and passes."""
        manifest = run(_preset("desk-estimates", tmp_path))
        assert manifest.complete
        assert manifest.passed
        estimates = _read_json(tmp_path / "estimates.json")
        assert estimates["schema_version"] == SCHEMA_VERSION
        assert len(estimates["records"]) == 6
        stored = _read_json(tmp_path / "manifest.json")
        assert stored["complete"] is True
        assert stored["schema_version"] == SCHEMA_VERSION
        assert stored["outputs"][0]["name"] == "estimates.json"

    def test_failed_check_marks_run(self, tmp_path) -> None:
        """Test that an estimate outside its tolerance fails the run without an error."""
        config = config_from_dict(
            {"experiment": "estimate", "estimate": {"mu_cell": 1000.0}, "output": str(tmp_path)}
        )
        manifest = run(config)
        assert manifest.complete
        assert not manifest.passed
        assert _checks(manifest)["dust_grain_collapse_time"].passed is False

    def test_defaulted_inputs_are_echoed(self, tmp_path) -> None:
        """Test that defaulted estimator inputs reach the manifest and the config hash."""
        config = _preset("desk-estimates", tmp_path)
        run(config)
        echoed = _read_json(tmp_path / "manifest.json")["config"]["estimate"]
        assert echoed["irradiance"] == 400.0
        assert echoed["mean_photon_frequency"] == 5.5e14
        assert echoed["resolution_b"] == 4.0
        assert echoed["spectrum_band"] == [4e14, 8e14]
        brighter = config_from_dict(
            {"experiment": "estimate", "estimate": {"irradiance": 800.0}, "output": str(tmp_path)}
        )
        assert config_hash(brighter) != config_hash(config)


class TestRunTrajectory:
    """Tests for the trajectory experiment."""

    def test_vacuum_preset_is_event_free(self, tmp_path) -> None:
        """Test that mu = 0 produces no collapse events."""
        manifest = run(_preset("vacuum-trajectory", tmp_path))
        assert _checks(manifest)["event_free"].passed
        data = _read_json(tmp_path / "trajectories.json")
        assert all(record["events"] == [] for record in data["trajectories"])
        assert data["code_version"] == manifest.code_version
        assert data["rng_algorithm"] == manifest.rng_algorithm
        with open(tmp_path / "observables.csv", newline="", encoding="utf-8") as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == 4 * 11
        assert all(float(row["n_total"]) == pytest.approx(1.0) for row in rows)

    def test_thread_count_does_not_change_outputs(self, tmp_path) -> None:
        """Test that 1 and 8 threads write byte-identical result files."""
        base = dataclasses.replace(
            preset_config("vacuum-trajectory"),
            collapse=dataclasses.replace(preset_config("vacuum-trajectory").collapse, mu_cell=3.0),
            trajectories=12,
            seed=99,
        )
        serial = run(dataclasses.replace(base, output=str(tmp_path / "one"), threads=1))
        threaded = run(dataclasses.replace(base, output=str(tmp_path / "eight"), threads=8))
        assert serial.config_hash == threaded.config_hash
        for name in ("trajectories.json", "observables.csv"):
            first = (tmp_path / "one" / name).read_bytes()
            second = (tmp_path / "eight" / name).read_bytes()
            assert first == second
        assert [o.sha256 for o in serial.outputs] == [o.sha256 for o in threaded.outputs]

    def test_config_hash_ignores_output_and_threads(self, tmp_path) -> None:
        """Test that the hash covers only result-relevant settings."""
        config = preset_config("vacuum-trajectory")
        moved = dataclasses.replace(config, output="elsewhere", threads=6)
        assert config_hash(config) == config_hash(moved)
        assert config_hash(config) != config_hash(dataclasses.replace(config, seed=1))


class TestRunMaster:
    """Tests for the master-equation experiment."""

    def test_single_cell_dephasing(self, tmp_path) -> None:
        """Test that the dephasing preset passes hygiene and matches the closed form."""
        manifest = run(_preset("single-cell-dephasing", tmp_path))
        checks = _checks(manifest)
        assert manifest.passed
        for name in ("trace_deviation", "hermiticity_deviation", "min_eigenvalue"):
            assert checks[name].passed
        assert checks["analytic_dephasing"].passed
        assert checks["decoherence_rate"].value == pytest.approx(1.0, rel=1e-6)
        evolution = _read_json(tmp_path / "evolution.json")
        assert len(evolution["times"]) == 51
        assert "states" in evolution

    def test_energy_preset_hygiene(self, tmp_path) -> None:
        """Test that the energy-density generator keeps the state physical."""
        manifest = run(_preset("energy-dephasing", tmp_path))
        checks = _checks(manifest)
        assert checks["trace_deviation"].passed
        assert checks["hermiticity_deviation"].passed
        assert checks["min_eigenvalue"].passed
        assert "analytic_dephasing" not in checks

    def test_grw_average_preset(self, tmp_path) -> None:
        """Test that the averaged generator agrees with its closed form."""
        manifest = run(_preset("grw-average", tmp_path))
        checks = _checks(manifest)
        assert checks["analytic_dephasing"].passed
        expected = 10.0 * (1.0 - math.exp(-1.0))
        assert checks["decoherence_rate"].value == pytest.approx(expected, rel=1e-6)


class TestRunCrossValidation:
    """Tests for the cross-validation experiment."""

    def test_small_ensemble(self, tmp_path) -> None:
        """Test that a reduced ensemble passes its wider band."""
        manifest = run(_preset("grw-cross-validation", tmp_path, trajectories=400))
        report = _read_json(tmp_path / "cross_validation.json")
        assert report["n_trajectories"] == 400
        assert report["band"] == pytest.approx(0.25)
        assert manifest.passed


class TestRunShadow:
    """Tests for the dust-grain shadow experiment."""

    def test_shadow_preset(self, tmp_path) -> None:
        """Test that the simulated median agrees with the desk estimate within x2."""
        manifest = run(_preset("dust-grain-shadow", tmp_path))
        checks = _checks(manifest)
        assert checks["estimator_agreement"].passed
        assert checks["censored"].value == 0.0
        summary = _read_json(tmp_path / "shadow_summary.json")
        assert summary["estimator"]["dust_grain_collapse_time"] == pytest.approx(1.582e-4, rel=1e-3)
        assert summary["estimator"]["perception"] == "consistent"
        assert len(summary["resolution_sweep"]) == 5
        with open(tmp_path / "shadow_coherence.csv", newline="", encoding="utf-8") as handle:
            assert len(list(csv.DictReader(handle))) == 41


class TestRunFailures:
    """Tests for failed runs."""

    def test_failed_run_writes_incomplete_manifest(self, tmp_path) -> None:
        """Test that an error leaves an incomplete manifest and is re-raised."""
        config = config_from_dict(
            {
                "experiment": "master",
                "hamiltonian": {"preset": "custom", "path": str(tmp_path / "missing.json")},
                "output": str(tmp_path / "out"),
            }
        )
        with pytest.raises(FileNotFoundError):
            run(config)
        stored = _read_json(tmp_path / "out" / "manifest.json")
        assert stored["complete"] is False
        assert stored["passed"] is False
        assert stored["error"]

    def test_custom_hamiltonian_dimension(self, tmp_path) -> None:
        """Test that a custom matrix of the wrong size is refused."""
        path = tmp_path / "h.json"
        path.write_text(json.dumps({"matrix": [[0.0]]}), encoding="utf-8")
        basis = build_fock_basis(build_lattice(1, 1, 1e-4), 1)
        with pytest.raises(ValueError, match="dimension mismatch"):
            load_custom_hamiltonian(path, basis)

    def test_custom_hamiltonian_complex_entries(self, tmp_path) -> None:
        """Test that [re, im] entries are read as complex numbers."""
        path = tmp_path / "h.json"
        path.write_text(json.dumps([[0.0, [0.0, -1.0]], [[0.0, 1.0], 1.0]]), encoding="utf-8")
        basis = build_fock_basis(build_lattice(1, 1, 1e-4), 1)
        hamiltonian = load_custom_hamiltonian(path, basis)
        assert hamiltonian.is_hermitian()
        assert hamiltonian.to_dense()[0, 1] == -1j


class TestMain:
    """Tests for the command-line entry point."""

    def test_lists_presets(self, capsys) -> None:
        """Test that the presets command prints every name."""
        main(["presets"])
        printed = capsys.readouterr().out.split()
        assert "dust-grain-shadow" in printed
        assert "desk-estimates" in printed

    def test_estimate_command(self, tmp_path, capsys) -> None:
        """Test that the estimate subcommand runs its default preset."""
        main(["estimate", "--out", str(tmp_path)])
        assert (tmp_path / "manifest.json").exists()
        assert "Wrote manifest" in capsys.readouterr().out

    def test_experiment_mismatch_exits_1(self, tmp_path, capsys) -> None:
        """Test that a configuration of the wrong kind is an error."""
        with pytest.raises(SystemExit) as info:
            main(["master", "--preset", "desk-estimates", "--out", str(tmp_path)])
        assert info.value.code == 1
        assert "Error:" in capsys.readouterr().err

    def test_failed_checks_exit_2(self, tmp_path) -> None:
        """Test that failed acceptance checks give exit status 2."""
        config_path = tmp_path / "config.json"
        config_path.write_text(
            json.dumps({"experiment": "estimate", "estimate": {"mu_cell": 1000.0}}),
            encoding="utf-8",
        )
        with pytest.raises(SystemExit) as info:
            main(["run", "--config", str(config_path), "--out", str(tmp_path / "out")])
        assert info.value.code == 2

    def test_invalid_config_exits_1(self, tmp_path, capsys) -> None:
        """Test that validation errors are printed with their key path."""
        config_path = tmp_path / "config.json"
        config_path.write_text(
            json.dumps({"experiment": "master", "collapse": {"b": 0}}), encoding="utf-8"
        )
        with pytest.raises(SystemExit) as info:
            main(["run", "--config", str(config_path)])
        assert info.value.code == 1
        assert "collapse.b" in capsys.readouterr().err

    def test_seed_flag_validated(self) -> None:
        """Test that a negative seed is rejected by the parser."""
        with pytest.raises(SystemExit) as info:
            main(["estimate", "--seed", "-1"])
        assert info.value.code == 2
