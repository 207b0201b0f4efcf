import csv
import json

import numpy as np
import pytest

from spdebridge import replay_path, simulate_ensemble, sine_nemytskii, uniform_grid
from spdebridge.cli import main
from spdebridge.io import read_manifest, read_path_dump, write_path_dump
from spdebridge.scenario import SchemaError, resolve_scenario
from spdebridge.tasks import run_scenario


def base_scenario(task, **overrides):
    scn = {
        "model": {"n_modes": 2, "eigenvalues": {"rule": "explicit", "values": [-1.0, -4.0]},
                  "noise": {"rule": "explicit", "values": [2.0, 1.0]}},
        "dynamics": {"nonlinearity": {"kind": "zero"}, "x0": {"kind": "zero"}},
        "task": task,
        "grid": {"horizon": 1.0, "n_steps": 32, "kind": "uniform"},
        "sampling": {"n_paths": 400, "seed": 77},
        "output": {"formats": ["csv", "json"]},
    }
    scn.update(overrides)
    return scn


def run_cli(args):
    return main(list(args))


class TestScenarioValidation:
    def test_missing_seed_names_field(self):
        scn = base_scenario({"name": "forward"})
        del scn["sampling"]["seed"]
        with pytest.raises(SchemaError, match="seed"):
            resolve_scenario(scn)

    def test_unknown_task_rejected(self):
        with pytest.raises(SchemaError):
            resolve_scenario(base_scenario({"name": "frobnicate"}))

    def test_explicit_length_mismatch(self):
        scn = base_scenario({"name": "forward"})
        scn["model"]["eigenvalues"]["values"] = [-1.0]
        with pytest.raises(SchemaError, match="eigenvalues"):
            resolve_scenario(scn)

    def test_resolution_fills_defaults(self):
        resolved = resolve_scenario(base_scenario({"name": "forward"}))
        assert resolved["dynamics"]["oversample"] == 4
        assert resolved["output"]["formats"] == ["csv", "json"]


class TestRunDeterminism:
    def test_byte_identical_reruns(self, tmp_path):
        scn = resolve_scenario(base_scenario({"name": "forward", "times": [0.5, 1.0]}))
        run_scenario(scn, tmp_path / "a")
        run_scenario(scn, tmp_path / "b")
        for name in ("summary.csv", "manifest.json", "diagnostics.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_manifest_round_trip_reproduces_run(self, tmp_path):
        scn = resolve_scenario(base_scenario({"name": "forward", "times": [1.0]}))
        run_scenario(scn, tmp_path / "a")
        manifest = read_manifest(tmp_path / "a")
        rebuilt = resolve_scenario(manifest["scenario"])
        assert rebuilt == scn
        run_scenario(rebuilt, tmp_path / "b")
        assert (tmp_path / "a" / "summary.csv").read_bytes() == (
            tmp_path / "b" / "summary.csv"
        ).read_bytes()


class TestExitCodes:
    def test_schema_violation_exits_one(self, tmp_path):
        bad = tmp_path / "bad.json"
        scn = base_scenario({"name": "forward"})
        del scn["sampling"]["seed"]
        bad.write_text(json.dumps(scn))
        assert run_cli(["run", str(bad), "--out", str(tmp_path / "r")]) == 1

    def test_domain_error_exits_two(self, tmp_path):
        scn = base_scenario({"name": "ck-check", "s": 0.5, "mid": [0.4], "t": 1.0})
        f = tmp_path / "scn.json"
        f.write_text(json.dumps(scn))
        assert run_cli(["run", str(f), "--out", str(tmp_path / "r")]) == 2

    def test_assert_failure_exits_three(self, tmp_path):
        # nonzero drift has no closed-form check, so assertion mode must fail
        scn = base_scenario({"name": "forward"})
        scn["dynamics"]["nonlinearity"] = {"kind": "sine", "alpha": 0.5}
        f = tmp_path / "scn.json"
        f.write_text(json.dumps(scn))
        assert run_cli(["run", str(f), "--out", str(tmp_path / "r"), "--assert"]) == 3

    def test_successful_assert_run(self, tmp_path):
        scn = base_scenario({"name": "forward", "times": [1.0]})
        f = tmp_path / "scn.json"
        f.write_text(json.dumps(scn))
        assert run_cli(["run", str(f), "--out", str(tmp_path / "r"), "--assert"]) == 0


class TestCompare:
    def _write_and_run(self, tmp_path, name, seed=77):
        scn = base_scenario({"name": "forward", "times": [0.5, 1.0]})
        scn["sampling"]["seed"] = seed
        resolved = resolve_scenario(scn)
        run_scenario(resolved, tmp_path / name)
        return tmp_path / name

    def test_self_compare_passes(self, tmp_path):
        a = self._write_and_run(tmp_path, "a")
        tol = tmp_path / "tol.json"
        tol.write_text(json.dumps({"default": {"abs": 0.0, "rel": 0.0}}))
        assert run_cli(["compare", str(a), str(a), str(tol)]) == 0

    def test_perturbed_table_fails_listing_cells(self, tmp_path, capsys):
        a = self._write_and_run(tmp_path, "a")
        b = self._write_and_run(tmp_path, "b")
        # perturb one value cell in b
        rows = list(csv.DictReader((b / "summary.csv").open()))
        rows[0]["value"] = repr(float(rows[0]["value"]) + 1.0)
        with (b / "summary.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
        tol = tmp_path / "tol.json"
        tol.write_text(json.dumps({"default": {"abs": 1e-12, "rel": 1e-12}}))
        assert run_cli(["compare", str(a), str(b), str(tol)]) == 3
        report = json.loads(capsys.readouterr().out)
        assert len(report["offending"]) == 1
        assert report["offending"][0]["quantity"] == rows[0]["quantity"]

    def test_incompatible_models_rejected(self, tmp_path):
        a = self._write_and_run(tmp_path, "a")
        scn = base_scenario({"name": "forward", "times": [0.5, 1.0]})
        scn["model"]["n_modes"] = 3
        scn["model"]["eigenvalues"]["values"] = [-1.0, -4.0, -9.0]
        scn["model"]["noise"]["values"] = [2.0, 1.0, 1.0]
        run_scenario(resolve_scenario(scn), tmp_path / "c")
        tol = tmp_path / "tol.json"
        tol.write_text(json.dumps({"default": {"abs": 0, "rel": 0}}))
        assert run_cli(["compare", str(a), str(tmp_path / "c"), str(tol)]) == 2


class TestPathDump:
    def test_round_trip_and_replay(self, tmp_path, two_mode):
        grid = uniform_grid(0.5, 16)
        nonlin = sine_nemytskii(0.5)
        ens = simulate_ensemble(two_mode, nonlin, np.zeros(2), grid, 5, n_paths=3)
        f = tmp_path / "paths.spdb"
        write_path_dump(f, ens)
        loaded = read_path_dump(f)
        np.testing.assert_array_equal(loaded.states, ens.states)
        np.testing.assert_array_equal(loaded.increments, ens.increments)
        np.testing.assert_array_equal(loaded.grid.nodes, grid.nodes)
        # replaying dumped increments reproduces dumped states bit-exactly
        replayed = replay_path(two_mode, nonlin, loaded.path(1))
        np.testing.assert_array_equal(replayed, ens.states[1])

    def test_magic_checked(self, tmp_path):
        f = tmp_path / "junk.spdb"
        f.write_bytes(b"JUNKxxxxyyyyzzzz")
        from spdebridge import DomainError

        with pytest.raises(DomainError):
            read_path_dump(f)

    def test_forward_task_writes_dump(self, tmp_path):
        scn = base_scenario({"name": "forward", "times": [1.0]})
        scn["output"]["formats"] = ["csv", "json", "paths"]
        scn["sampling"]["n_paths"] = 5
        run_scenario(resolve_scenario(scn), tmp_path / "r")
        loaded = read_path_dump(tmp_path / "r" / "paths.spdb")
        assert loaded.states.shape == (5, 33, 2)
