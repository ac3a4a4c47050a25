"""End-to-end tests for the command-line driver.

Each subcommand runs in-process through run_cli so exit codes, stdout,
stderr, and written artifacts can all be checked; one subprocess test
covers the module entry point.
"""

import dataclasses
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest
from scipy.special import ndtr

from paircomp import cli
from paircomp.cli import run_cli
from paircomp.datasets import university_counts_path
from paircomp.depthurst import (
    DependenceSpec,
    IdentificationStrategy,
    apply_identification,
)
from paircomp.estdep import ParameterVector
from paircomp.pcdata import load_long_csv
from paircomp.simlab import simulate_dataset

THREE_OBJECT_TRUTH = [0.5, -0.3, float(np.arctanh(0.5)),
                      float(np.arctanh(0.3)), float(np.arctanh(0.2))]

WORTH_ONLY_H3 = {
    "link": "probit",
    "H": 3,
    "terms": [{"type": "worth", "constraint": "reference",
               "reference": "Stockholm"}],
}

WORTH_ONLY_SPLIT = {
    "link": "probit",
    "H": 2,
    "ties": "split-half",
    "terms": [{"type": "worth", "constraint": "reference",
               "reference": "Stockholm"}],
}

TAKANE_MODEL = {
    "dependence": {"kind": "takane"},
    "identification": {"kind": "unit-diagonal-omega-fixed"},
}


def write_json(path, doc):
    path.write_text(json.dumps(doc, indent=2))
    return path


def simulation_config(S=80, labels=("apple", "berry", "cherry")):
    return {
        "spec": {"kind": "takane", "n_objects": 3, "H": 2},
        "strategy": {"kind": "unit-diagonal-omega-fixed"},
        "truth": THREE_OBJECT_TRUTH,
        "S": S,
        "labels": list(labels),
    }


@pytest.fixture
def sim_csv(tmp_path):
    config = write_json(tmp_path / "sim3.json", simulation_config())
    out = tmp_path / "sim3.csv"
    assert run_cli(["simulate", "--config", str(config), "--seed", "11",
                    "--out", str(out)]) == 0
    return out


class TestFitIndependence:
    def test_cumulative_university_fit(self, tmp_path):
        model = write_json(tmp_path / "h3.json", WORTH_ONLY_H3)
        out = tmp_path / "fit.json"
        code = run_cli(["fit", "--data", str(university_counts_path()),
                        "--model", str(model),
                        "--estimator", "independent", "--out", str(out)])
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["fit_type"] == "independence"
        est = dict(zip(doc["fit"]["names"], doc["fit"]["estimates"]))
        assert est["London"] == pytest.approx(0.998, abs=0.005)
        assert est["tau_2"] == pytest.approx(0.153, abs=0.005)
        manifest = doc["manifest"]
        assert manifest["subcommand"] == "fit"
        assert manifest["tool_version"]
        assert manifest["duration_seconds"] > 0
        digest = hashlib.sha256(
            university_counts_path().read_bytes()).hexdigest()
        assert digest in manifest["input_digests"].values()

    def test_split_half_fit_with_quasi(self, tmp_path):
        model = write_json(tmp_path / "split.json", WORTH_ONLY_SPLIT)
        out = tmp_path / "fit.json"
        assert run_cli(["fit", "--data", str(university_counts_path()),
                        "--model", str(model),
                        "--estimator", "independent",
                        "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        est = dict(zip(doc["fit"]["names"], doc["fit"]["estimates"]))
        for name, value in (("London", 0.982), ("Paris", 0.561),
                            ("Barcelona", 0.333), ("St. Gallen", 0.325),
                            ("Milan", 0.240)):
            assert est[name] == pytest.approx(value, abs=0.005)
        assert doc["fit"]["quasi_se"] is not None
        assert len(doc["fit"]["quasi_se"]) == 6

    def test_bundled_data_resolved_by_name(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        model = write_json(tmp_path / "h3.json", WORTH_ONLY_H3)
        out = tmp_path / "fit.json"
        assert run_cli(["fit", "--data", "universities_agg.csv",
                        "--model", str(model),
                        "--estimator", "independent",
                        "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert str(university_counts_path()) in doc["manifest"][
            "input_digests"]


class TestPredict:
    def _university_fit(self, tmp_path):
        model = write_json(tmp_path / "h3.json", WORTH_ONLY_H3)
        out = tmp_path / "fit.json"
        run_cli(["fit", "--data", str(university_counts_path()),
                 "--model", str(model), "--estimator", "independent",
                 "--out", str(out)])
        return out

    def test_university_pair_probabilities(self, tmp_path, capsys):
        fit = self._university_fit(tmp_path)
        assert run_cli(["predict", "--fit", str(fit),
                        "--pair", "London,Paris"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["first_object_preferred"] == pytest.approx(0.61,
                                                              abs=0.01)
        assert doc["tie"] == pytest.approx(0.11, abs=0.01)
        assert doc["second_object_preferred"] == pytest.approx(0.28,
                                                               abs=0.01)
        assert sum(doc["probabilities"]) == pytest.approx(1.0, abs=1e-9)

    def test_reversed_pair_mirrors(self, tmp_path, capsys):
        fit = self._university_fit(tmp_path)
        run_cli(["predict", "--fit", str(fit), "--pair", "London,Paris"])
        forward = json.loads(capsys.readouterr().out)["probabilities"]
        run_cli(["predict", "--fit", str(fit), "--pair", "Paris,London"])
        backward = json.loads(capsys.readouterr().out)["probabilities"]
        np.testing.assert_allclose(forward, backward[::-1], atol=1e-12)

    def test_dependent_fit_prediction(self, tmp_path, sim_csv, capsys):
        model = write_json(tmp_path / "dep.json", TAKANE_MODEL)
        fit_path = tmp_path / "fit_pl.json"
        assert run_cli(["fit", "--data", str(sim_csv), "--model",
                        str(model), "--estimator", "pl",
                        "--out", str(fit_path)]) == 0
        assert run_cli(["predict", "--fit", str(fit_path),
                        "--pair", "apple,berry", "--out",
                        str(tmp_path / "pred.json")]) == 0
        doc = json.loads((tmp_path / "pred.json").read_text())

        from paircomp.estdep import DependentFit

        fit = DependentFit.from_json_dict(
            json.loads(fit_path.read_text())["fit"])
        expected = float(1.0 - ndtr(fit.standardized().cutpoints[0, 0]))
        assert doc["first_object_preferred"] == pytest.approx(expected,
                                                              abs=1e-9)

    def test_unknown_object_is_a_validation_error(self, tmp_path, capsys):
        fit = self._university_fit(tmp_path)
        assert run_cli(["predict", "--fit", str(fit),
                        "--pair", "London,Atlantis"]) == 2
        assert "Atlantis" in capsys.readouterr().err


class TestFitDependent:
    @pytest.mark.parametrize("estimator,method", [
        ("li", "limited-information"),
        ("pl", "pairwise"),
        ("ml", "full-ml"),
    ])
    def test_each_estimator_runs(self, tmp_path, sim_csv, estimator,
                                 method):
        model = write_json(tmp_path / "dep.json", TAKANE_MODEL)
        out = tmp_path / f"fit_{estimator}.json"
        code = run_cli(["fit", "--data", str(sim_csv), "--model",
                        str(model), "--estimator", estimator,
                        "--out", str(out), "--qmc-points", "127",
                        "--qmc-shifts", "2"])
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["fit_type"] == "dependent"
        assert doc["fit"]["method"] == method
        assert doc["objects"] == ["apple", "berry", "cherry"]
        assert len(doc["fit"]["psi"]) == 5
        assert doc["fit"]["converged"]

    def test_missing_dependence_block(self, tmp_path, sim_csv, capsys):
        model = write_json(tmp_path / "bad.json", {"H": 2})
        assert run_cli(["fit", "--data", str(sim_csv), "--model",
                        str(model), "--estimator", "pl",
                        "--out", str(tmp_path / "x.json")]) == 2
        assert "dependence" in capsys.readouterr().err


class TestGof:
    def _pl_fit(self, tmp_path, sim_csv):
        model = write_json(tmp_path / "dep.json", TAKANE_MODEL)
        out = tmp_path / "fit_pl.json"
        run_cli(["fit", "--data", str(sim_csv), "--model", str(model),
                 "--estimator", "pl", "--out", str(out)])
        return out

    def test_m2_report_and_fit_annotation(self, tmp_path, sim_csv, capsys):
        fit = self._pl_fit(tmp_path, sim_csv)
        annotated = tmp_path / "fit_gof.json"
        assert run_cli(["gof", "--data", str(sim_csv), "--fit", str(fit),
                        "--statistic", "m2", "--out",
                        str(annotated)]) == 0
        report = json.loads(capsys.readouterr().out)["gof"]
        assert report["statistic"] >= 0.0
        assert report["df"] == 1
        assert 0.0 <= report["p_value"] <= 1.0
        doc = json.loads(annotated.read_text())
        assert doc["gof"] == report
        assert doc["fit_type"] == "dependent"

    def test_g_weight_controls_p_value(self, tmp_path, sim_csv, capsys):
        fit = self._pl_fit(tmp_path, sim_csv)
        assert run_cli(["gof", "--data", str(sim_csv), "--fit", str(fit),
                        "--statistic", "g"]) == 0
        full = json.loads(capsys.readouterr().out)["gof"]
        assert full["p_value"] is not None
        assert run_cli(["gof", "--data", str(sim_csv), "--fit", str(fit),
                        "--statistic", "g", "--weight", "identity"]) == 0
        identity = json.loads(capsys.readouterr().out)["gof"]
        assert identity["p_value"] is None
        assert "weighted sum" in identity["note"]

    def test_rejects_an_independence_fit_file(self, tmp_path, sim_csv,
                                              capsys):
        model = write_json(tmp_path / "h3.json", WORTH_ONLY_H3)
        indep = tmp_path / "indep.json"
        run_cli(["fit", "--data", str(university_counts_path()),
                 "--model", str(model), "--estimator", "independent",
                 "--out", str(indep)])
        assert run_cli(["gof", "--data", str(sim_csv), "--fit", str(indep),
                        "--statistic", "m2"]) == 2
        assert "ml, li, or pl" in capsys.readouterr().err


class TestSimulate:
    def test_csv_round_trips_to_the_library_draw(self, tmp_path, sim_csv):
        data = load_long_csv(sim_csv)
        spec = DependenceSpec(kind="takane", n_objects=3, H=2)
        strategy = IdentificationStrategy(kind="unit-diagonal-omega-fixed")
        layout = apply_identification(spec, strategy)
        truth = ParameterVector(np.array(THREE_OBJECT_TRUTH), layout)
        direct = simulate_dataset(spec, strategy, truth, S=80, seed=11,
                                  labels=("apple", "berry", "cherry"))
        assert data.objects == direct.objects
        np.testing.assert_array_equal(data.outcome, direct.outcome)
        np.testing.assert_array_equal(data.subject_idx, direct.subject_idx)
        manifest = json.loads(
            (sim_csv.parent / "sim3.csv.manifest.json").read_text())
        assert manifest["seed"] == 11
        assert manifest["subcommand"] == "simulate"

    def test_same_seed_gives_identical_bytes(self, tmp_path):
        config = write_json(tmp_path / "c.json", simulation_config(S=40))
        a, b, c = (tmp_path / name for name in ("a.csv", "b.csv", "c.csv"))
        run_cli(["simulate", "--config", str(config), "--seed", "5",
                 "--out", str(a)])
        run_cli(["simulate", "--config", str(config), "--seed", "5",
                 "--out", str(b)])
        run_cli(["simulate", "--config", str(config), "--seed", "6",
                 "--out", str(c)])
        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes() != c.read_bytes()

    def test_bad_truth_length(self, tmp_path, capsys):
        doc = simulation_config()
        doc["truth"] = [0.0, 0.0]
        config = write_json(tmp_path / "c.json", doc)
        assert run_cli(["simulate", "--config", str(config), "--seed", "1",
                        "--out", str(tmp_path / "x.csv")]) == 2
        assert "length" in capsys.readouterr().err


class TestStudy:
    def _config(self, tmp_path, R=3, S=60):
        doc = {
            "spec": {"kind": "takane", "n_objects": 3, "H": 2},
            "strategy": {"kind": "unit-diagonal-omega-fixed"},
            "truth": THREE_OBJECT_TRUTH,
            "S": S,
            "R": R,
            "estimators": ["limited-information", "pairwise"],
            "qmc": {"n_points": 127, "n_shifts": 2},
        }
        return write_json(tmp_path / "study.json", doc)

    def test_outputs_and_byte_identical_reruns(self, tmp_path):
        config = self._config(tmp_path)
        run_a, run_b = tmp_path / "a", tmp_path / "b"
        assert run_cli(["study", "--config", str(config), "--seed", "7",
                        "--out", str(run_a)]) == 0
        assert run_cli(["study", "--config", str(config), "--seed", "7",
                        "--out", str(run_b)]) == 0
        for name in ("summary.csv", "raw_estimates.csv"):
            assert (run_a / name).read_bytes() == (run_b / name).read_bytes()
        summary = json.loads((run_a / "summary.json").read_text())
        assert summary["config"]["seed"] == 7
        assert set(summary["columns"]) == {"limited-information",
                                           "pairwise"}
        assert (run_a / "report.txt").read_text().startswith("estimator:")
        manifest = json.loads((run_a / "manifest.json").read_text())
        assert manifest["seed"] == 7
        assert str(config) in manifest["input_digests"]

    def test_seed_flag_overrides_config(self, tmp_path):
        config = self._config(tmp_path, R=2, S=50)
        run_a, run_b = tmp_path / "a", tmp_path / "b"
        run_cli(["study", "--config", str(config), "--seed", "1",
                 "--out", str(run_a)])
        run_cli(["study", "--config", str(config), "--seed", "2",
                 "--out", str(run_b)])
        assert (run_a / "raw_estimates.csv").read_bytes() != \
            (run_b / "raw_estimates.csv").read_bytes()


class TestTransitivity:
    def test_university_triads(self, tmp_path, capsys):
        assert run_cli(["transitivity", "--data",
                        str(university_counts_path())]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["n_triads"] == 20
        assert doc["n_evaluated"] == 20
        assert doc["weak_violations"] == 0
        triad = next(t for t in doc["triads"]
                     if set(t["objects"]) == {"London", "Paris", "Milan"})
        assert triad["weak_violation"] is False
        assert len(doc["triads"]) == 20

    def test_out_file(self, tmp_path, capsys):
        out = tmp_path / "trans.json"
        assert run_cli(["transitivity", "--data",
                        str(university_counts_path()),
                        "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["manifest"]["subcommand"] == "transitivity"


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self, capsys):
        assert run_cli(["fit", "--no-such-flag"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_missing_subcommand(self, capsys):
        assert run_cli([]) == 2

    def test_version_flag(self, capsys):
        assert run_cli(["--version"]) == 0
        assert "paircomp" in capsys.readouterr().out

    def test_missing_files(self, tmp_path, capsys):
        assert run_cli(["fit", "--data", "missing.csv", "--model",
                        "missing.json", "--estimator", "pl",
                        "--out", str(tmp_path / "x.json")]) == 2
        assert run_cli(["predict", "--fit", str(tmp_path / "none.json"),
                        "--pair", "a,b"]) == 2
        capsys.readouterr()

    def test_malformed_model_json(self, tmp_path, sim_csv, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run_cli(["fit", "--data", str(sim_csv), "--model", str(bad),
                        "--estimator", "pl",
                        "--out", str(tmp_path / "x.json")]) == 2
        assert "JSON" in capsys.readouterr().err

    def test_unknown_term_type(self, tmp_path, capsys):
        model = write_json(tmp_path / "m.json",
                           {"terms": [{"type": "wiggle"}]})
        assert run_cli(["fit", "--data", str(university_counts_path()),
                        "--model", str(model),
                        "--estimator", "independent",
                        "--out", str(tmp_path / "x.json")]) == 2
        assert "wiggle" in capsys.readouterr().err

    def test_thread_cap_validation(self, tmp_path, capsys):
        assert run_cli(["transitivity", "--data",
                        str(university_counts_path()),
                        "--threads", "0"]) == 2
        capsys.readouterr()
        assert run_cli(["transitivity", "--data",
                        str(university_counts_path()),
                        "--threads", "2"]) == 0
        capsys.readouterr()


class TestNumericalFailures:
    def test_crash_writes_partial_flag(self, tmp_path, sim_csv,
                                       monkeypatch, capsys):
        def explode(*a, **kw):
            raise np.linalg.LinAlgError("synthetic breakdown")

        monkeypatch.setattr(cli, "fit_pairwise", explode)
        model = write_json(tmp_path / "dep.json", TAKANE_MODEL)
        out = tmp_path / "fit.json"
        assert run_cli(["fit", "--data", str(sim_csv), "--model",
                        str(model), "--estimator", "pl",
                        "--out", str(out)]) == 3
        assert "synthetic breakdown" in capsys.readouterr().err
        flag = json.loads((tmp_path / "fit.json.partial").read_text())
        assert flag["flags"] == ["numerical-failure"]
        assert not out.exists()

    def test_flagged_fit_keeps_results_and_exits_3(self, tmp_path, sim_csv,
                                                   monkeypatch, capsys):
        from paircomp import estdep

        real = estdep.fit_pairwise

        def flagged(*a, **kw):
            fit = real(*a, **kw)
            return dataclasses.replace(
                fit, flags=fit.flags + ("not-converged",), converged=False)

        monkeypatch.setattr(cli, "fit_pairwise", flagged)
        model = write_json(tmp_path / "dep.json", TAKANE_MODEL)
        out = tmp_path / "fit.json"
        assert run_cli(["fit", "--data", str(sim_csv), "--model",
                        str(model), "--estimator", "pl",
                        "--out", str(out)]) == 3
        assert "not-converged" in capsys.readouterr().err
        assert out.exists()
        flag = json.loads((tmp_path / "fit.json.partial").read_text())
        assert "not-converged" in flag["flags"]


class TestModuleEntryPoint:
    def test_subprocess_invocation(self, tmp_path):
        result = subprocess.run(
            [sys.executable, "-m", "paircomp.cli", "transitivity",
             "--data", str(university_counts_path())],
            capture_output=True, text=True, timeout=120)
        assert result.returncode == 0
        doc = json.loads(result.stdout)
        assert doc["n_triads"] == 20
