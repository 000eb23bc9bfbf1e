"""Scenario configs, validation, orchestration, and summary output."""

import json
import math

import numpy as np
import pytest

import worldflow as wf
from worldflow.scenarios import Metric, ScenarioError, validate_scenario


def tiny_doc(**overrides):
    """A minimal valid scenario document for validation tests."""
    doc = {
        "name": "tiny",
        "seed": 1,
        "grid": {"extents": [[-10.0, 10.0]], "npoints": [64]},
        "physics": {"hbar": 1.0, "masses": [1.0], "potential": {"kind": "free"}},
        "state": {"kind": "gaussian", "center": [0.0], "sigma": [1.0]},
        "run": {"dt_step": 0.01, "t_end": 0.1, "frame_stride": 5},
        "analyses": [],
        "thresholds": {},
    }
    doc.update(overrides)
    return doc


class TestValidation:
    def test_empty_analysis_list_is_valid(self):
        assert validate_scenario(tiny_doc()) == []

    def test_propagation_only_run(self, tmp_path):
        result = wf.run_scenario(wf.build_config(tiny_doc()), tmp_path / "tiny")
        assert result.metric("norm_drift").value <= 1e-10
        assert result.passed

    def test_nonpositive_dt_step_rejected(self):
        errors = validate_scenario(tiny_doc(run={"dt_step": -0.01, "t_end": 0.1}))
        assert any("dt_step" in e for e in errors)
        with pytest.raises(ScenarioError, match="dt_step"):
            wf.build_config(tiny_doc(run={"dt_step": 0.0, "t_end": 0.1}))

    def test_unknown_analysis_kind_gets_suggestion(self):
        errors = validate_scenario(tiny_doc(analyses=[{"kind": "continuty"}]))
        assert len(errors) == 1
        assert "unknown analysis kind" in errors[0]
        assert "did you mean 'continuity'" in errors[0]

    def test_region_outside_grid_named_in_error(self):
        doc = tiny_doc(
            analyses=[
                {
                    "kind": "measure",
                    "regions": [{"name": "runaway", "boxes": [[[5.0, 25.0]]]}],
                }
            ]
        )
        errors = validate_scenario(doc)
        assert any("runaway" in e for e in errors)
        with pytest.raises(ScenarioError, match="runaway"):
            wf.build_config(doc)

    def test_fractional_step_count_rejected(self):
        errors = validate_scenario(tiny_doc(run={"dt_step": 0.03, "t_end": 0.1}))
        assert any("integer number" in e for e in errors)

    def test_all_bundled_scenarios_validate_clean(self):
        import yaml

        for name in wf.list_bundled_scenarios():
            doc = yaml.safe_load(wf.bundled_scenario_path(name).read_text())
            assert validate_scenario(doc) == [], name


class TestMetricJudgement:
    def test_max_mode(self):
        assert Metric("m", 0.5, threshold=1.0).passed
        assert not Metric("m", 2.0, threshold=1.0).passed

    def test_min_mode(self):
        assert Metric("m", 2.0, threshold=1.0, mode="min").passed
        assert not Metric("m", 0.5, threshold=1.0, mode="min").passed

    def test_nan_always_fails(self):
        assert Metric("m", math.nan, threshold=1.0).passed is False
        assert Metric("m", math.nan, threshold=1.0, mode="min").passed is False

    def test_unjudged_without_threshold(self):
        assert Metric("m", 3.0).passed is None


class TestRunScenario:
    def test_free_gaussian_equivariance(self, scenario_results):
        result = scenario_results("free_gaussian")
        assert result.passed
        assert result.metric("equivariance_l1").value <= 0.02
        assert result.metric("norm_drift").value <= 1e-8
        assert result.metric("crossing_violations").value == 0

    def test_toy_model_laplace_rule(self, scenario_results):
        # uniform density through f(x)=x^2: the amount in [0, a] is sqrt(a)
        result = scenario_results("toy_model")
        assert result.passed
        assert result.artifacts["toy_probs"][0.25] == pytest.approx(0.5, abs=1e-6)
        assert result.metric("toy_prob_max_err").value <= 1e-6

    def test_summary_schema(self, scenario_results):
        result = scenario_results("free_gaussian")
        with open(result.outdir / "summary.json") as fh:
            summary = json.load(fh)
        for key in ("schema_version", "scenario", "seed", "runtime_s", "versions", "metrics", "notes", "passed"):
            assert key in summary
        assert summary["scenario"] == "free_gaussian"
        for m in summary["metrics"]:
            assert set(m) == {"name", "value", "threshold", "mode", "passed"}

    def test_bit_reproducibility(self, tmp_path):
        config = wf.load_scenario(wf.bundled_scenario_path("free_gaussian"))
        a = wf.run_scenario(config, tmp_path / "a")
        b = wf.run_scenario(config, tmp_path / "b")
        va = {m.name: m.value for m in a.metrics if m.name != "runtime_s"}
        vb = {m.name: m.value for m in b.metrics if m.name != "runtime_s"}
        assert va == vb

    def test_seed_override_recorded(self, tmp_path):
        config = wf.build_config(tiny_doc())
        result = wf.run_scenario(config, tmp_path / "seeded", seed_override=777)
        assert result.summary["seed"] == 777

    def test_tolerance_override_can_fail_a_run(self, tmp_path):
        config = wf.build_config(tiny_doc(thresholds={"norm_drift": 1e-8}))
        result = wf.run_scenario(config, tmp_path / "strict", tol_overrides={"norm_drift": 1e-30})
        assert not result.passed
        assert result.metric("norm_drift").passed is False

    def test_guard_violation_becomes_failed_metric(self, tmp_path):
        # a fast packet whose worlds leave the box: surfaced, not raised
        doc = tiny_doc(
            state={"kind": "gaussian", "center": [0.0], "sigma": [1.0], "momentum": [8.0]},
            run={"dt_step": 0.005, "t_end": 1.0, "frame_stride": 20},
            analyses=[{"kind": "bundle", "n": 11, "seeding": {"mode": "uniform", "span": [-2.0, 2.0]}}],
        )
        result = wf.run_scenario(wf.build_config(doc), tmp_path / "guard")
        assert result.metric("bundle_error").passed is False
        assert not result.passed
        assert any("bundle" in note for note in result.summary["notes"])

    def test_unknown_metric_name_raises(self, scenario_results):
        with pytest.raises(KeyError, match="no metric named"):
            scenario_results("toy_model").metric("nonexistent")


class TestListing:
    def test_bundled_scenarios_inventory(self):
        names = wf.list_bundled_scenarios()
        assert names == sorted(names)
        for expected in (
            "free_gaussian",
            "harmonic_ground",
            "harmonic_coherent",
            "plane_wave",
            "two_gaussian_interference",
            "measurement_2d",
            "measurement_3way",
            "toy_model",
            "vortex_quantization",
            "harmonic_2d",
            "miw_convergence",
        ):
            assert expected in names

    def test_unknown_bundled_name(self):
        with pytest.raises(FileNotFoundError, match="no bundled scenario"):
            wf.bundled_scenario_path("does_not_exist")


class TestRefinement:
    def test_refined_config_halves_spacing_and_step(self):
        config = wf.build_config(tiny_doc())
        fine = wf.refined_config(config, 2)
        assert fine.grid.npoints == (128,)
        assert fine.dt_step == pytest.approx(config.dt_step / 2)
        assert fine.t_end == config.t_end

    def test_continuity_study_reports_second_order(self):
        # three dt/spacing halvings on the spreading packet
        doc = tiny_doc(
            name="conv",
            grid={"extents": [[-10.0, 10.0]], "npoints": [128]},
            run={"dt_step": 0.02, "t_end": 0.5, "frame_stride": 5},
        )
        study = wf.continuity_convergence_study(wf.build_config(doc), levels=3)
        assert len(study["residuals"]) == 3
        assert study["residuals"][0] > study["residuals"][1] > study["residuals"][2]
        assert study["order"] == pytest.approx(2.0, abs=0.3)
