# ==============================================================================
# tests.test_core: Integration Tests for the Pipeline Engine
#
# These tests drive `gdpdisagg.core.run_pipeline` on the synthetic master
# file written by the `write_config` fixture. They check what lands on disk
# (reports and the manifest) rather than intermediate numbers, which the
# module-level suites already cover.
#
#   - End-to-end runs use the light configuration so that every stage
#     finishes in seconds.
#   - Failure paths patch a single collaborator inside `gdpdisagg.core`
#     and assert that the manifest still records what happened.
# ==============================================================================

import json
import logging
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest

from gdpdisagg import core
from gdpdisagg.config import load_config
from gdpdisagg.errors import ConvergenceError, DataError, EstimationError, ExpandingWindowError
from gdpdisagg.formats import read_table, sha256_file
from gdpdisagg.models import ElasticNetSettings, RegressorKind
from gdpdisagg.theorylab import ExperimentReport, ExperimentRow, RegularizationExperimentSpec


def _manifest(result: core.PipelineResult) -> dict:
    return json.loads(result["manifest_path"].read_text(encoding="utf-8"))


def _quarter_label(date: str) -> str:
    year, month = int(date[0:4]), int(date[5:7])
    return f"{year}Q{(month - 1) // 3 + 1}"


class TestRunPipelineEndToEnd:
    def test_all_stages(self, write_config, caplog):
        """
        GIVEN the light configuration and a synthetic master file
        WHEN every stage runs
        THEN each report is written and the manifest hashes all of them.
        """
        caplog.set_level(logging.INFO)
        config = load_config(write_config())
        result = core.run_pipeline(config)

        out = config.output.directory / "test"
        assert result["output_dir"] == out
        assert result["completed"] == list(core.ALL_STAGES)
        names = {p.relative_to(out).as_posix() for p in result["outputs"]}
        for expected in (
            "adf.csv",
            "quarterly_design.csv",
            "predictions/chow_lin_lag0.csv",
            "predictions/elastic_net_lag1.csv",
            "summary.csv",
            "best_overall.csv",
            "best_by_lag.csv",
            "dm.csv",
            "final_fit.json",
            "monthly_gdp.csv",
            "adjustment_factors.csv",
            "attribution.csv",
            "ranking.csv",
            "theory_regime.csv",
            "theory_regime_bias.csv",
            "theory_ridge.csv",
        ):
            assert expected in names

        manifest = _manifest(result)
        assert manifest["completed_stages"] == list(core.ALL_STAGES)
        assert manifest["failed_stage"] is None
        assert manifest["seed"] == 5
        assert manifest["input_sha256"] == sha256_file(config.data.path)
        assert manifest["outputs"]["summary.csv"] == sha256_file(out / "summary.csv")
        assert "Manifest written to" in caplog.text

        summary = read_table(out / "summary.csv")
        assert len(summary) == 4
        assert set(summary["Model"]) == {"chow_lin", "elastic_net"}
        assert len(read_table(out / "dm.csv")) == 2
        assert len(read_table(out / "ranking.csv")) == 3

    def test_reports_are_reproducible(self, write_config):
        config = load_config(write_config())
        first = core.run_pipeline(config, ["preprocess", "disaggregate"])
        manifest_1 = first["manifest_path"].read_bytes()
        monthly_1 = (first["output_dir"] / "monthly_gdp.csv").read_bytes()

        second = core.run_pipeline(config, ["preprocess", "disaggregate"])
        assert second["manifest_path"].read_bytes() == manifest_1
        assert (second["output_dir"] / "monthly_gdp.csv").read_bytes() == monthly_1

    def test_parallel_cells_match_serial(self, write_config, tmp_path: Path):
        path = write_config()
        serial = core.run_pipeline(load_config(path, out=tmp_path / "serial"), ["evaluate"], workers=1)
        parallel = core.run_pipeline(load_config(path, out=tmp_path / "parallel"), ["evaluate"], workers=2)
        assert (serial["output_dir"] / "summary.csv").read_bytes() == (parallel["output_dir"] / "summary.csv").read_bytes()


class TestDisaggregateStage:
    def test_ma5_output(self, write_config):
        config = load_config(write_config())
        result = core.run_pipeline(config, ["disaggregate"])
        monthly = read_table(result["output_dir"] / "monthly_gdp.csv")

        assert list(monthly.columns) == ["date", "signal", "growth", "level", "annualized", "constrained"]
        assert monthly["constrained"].any()
        np.testing.assert_allclose(monthly["level"], 100.0 * np.exp(np.cumsum(monthly["growth"])), rtol=1e-12)
        assert monthly["annualized"].iloc[:4].isna().all()
        assert monthly["annualized"].iloc[4:].notna().all()
        assert read_table(result["output_dir"] / "adjustment_factors.csv").columns.tolist() == ["quarter", "adjustment_factor"]

    def test_denton_months_sum_to_quarters(self, write_config):
        """
        GIVEN Denton mode
        WHEN monthly growth is produced
        THEN the three months of every constrained quarter sum to that quarter's growth.
        """
        config = load_config(write_config(mode="denton"))
        result = core.run_pipeline(config, ["preprocess", "disaggregate"])
        monthly = read_table(result["output_dir"] / "monthly_gdp.csv")
        design = read_table(result["output_dir"] / "quarterly_design.csv")
        targets = dict(zip(design["date"], design["gdp_growth"]))

        constrained = monthly[monthly["constrained"]]
        sums = constrained.groupby(constrained["date"].map(_quarter_label))["growth"].sum()
        assert len(sums) > 10
        for quarter, total in sums.items():
            assert total == pytest.approx(targets[quarter], abs=1e-10)

    def test_bootstrap_table(self, write_config):
        config = load_config(write_config(bootstrap=20))
        result = core.run_pipeline(config, ["disaggregate"])
        table = read_table(result["output_dir"] / "bootstrap.csv")
        assert len(table) == 6
        assert (table["lower"] <= table["upper"]).all()

    def test_base_level_and_benchmark(self, write_config, tmp_path: Path):
        bench = tmp_path / "bench.csv"
        months = [f"2012-{m:02d}-01" for m in range(1, 13)]
        bench.write_text(
            "DATE,INDEX\n" + "".join(f"{d},{100.0 + i}\n" for i, d in enumerate(months)),
            encoding="utf-8",
        )
        config = load_config(write_config())
        settings = config.disaggregation.model_copy(
            update={"base_level": 250.0, "benchmark_path": bench, "benchmark_column": "INDEX"}
        )
        config = config.model_copy(update={"disaggregation": settings})

        result = core.run_pipeline(config, ["disaggregate"])
        monthly = read_table(result["output_dir"] / "monthly_gdp.csv")
        assert monthly["level"].iloc[0] == pytest.approx(250.0 * np.exp(monthly["growth"].iloc[0]))
        comparison = read_table(result["output_dir"] / "benchmark.csv")
        assert comparison["date"].tolist() == months
        assert comparison["estimate"].iloc[0] == pytest.approx(100.0)
        assert comparison["benchmark"].iloc[0] == pytest.approx(100.0)


class TestEvaluateStage:
    def test_failed_cell_becomes_warning(self, write_config):
        real = core.run_expanding_window

        def flaky(spec, *args, **kwargs):
            if spec.kind is RegressorKind.CHOW_LIN:
                raise ExpandingWindowError("3 of 10 expanding-window steps failed")
            return real(spec, *args, **kwargs)

        config = load_config(write_config())
        with patch("gdpdisagg.core.run_expanding_window", side_effect=flaky):
            result = core.run_pipeline(config, ["evaluate"])

        assert result["completed"] == ["evaluate"]
        assert any("chow_lin at lag 0" in w for w in result["warnings"])
        assert set(read_table(result["output_dir"] / "summary.csv")["Model"]) == {"elastic_net"}
        assert _manifest(result)["warnings"] == result["warnings"]

    def test_cell_estimation_error_becomes_warning(self, write_config):
        real = core.run_expanding_window

        def diverging(spec, *args, **kwargs):
            if spec.kind is RegressorKind.ELASTIC_NET:
                raise ConvergenceError("coordinate descent did not converge")
            return real(spec, *args, **kwargs)

        config = load_config(write_config())
        with patch("gdpdisagg.core.run_expanding_window", side_effect=diverging):
            result = core.run_pipeline(config, ["evaluate"])

        assert result["completed"] == ["evaluate"]
        assert any("elastic_net at lag 1: coordinate descent" in w for w in result["warnings"])
        assert set(read_table(result["output_dir"] / "summary.csv")["Model"]) == {"chow_lin"}

    def test_every_cell_failing_aborts(self, write_config):
        config = load_config(write_config())
        with patch("gdpdisagg.core.run_expanding_window", side_effect=ExpandingWindowError("all bad")):
            with pytest.raises(ExpandingWindowError, match="Every evaluation cell failed"):
                core.run_pipeline(config, ["evaluate"])

    def test_spare_workers_reach_the_steps(self, write_config):
        """
        GIVEN 4 regressor x lag cells and 8 workers
        WHEN the evaluation runs
        THEN every cell evaluates its steps with a pool of 2.
        """
        real = core.run_expanding_window
        seen = []

        def recording(spec, x, y, protocol, transform):
            seen.append(protocol.workers)
            return real(spec, x, y, protocol, transform)

        config = load_config(write_config())
        with patch("gdpdisagg.core.run_expanding_window", side_effect=recording):
            core.run_pipeline(config, ["evaluate"], workers=8)
        assert seen == [2, 2, 2, 2]

    def test_dm_needs_predictions(self, write_config):
        config = load_config(write_config())
        with pytest.raises(DataError, match="run 'evaluate' first"):
            core.run_pipeline(config, ["dm"])


class TestTheoryStage:
    def _with_experiment(self, config, experiment=None):
        update = {"run_experiment": True}
        if experiment is not None:
            update["experiment"] = experiment
        return config.model_copy(update={"theory": config.theory.model_copy(update=update)})

    def _run(self, config) -> tuple[list[RegularizationExperimentSpec], core.PipelineResult]:
        seen: list[RegularizationExperimentSpec] = []

        def fake(spec):
            seen.append(spec)
            return ExperimentReport([ExperimentRow(spec.seed, 1.0, 2.0)])

        with patch("gdpdisagg.core.regularization_experiment", side_effect=fake):
            result = core.run_pipeline(config, ["theory"])
        return seen, result

    def test_experiment_scores_the_configured_elastic_net(self, write_config):
        """
        GIVEN the experiment enabled without its own Elastic Net settings
        WHEN the theory stage runs
        THEN the experiment uses the run's [elastic_net] settings and seed.
        """
        config = self._with_experiment(load_config(write_config()))
        seen, result = self._run(config)

        assert seen[0].elastic_net == config.elastic_net
        assert seen[0].seed == 5
        table = read_table(result["output_dir"] / "theory_experiment.csv")
        assert table["elastic_net_wins"].tolist() == [True]

    def test_explicit_experiment_settings_are_kept(self, write_config):
        own = ElasticNetSettings(folds=2, n_alphas=5, l1_ratios=(1.0,))
        config = self._with_experiment(load_config(write_config()), RegularizationExperimentSpec(elastic_net=own))
        seen, _ = self._run(config)
        assert seen[0].elastic_net == own


class TestRunPipelineFailures:
    def test_unknown_stage(self, write_config):
        config = load_config(write_config())
        with pytest.raises(DataError, match="Unknown stage"):
            core.run_pipeline(config, ["preprocess", "forecast"])
        assert not (config.output.directory / "test" / "manifest.json").exists()

    def test_failed_stage_is_recorded(self, write_config):
        """
        GIVEN a stage that raises an estimation error
        WHEN the pipeline runs
        THEN the error propagates and the manifest names the completed and failed stages.
        """
        config = load_config(write_config())
        with patch("gdpdisagg.core.shapley_attributions", side_effect=EstimationError("boom")):
            with pytest.raises(EstimationError, match="boom"):
                core.run_pipeline(config, ["preprocess", "explain", "theory"])

        manifest = json.loads((config.output.directory / "test" / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["completed_stages"] == ["preprocess"]
        assert manifest["failed_stage"] == "explain"
        assert manifest["error"] == "boom"
        assert "adf.csv" in manifest["outputs"]

    def test_numerical_error_is_wrapped(self, write_config):
        config = load_config(write_config())
        with patch("gdpdisagg.core.adf_report", side_effect=np.linalg.LinAlgError("singular")):
            with pytest.raises(EstimationError, match="Stage 'preprocess' failed: singular"):
                core.run_pipeline(config, ["preprocess"])

    def test_bad_master_file(self, write_config, write_master):
        path = write_config()
        write_master(text="DATE,IP,GDP\n2010-01-01,1,\n")
        config = load_config(path)
        with pytest.raises(DataError, match="at least two populated quarters"):
            core.run_pipeline(config, ["preprocess"])
        manifest = json.loads((config.output.directory / "test" / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["failed_stage"] == "preprocess"
        assert manifest["input_sha256"] is None
