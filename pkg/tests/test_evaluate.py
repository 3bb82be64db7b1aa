# ==============================================================================
# tests.test_evaluate: Expanding Window, Accuracy Metrics and DM Tests
# ==============================================================================

import logging
import math
from unittest.mock import patch

import numpy as np
import pytest

from gdpdisagg import regressors
from gdpdisagg.errors import DataError, EstimationError, ExpandingWindowError, InsufficientHistoryError
from gdpdisagg.evaluate import (
    DmResult,
    DmRow,
    MetricSet,
    SummaryRow,
    WindowProtocol,
    best_configurations,
    compute_metrics,
    default_bandwidth,
    dm_test,
    newey_west_variance,
    pairwise_dm,
    run_expanding_window,
    significance_stars,
)
from gdpdisagg.models import ElasticNetSettings, RegressorKind, RegressorSpec
from gdpdisagg.preprocess import TransformKind, TransformSpec
from gdpdisagg.series import Frequency, Series

_CHOW_LIN = RegressorSpec(kind=RegressorKind.CHOW_LIN)
_ELASTIC_NET = RegressorSpec(
    kind=RegressorKind.ELASTIC_NET,
    elastic_net=ElasticNetSettings(folds=3, n_alphas=10, l1_ratios=(0.5, 1.0)),
)


def _series(values) -> Series:
    return Series.from_start(0, np.asarray(values, dtype=float), Frequency.QUARTERLY)


def _target(x, seed: int = 1) -> Series:
    noise = np.random.default_rng(seed).standard_normal(len(x))
    return Series(x.index, 0.3 + x.data @ np.linspace(1.0, -1.0, x.n_columns) + 0.1 * noise, Frequency.QUARTERLY)


class TestExpandingWindow:
    def test_prediction_count_and_quarters(self, panel_factory):
        """
        GIVEN 10 quarters and an initial ratio of one half
        WHEN the expanding window runs
        THEN quarters 6..10 are predicted, one step each.
        """
        x = panel_factory(10, 1)
        y = _target(x)
        result = run_expanding_window(_CHOW_LIN, x, y)
        assert len(result.predictions) == 5
        np.testing.assert_array_equal(result.predictions.index, x.index[5:])
        np.testing.assert_array_equal(result.actuals.values, y.values[5:])
        assert [s.train_rows for s in result.steps] == [5, 6, 7, 8, 9]
        assert result.failed_steps == 0

    def test_same_seed_same_predictions(self, linear_design):
        x, y, _ = linear_design
        first = run_expanding_window(_ELASTIC_NET, x, y)
        second = run_expanding_window(_ELASTIC_NET, x, y)
        np.testing.assert_array_equal(first.predictions.values, second.predictions.values)
        assert first.hyperparameters == second.hyperparameters

    def test_hyperparameters_searched_once(self, linear_design):
        x, y, _ = linear_design
        result = run_expanding_window(_ELASTIC_NET, x, y)
        assert [s.searched for s in result.steps].count(True) == 1
        assert result.steps[0].searched
        assert set(result.hyperparameters) >= {"alpha", "l1_ratio"}

    def test_target_quarter_never_reaches_the_fit(self, linear_design):
        x, y, _ = linear_design
        baseline = run_expanding_window(_ELASTIC_NET, x, y)
        t = 40
        shocked = y.values.copy()
        shocked[t] += 100.0
        result = run_expanding_window(_ELASTIC_NET, x, y.with_values(shocked))
        step = t - 30
        assert result.steps[step].train_rows == t
        assert result.steps[step].fingerprint == baseline.steps[step].fingerprint
        assert result.predictions.values[step] == baseline.predictions.values[step]
        assert result.steps[step + 1].fingerprint != baseline.steps[step + 1].fingerprint

    def test_truncation_reproduces_prediction(self, linear_design):
        """
        GIVEN the full sample and the sample cut just after quarter t
        WHEN both run with the same initial window
        THEN the prediction for quarter t is bit-identical.
        """
        x, y, _ = linear_design
        protocol = WindowProtocol(initial_window=30)
        full = run_expanding_window(_ELASTIC_NET, x, y, protocol)
        cut = run_expanding_window(_ELASTIC_NET, x.slice(0, 45), y.slice(0, 45), protocol)
        assert cut.predictions.values[-1] == full.predictions.values[14]

    def test_parallel_steps_match_serial(self, linear_design):
        x, y, _ = linear_design
        serial = run_expanding_window(_ELASTIC_NET, x, y, WindowProtocol(workers=1))
        parallel = run_expanding_window(_ELASTIC_NET, x, y, WindowProtocol(workers=3))
        np.testing.assert_array_equal(serial.predictions.values, parallel.predictions.values)

    def test_level_scaling_leaves_linear_gls_unchanged(self, panel_factory):
        x = panel_factory(20, 2)
        y = _target(x)
        transform = TransformSpec(kinds={"x0": TransformKind.LEVEL, "x1": TransformKind.LOG_DIFF})
        raw = run_expanding_window(_CHOW_LIN, x, y)
        scaled = run_expanding_window(_CHOW_LIN, x, y, transform=transform)
        np.testing.assert_allclose(scaled.predictions.values, raw.predictions.values, atol=1e-8)

    def test_failed_step_is_recorded(self, panel_factory, caplog):
        x = panel_factory(20, 1)
        y = _target(x)
        real = regressors.fit_fixed

        def flaky(train_x, train_y, spec, hyperparameters):
            if len(train_y) == 13:
                raise EstimationError("singular step")
            return real(train_x, train_y, spec, hyperparameters)

        caplog.set_level(logging.WARNING)
        with patch("gdpdisagg.evaluate.regressors.fit_fixed", side_effect=flaky):
            result = run_expanding_window(_CHOW_LIN, x, y)
        assert result.failed_steps == 1
        failed = result.steps[3]
        assert failed.failed and failed.error == "singular step"
        assert math.isnan(result.predictions.values[3])
        assert "singular step" in caplog.text

    @pytest.mark.parametrize(
        "error",
        [RuntimeError("mat1 and mat2 shapes cannot be multiplied"), ValueError("array must not contain infs")],
    )
    def test_backend_exception_fails_only_its_step(self, panel_factory, error: Exception):
        """
        GIVEN a back end that raises a non-package exception at one step
        WHEN the expanding window runs
        THEN that step is recorded as failed and the window carries on.
        """
        x = panel_factory(20, 1)
        y = _target(x)
        real = regressors.fit_fixed

        def flaky(train_x, train_y, spec, hyperparameters):
            if len(train_y) == 12:
                raise error
            return real(train_x, train_y, spec, hyperparameters)

        with patch("gdpdisagg.evaluate.regressors.fit_fixed", side_effect=flaky):
            result = run_expanding_window(_CHOW_LIN, x, y)
        assert result.failed_steps == 1
        assert result.steps[2].failed
        assert result.steps[2].error == str(error)
        assert all(not s.failed for i, s in enumerate(result.steps) if i != 2)
        assert math.isnan(result.predictions.values[2])

    def test_too_many_failures(self, panel_factory):
        x = panel_factory(20, 1)
        with patch("gdpdisagg.evaluate.regressors.fit_fixed", side_effect=EstimationError("boom")):
            with pytest.raises(ExpandingWindowError, match="10 of 10"):
                run_expanding_window(_CHOW_LIN, x, _target(x))

    def test_failed_search_is_retried(self, linear_design):
        x, y, _ = linear_design
        real = regressors.search
        calls = []

        def first_fails(train_x, train_y, spec):
            calls.append(len(train_y))
            if len(calls) == 1:
                raise EstimationError("no luck")
            return real(train_x, train_y, spec)

        with patch("gdpdisagg.evaluate.regressors.search", side_effect=first_fails):
            result = run_expanding_window(_ELASTIC_NET, x, y)
        assert calls == [30, 31]
        assert result.steps[0].failed
        assert result.steps[1].searched and not result.steps[1].failed

    def test_insufficient_history(self, panel_factory):
        x = panel_factory(7, 1)
        with pytest.raises(InsufficientHistoryError, match="insufficient history"):
            run_expanding_window(_CHOW_LIN, x, _target(x))

    def test_initial_window_too_large(self, panel_factory):
        x = panel_factory(10, 1)
        with pytest.raises(DataError, match="no test quarter"):
            run_expanding_window(_CHOW_LIN, x, _target(x), WindowProtocol(initial_window=10))


class TestMetrics:
    def test_perfect_predictions(self):
        values = _series([0.5, -0.2, 1.0, 0.3])
        metrics = compute_metrics(values, values)
        assert (metrics.rmse, metrics.mae, metrics.sign_accuracy, metrics.n) == (0.0, 0.0, 1.0, 4)
        assert metrics.r2 == pytest.approx(1.0)
        assert metrics.correlation == pytest.approx(1.0)

    def test_mean_forecast_has_zero_r2(self):
        actual = _series([1.0, 2.0, 3.0, 6.0])
        assert compute_metrics(_series(np.full(4, 3.0)), actual).r2 == pytest.approx(0.0)

    def test_hand_computed_example(self):
        metrics = compute_metrics(_series([1.0, 1.0, 2.0]), _series([1.0, -1.0, 2.0]))
        assert metrics.sign_accuracy == pytest.approx(2.0 / 3.0)
        assert metrics.rmse == pytest.approx(math.sqrt(4.0 / 3.0))
        assert metrics.mae == pytest.approx(2.0 / 3.0)

    def test_zero_counts_as_positive(self):
        assert compute_metrics(_series([0.0, -1.0]), _series([2.0, -3.0])).sign_accuracy == 1.0

    def test_constant_actuals_leave_r2_undefined(self):
        assert math.isnan(compute_metrics(_series([1.0, 2.0, 3.0]), _series([2.0, 2.0, 2.0])).r2)

    def test_missing_pairs_are_skipped(self):
        metrics = compute_metrics(_series([1.0, np.nan, 3.0, 4.0]), _series([1.0, 5.0, 3.0, 5.0]))
        assert metrics.n == 3
        assert metrics.mae == pytest.approx(1.0 / 3.0)

    def test_too_few_pairs(self):
        with pytest.raises(DataError, match="at least 2"):
            compute_metrics(_series([1.0, np.nan]), _series([1.0, 2.0]))

    def test_joint_permutation_leaves_metrics_unchanged(self):
        rng = np.random.default_rng(0)
        pred, act = rng.standard_normal(30), rng.standard_normal(30)
        order = rng.permutation(30)
        a = compute_metrics(_series(pred), _series(act))
        b = compute_metrics(_series(pred[order]), _series(act[order]))
        assert a.rmse == pytest.approx(b.rmse)
        assert a.r2 == pytest.approx(b.r2)
        assert a.correlation == pytest.approx(b.correlation)
        assert a.sign_accuracy == b.sign_accuracy


class TestDieboldMariano:
    def test_identical_forecasts_are_degenerate(self):
        errors = _series(np.random.default_rng(1).standard_normal(20))
        result = dm_test(errors, errors)
        assert result.degenerate
        assert result.statistic == 0.0
        assert result.p_value == 1.0

    def test_swapping_models_negates_statistic(self):
        rng = np.random.default_rng(2)
        e1, e2 = _series(rng.standard_normal(40)), _series(1.3 * rng.standard_normal(40))
        assert dm_test(e1, e2).statistic == -dm_test(e2, e1).statistic

    def test_better_model_one_is_negative(self):
        rng = np.random.default_rng(3)
        result = dm_test(_series(0.2 * rng.standard_normal(60)), _series(2.0 * rng.standard_normal(60)))
        assert result.statistic < 0.0
        assert result.p_value < 0.01

    @pytest.mark.parametrize(("n", "expected"), [(53, 3), (100, 4), (10, 2)])
    def test_default_bandwidth(self, n: int, expected: int):
        assert default_bandwidth(n) == expected

    def test_zero_bandwidth_is_plain_variance(self):
        d = np.random.default_rng(4).standard_normal(25)
        assert newey_west_variance(d, 0) == pytest.approx(np.var(d))

    def test_explicit_bandwidth_is_reported(self):
        rng = np.random.default_rng(5)
        assert dm_test(_series(rng.standard_normal(20)), _series(rng.standard_normal(20)), bandwidth=1).bandwidth == 1

    def test_failed_steps_are_dropped_pairwise(self):
        rng = np.random.default_rng(6)
        e1 = rng.standard_normal(15)
        e1[3] = np.nan
        assert dm_test(_series(e1), _series(rng.standard_normal(15))).n == 14

    def test_too_short(self):
        with pytest.raises(DataError, match="at least 10"):
            dm_test(_series(np.ones(9)), _series(np.zeros(9)))

    def test_negative_bandwidth(self):
        with pytest.raises(DataError):
            dm_test(_series(np.ones(12)), _series(np.zeros(12)), bandwidth=-1)

    @pytest.mark.slow
    def test_size_under_the_null(self):
        """
        GIVEN 500 pairs of independent N(0, 1) error series of length 53
        WHEN each pair is tested at the 5% level
        THEN the rejection rate lies between 2% and 9%.
        """
        rng = np.random.default_rng(2024)
        rejections = 0
        for _ in range(500):
            result = dm_test(_series(rng.standard_normal(53)), _series(rng.standard_normal(53)))
            rejections += result.p_value < 0.05
        assert 0.02 <= rejections / 500 <= 0.09


class TestRows:
    def _row(self, statistic: float, p_value: float, degenerate: bool = False) -> DmRow:
        return DmRow("US", 1, "chow_lin", "elastic_net", DmResult(statistic=statistic, p_value=p_value, bandwidth=3, degenerate=degenerate, n=40))

    def test_stars_and_direction(self):
        assert self._row(-3.0, 0.003).stars == "***"
        assert self._row(-3.0, 0.003).favors == "chow_lin"
        assert self._row(2.1, 0.04).favors == "elastic_net"
        assert self._row(0.0, 1.0, degenerate=True).favors == "none"
        assert self._row(0.0, 0.001, degenerate=True).stars == ""

    @pytest.mark.parametrize(("p", "stars"), [(0.005, "***"), (0.03, "**"), (0.07, "*"), (0.2, "")])
    def test_significance_levels(self, p: float, stars: str):
        assert significance_stars(p) == stars

    def test_pairwise_covers_every_pair_in_order(self):
        rng = np.random.default_rng(7)
        errors = {name: _series(rng.standard_normal(20)) for name in ("a", "b", "c")}
        rows = pairwise_dm(errors, country="US", lag=2)
        assert [(r.model_1, r.model_2) for r in rows] == [("a", "b"), ("a", "c"), ("b", "c")]
        assert all(r.country == "US" and r.lag == 2 for r in rows)

    def test_best_configurations(self):
        def row(country: str, model: str, lag: int, rmse: float) -> SummaryRow:
            metrics = MetricSet(rmse=rmse, mae=rmse, r2=0.0, correlation=0.0, sign_accuracy=0.5, n=10)
            return SummaryRow(country, model, lag, metrics)

        summary = [
            row("US", "chow_lin", 0, 0.9),
            row("US", "elastic_net", 0, 0.5),
            row("US", "chow_lin", 1, 0.4),
            row("US", "elastic_net", 1, math.nan),
            row("DE", "feedforward", 0, 1.0),
        ]
        overall, by_lag = best_configurations(summary)
        assert [(r.country, r.model, r.lag) for r in overall] == [("DE", "feedforward", 0), ("US", "chow_lin", 1)]
        assert [(r.country, r.lag, r.model) for r in by_lag] == [
            ("DE", 0, "feedforward"),
            ("US", 0, "elastic_net"),
            ("US", 1, "chow_lin"),
        ]
