# ==============================================================================
# tests.test_boosting: Tree Growth, Staged Scoring and Grid Search
# ==============================================================================

import numpy as np
import pytest

from gdpdisagg.boosting import BoostParams, boost, fit_fixed, fit_gradient_boost, grid, predict_array, search
from gdpdisagg.errors import DataError
from gdpdisagg.models import FitResult, GradientBoostSettings, RegressorKind, RegressorSpec
from gdpdisagg.series import Frequency, Panel, Series


def _spec(seed: int = 0, **settings) -> RegressorSpec:
    light = {
        "folds": 3,
        "max_depth": (1, 2),
        "learning_rate": (0.3,),
        "n_trees": (5, 20),
        "subsample": (1.0,),
        "reg_lambda": (0.0,),
        "min_child_weight": (1.0,),
    }
    light.update(settings)
    return RegressorSpec(kind=RegressorKind.GRADIENT_BOOST, seed=seed, gradient_boost=GradientBoostSettings(**light))


def _step_data() -> tuple[Panel, Series]:
    grid_x = np.linspace(0.0, 1.0, 20)
    x = Panel(np.arange(20), ("x",), grid_x.reshape(-1, 1), Frequency.QUARTERLY)
    return x, Series(x.index, (grid_x > 0.5).astype(float), Frequency.QUARTERLY)


def _hyper(**overrides) -> dict[str, float]:
    params = {"max_depth": 1, "learning_rate": 1.0, "n_trees": 1, "subsample": 1.0, "reg_lambda": 0.0, "min_child_weight": 1.0}
    params.update(overrides)
    return params


class TestBoost:
    def test_single_stump_recovers_step(self):
        """
        GIVEN a target that jumps from 0 to 1 at x = 0.5
        WHEN one depth-1 tree is grown at learning rate 1 without shrinkage
        THEN the ensemble reproduces the step exactly.
        """
        x, y = _step_data()
        fit = fit_fixed(x, y, _spec(), _hyper())
        np.testing.assert_allclose(predict_array(fit, x.data, Frequency.QUARTERLY), y.values, atol=1e-12)
        assert fit.state["feature"][0] == 0
        assert 0.45 < fit.state["threshold"][0] < 0.55

    def test_constant_target_stops_early(self):
        x, _ = _step_data()
        y = Series(x.index, np.full(20, 3.0), Frequency.QUARTERLY)
        fit = fit_fixed(x, y, _spec(), _hyper(n_trees=10))
        assert fit.state["roots"] == []
        np.testing.assert_array_equal(predict_array(fit, x.data, Frequency.QUARTERLY), np.full(20, 3.0))

    def test_heavy_min_child_weight_blocks_splits(self):
        x, y = _step_data()
        fit = fit_fixed(x, y, _spec(), _hyper(min_child_weight=15.0, n_trees=3))
        assert all(f == -1 for f in fit.state["feature"])
        np.testing.assert_allclose(predict_array(fit, x.data, Frequency.QUARTERLY), np.full(20, y.values.mean()))

    def test_more_trees_fit_better(self, linear_design):
        x, y, _ = linear_design
        errors = []
        for n_trees in (5, 50):
            fit = fit_fixed(x, y, _spec(), _hyper(max_depth=2, learning_rate=0.1, n_trees=n_trees))
            pred = predict_array(fit, x.data, Frequency.QUARTERLY)
            errors.append(float(np.mean((pred - y.values) ** 2)))
        assert errors[1] < errors[0]

    @pytest.mark.parametrize("subsample", [1.0, 0.7])
    def test_staged_predictions_match_standalone_fits(self, linear_design, subsample: float):
        x, y, _ = linear_design
        train, held = x.data[:40], x.data[40:]
        params = BoostParams(2, 0.1, 12, subsample, 1.0, 1.0)
        _, staged = boost(train, y.values[:40], params, seed=4, checkpoints=(4, 12), x_eval=held)
        for size in (4, 12):
            ensemble, _ = boost(train, y.values[:40], BoostParams(2, 0.1, size, subsample, 1.0, 1.0), seed=4)
            fit = FitResult(
                kind=RegressorKind.GRADIENT_BOOST,
                columns=x.columns,
                hyperparameters={},
                state=ensemble.to_state(),
                seed=4,
                fingerprint="",
                design_frequency=Frequency.QUARTERLY,
            )
            np.testing.assert_allclose(staged[size], predict_array(fit, held, Frequency.QUARTERLY), atol=1e-12)

    def test_fit_survives_json(self, linear_design):
        x, y, _ = linear_design
        fit = fit_fixed(x, y, _spec(seed=2), _hyper(max_depth=3, learning_rate=0.2, n_trees=8, subsample=0.8))
        again = FitResult.from_json(fit.to_json())
        np.testing.assert_array_equal(
            predict_array(again, x.data, Frequency.QUARTERLY), predict_array(fit, x.data, Frequency.QUARTERLY)
        )


class TestSearch:
    def test_grid_is_the_cartesian_product(self):
        assert len(grid(GradientBoostSettings())) == 432
        assert len(grid(_spec().gradient_boost)) == 4

    def test_ties_prefer_fewer_and_shallower_trees(self):
        x, _ = _step_data()
        y = Series(x.index, np.full(20, 1.5), Frequency.QUARTERLY)
        chosen = search(x, y, _spec())
        assert chosen["n_trees"] == 5
        assert chosen["max_depth"] == 1
        assert chosen["cv_mse"] == 0.0

    def test_selection_is_deterministic(self, linear_design):
        x, y, _ = linear_design
        first = fit_gradient_boost(x, y, spec=_spec(seed=3, subsample=(0.8,)))
        second = fit_gradient_boost(x, y, spec=_spec(seed=3, subsample=(0.8,)))
        assert first.hyperparameters == second.hyperparameters
        assert first.state == second.state

    def test_too_few_rows_for_folds(self, panel_factory):
        x = panel_factory(2, 1)
        with pytest.raises(DataError, match="3-fold CV"):
            search(x, Series(x.index, [1.0, 2.0], Frequency.QUARTERLY), _spec())

    def test_index_mismatch(self, panel_factory):
        x = panel_factory(6, 1)
        with pytest.raises(DataError, match="same index"):
            search(x, Series.from_start(50, np.arange(6.0), Frequency.QUARTERLY), _spec())
