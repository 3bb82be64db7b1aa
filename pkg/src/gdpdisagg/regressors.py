# ==============================================================================
# gdpdisagg.regressors: One Interface over Four Regression Back Ends
#
# Callers never import a back end directly. They go through this module:
#
#   - `search(x, y, spec)` picks hyperparameters (CV grid, CV path or
#     architecture search) and returns them as a plain dict;
#   - `fit_fixed(x, y, spec, hyperparameters)` refits at frozen choices;
#   - `fit(x, y, spec)` does both;
#   - `predict(fit, x)` replays a FitResult on a monthly or quarterly panel.
#
# To add a back end, implement the three functions of `Backend` and register
# it in `BACKENDS`.
# ==============================================================================

import logging
from typing import Any, Callable, NamedTuple

import numpy as np

from . import boosting, chowlin, elasticnet, feedforward
from .errors import DataError
from .models import FitResult, RegressorKind, RegressorSpec, check_columns
from .series import Frequency, Panel, Series

logger = logging.getLogger(__name__)


class Backend(NamedTuple):
    search: Callable[[Panel, Series, RegressorSpec], dict[str, Any]]
    fit_fixed: Callable[[Panel, Series, RegressorSpec, dict[str, Any]], FitResult]
    predict_array: Callable[[FitResult, np.ndarray, Frequency], np.ndarray]


def _chow_lin_search(x: Panel, y: Series, spec: RegressorSpec) -> dict[str, Any]:
    return {}


def _chow_lin_fit_fixed(
    x: Panel, y: Series, spec: RegressorSpec, hyperparameters: dict[str, Any]
) -> FitResult:
    return chowlin.fit_chow_lin_quarterly(x, y, spec)


BACKENDS: dict[RegressorKind, Backend] = {
    RegressorKind.CHOW_LIN: Backend(_chow_lin_search, _chow_lin_fit_fixed, chowlin.predict_array),
    RegressorKind.ELASTIC_NET: Backend(elasticnet.search, elasticnet.fit_fixed, elasticnet.predict_array),
    RegressorKind.GRADIENT_BOOST: Backend(boosting.search, boosting.fit_fixed, boosting.predict_array),
    RegressorKind.FEEDFORWARD: Backend(feedforward.search, feedforward.fit_fixed, feedforward.predict_array),
}


def search(x: Panel, y: Series, spec: RegressorSpec) -> dict[str, Any]:
    return BACKENDS[spec.kind].search(x, y, spec)


def fit_fixed(
    x: Panel, y: Series, spec: RegressorSpec, hyperparameters: dict[str, Any]
) -> FitResult:
    return BACKENDS[spec.kind].fit_fixed(x, y, spec, hyperparameters)


def fit(x: Panel, y: Series, spec: RegressorSpec) -> FitResult:
    """Hyperparameter search followed by a full-window refit."""
    logger.debug(f"Fitting {spec.kind.value} on {len(y)} rows x {x.n_columns} columns")
    if spec.kind is RegressorKind.FEEDFORWARD:
        # The search already trains the winning network on this window.
        return feedforward.fit_feedforward(x, y, spec=spec)
    return fit_fixed(x, y, spec, search(x, y, spec))


def predict_array(fit: FitResult, x: Panel) -> np.ndarray:
    check_columns(fit, x)
    return BACKENDS[fit.kind].predict_array(fit, x.data, x.frequency)


def predict_rows(fit: FitResult, rows: np.ndarray, frequency: Frequency) -> np.ndarray:
    """Predicts a bare matrix laid out in `fit.columns` order (no index checks)."""
    if rows.ndim != 2 or rows.shape[1] != len(fit.columns):
        raise DataError(
            f"Expected rows with {len(fit.columns)} columns, got shape {rows.shape}."
        )
    return BACKENDS[fit.kind].predict_array(fit, rows, frequency)


def predict(fit: FitResult, x: Panel) -> Series:
    """
    Deterministic point predictions with one value per row of `x`.

    Raises:
        ColumnMismatchError: Columns differ from training, in name or order.
    """
    return Series(x.index, predict_array(fit, x), x.frequency, name="prediction")
