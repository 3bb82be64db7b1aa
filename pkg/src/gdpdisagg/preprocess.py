# ==============================================================================
# gdpdisagg.preprocess: Stationarity, Transformation and Aggregation
#
# This module turns raw monthly indicators into the quarterly design used by
# the regression step:
#
#   1. `adf_test` / `adf_report` screen each indicator for a unit root. The
#      result is advisory only: the final transform of every column comes
#      from the `TransformSpec` in the run configuration.
#   2. `transform_panel` applies log-differences, first differences or keeps
#      levels, column by column.
#   3. `aggregate_quarterly` sums differenced columns and averages level
#      columns over the three months of each complete quarter.
#   4. `fit_apply_standardizer` z-scores level columns with moments taken
#      from the training rows only.
# ==============================================================================

import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict
from statsmodels.tsa.stattools import adfuller

from .errors import (
    ConstantColumnError,
    DataError,
    DegenerateSeriesError,
    NonPositiveValueError,
)
from .series import Frequency, Panel, Series, period_label

logger = logging.getLogger(__name__)

_LAG_SUFFIX = re.compile(r"^(?P<base>.+)_lag(?P<lag>\d+)$")


class TransformKind(str, Enum):
    LOG_DIFF = "log_diff"
    DIFF = "diff"
    LEVEL = "level"

    @property
    def is_differenced(self) -> bool:
        return self is not TransformKind.LEVEL


class UnitRootDecision(str, Enum):
    UNIT_ROOT = "unit_root"
    STATIONARY = "stationary"


class TransformSpec(BaseModel):
    """Per-column transformation class, keyed by indicator name."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kinds: dict[str, TransformKind]

    def kind_of(self, column: str) -> TransformKind:
        """Kind of a column; lagged columns (`<col>_lag<j>`) inherit from `<col>`."""
        if column in self.kinds:
            return self.kinds[column]
        match = _LAG_SUFFIX.match(column)
        if match and match.group("base") in self.kinds:
            return self.kinds[match.group("base")]
        raise DataError(f"No transform kind declared for column '{column}'.")

    def check_covers(self, columns: tuple[str, ...]) -> None:
        missing = []
        for column in columns:
            try:
                self.kind_of(column)
            except DataError:
                missing.append(column)
        if missing:
            raise DataError(f"Transform specification is missing columns: {missing}.")

    def level_columns(self, columns: tuple[str, ...]) -> tuple[str, ...]:
        return tuple(c for c in columns if self.kind_of(c) is TransformKind.LEVEL)


@dataclass(frozen=True)
class AdfResult:
    statistic: float
    lag_order: int
    critical_value: float
    p_value: float
    decision: UnitRootDecision


# ==============================================================================
# Unit-Root Screening
# ==============================================================================


def adf_test(series: Series, max_lag: int) -> AdfResult:
    """
    Augmented Dickey-Fuller test with a constant, no trend, and a fixed lag.

    The regression is Δx_t on x_{t-1}, `max_lag` lagged differences and a
    constant; the statistic is the t-ratio on x_{t-1}, compared against the
    MacKinnon 5% critical value.

    Raises:
        DataError: If the series is too short or contains missing values.
        DegenerateSeriesError: If the series is constant.
    """
    values = series.values
    if max_lag < 0:
        raise DataError(f"max_lag must be non-negative, got {max_lag}.")
    if len(values) <= max_lag + 10:
        raise DataError(
            f"ADF test on '{series.name}' needs more than {max_lag + 10} "
            f"observations, got {len(values)}."
        )
    if not np.all(np.isfinite(values)):
        raise DataError(f"ADF test on '{series.name}' received missing values.")
    if np.ptp(values) == 0.0:
        raise DegenerateSeriesError(f"degenerate series: '{series.name}' is constant.")

    statistic, p_value, used_lag, _nobs, critical = adfuller(
        values, maxlag=max_lag, regression="c", autolag=None
    )
    critical_5 = float(critical["5%"])
    decision = (
        UnitRootDecision.STATIONARY
        if statistic < critical_5
        else UnitRootDecision.UNIT_ROOT
    )
    return AdfResult(
        statistic=float(statistic),
        lag_order=int(used_lag),
        critical_value=critical_5,
        p_value=float(p_value),
        decision=decision,
    )


@dataclass(frozen=True)
class AdfReportRow:
    column: str
    result: Optional[AdfResult]
    note: str = ""


def adf_report(panel: Panel, max_lag: int) -> list[AdfReportRow]:
    """Runs `adf_test` on every column; failures are reported, not raised."""
    rows: list[AdfReportRow] = []
    for column in panel.columns:
        try:
            rows.append(AdfReportRow(column, adf_test(panel.column(column), max_lag)))
        except DataError as e:
            logger.warning(f"ADF screen skipped '{column}': {e}")
            rows.append(AdfReportRow(column, None, note=str(e)))
    return rows


# ==============================================================================
# Transformation and Aggregation
# ==============================================================================


def transform_panel(panel: Panel, spec: TransformSpec) -> Panel:
    """
    Applies each column's transform.

    LogDiff → log(x_m) − log(x_{m−1}); Diff → x_m − x_{m−1}; Level → unchanged.
    When any column is differenced, the first row is dropped panel-wide so no
    missing values are carried downstream.

    Raises:
        NonPositiveValueError: A LogDiff column holds a value ≤ 0 (the message
                               names the column and the period).
    """
    spec.check_covers(panel.columns)
    if not np.all(np.isfinite(panel.data)):
        raise DataError("Missing values must be resolved before transformation.")

    kinds = [spec.kind_of(c) for c in panel.columns]
    out = np.empty_like(panel.data)
    for j, (column, kind) in enumerate(zip(panel.columns, kinds)):
        x = panel.data[:, j]
        if kind is TransformKind.LOG_DIFF:
            bad = np.flatnonzero(x <= 0.0)
            if bad.size:
                when = period_label(int(panel.index[bad[0]]), panel.frequency)
                raise NonPositiveValueError(
                    f"Column '{column}' has non-positive value {x[bad[0]]!r} at "
                    f"{when}; log-differencing is undefined."
                )
            logged = np.log(x)
            out[1:, j] = logged[1:] - logged[:-1]
            out[0, j] = np.nan
        elif kind is TransformKind.DIFF:
            out[1:, j] = x[1:] - x[:-1]
            out[0, j] = np.nan
        else:
            out[:, j] = x

    if any(k.is_differenced for k in kinds):
        return Panel(panel.index[1:], panel.columns, out[1:], panel.frequency)
    return Panel(panel.index, panel.columns, out, panel.frequency)


def complete_quarter_bounds(index: np.ndarray) -> tuple[int, int]:
    """Positions [start, stop) covering only complete calendar quarters."""
    n = index.shape[0]
    start = int((-index[0]) % 3) if n else 0
    stop = n - int((index[-1] + 1) % 3) if n else 0
    if stop - start < 3:
        return 0, 0
    return start, stop


def aggregate_quarterly(panel: Panel, spec: TransformSpec) -> Panel:
    """
    Aggregates a monthly panel to quarters.

    Differenced columns (LogDiff, Diff) are summed over the three months of a
    quarter (cumulative change); Level columns are averaged. Incomplete
    quarters at either end are dropped with a warning.
    """
    if panel.frequency is not Frequency.MONTHLY:
        raise DataError("aggregate_quarterly expects a monthly panel.")
    spec.check_covers(panel.columns)
    start, stop = complete_quarter_bounds(panel.index)
    if stop == 0:
        raise DataError("Monthly panel does not contain a complete quarter.")
    if start > 0:
        logger.warning(f"Dropping {start} month(s) of an incomplete leading quarter.")
    if stop < len(panel):
        logger.warning(
            f"Dropping {len(panel) - stop} month(s) of an incomplete trailing quarter."
        )

    block = panel.data[start:stop].reshape(-1, 3, panel.n_columns)
    sums = block.sum(axis=1)
    means = block.mean(axis=1)
    differenced = np.array([spec.kind_of(c).is_differenced for c in panel.columns])
    data = np.where(differenced, sums, means)
    first_quarter = int(panel.index[start]) // 3
    index = np.arange(first_quarter, first_quarter + data.shape[0])
    return Panel(index, panel.columns, data, Frequency.QUARTERLY)


# ==============================================================================
# Leakage-Safe Standardization
# ==============================================================================


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Training-window moments for the level columns of a design."""

    columns: tuple[str, ...]
    mean: np.ndarray
    scale: np.ndarray

    def apply(self, panel: Panel) -> Panel:
        if not self.columns:
            return panel
        data = panel.data.copy()
        for j, column in enumerate(self.columns):
            if column not in panel.columns:
                raise DataError(f"Standardizer column '{column}' missing from panel.")
            k = panel.columns.index(column)
            data[:, k] = (data[:, k] - self.mean[j]) / self.scale[j]
        return panel.with_data(data)


def fit_standardizer(train: Panel, spec: TransformSpec) -> Standardizer:
    """
    Computes mean and sample (n−1) standard deviation of every Level column.

    Raises:
        ConstantColumnError: A level column has zero dispersion, or fewer
                             than two training rows.
    """
    if len(train) == 0:
        raise DataError("Cannot fit a standardizer on an empty training window.")
    columns = spec.level_columns(train.columns)
    if not columns:
        return Standardizer((), np.empty(0), np.empty(0))
    positions = [train.columns.index(c) for c in columns]
    block = train.data[:, positions]
    if block.shape[0] < 2:
        raise ConstantColumnError(
            "constant level column: two training rows are needed for a "
            "sample standard deviation."
        )
    mean = block.mean(axis=0)
    scale = block.std(axis=0, ddof=1)
    flat = [c for c, s in zip(columns, scale) if not s > 0.0]
    if flat:
        raise ConstantColumnError(f"constant level column(s) in training window: {flat}.")
    return Standardizer(columns, mean, scale)


def fit_apply_standardizer(
    train: Panel, test: Panel, spec: TransformSpec
) -> tuple[Panel, Panel, Standardizer]:
    """Fits on `train` only and applies the same moments to both sides."""
    standardizer = fit_standardizer(train, spec)
    return standardizer.apply(train), standardizer.apply(test), standardizer
