# ==============================================================================
# gdpdisagg.evaluate: Out-of-Sample Evaluation
#
# The expanding-window harness refits a regressor on quarters 1..t and
# predicts quarter t+1, for every t from the initial window to N−1.
# Hyperparameters are searched once, on the first window, and then frozen.
# Everything a step learns (level-column scaling, the network's validation
# slice, the fit itself) sees only its own training rows.
#
# Forecast accuracy is summarized by RMSE, MAE, out-of-sample R², Pearson
# correlation and sign accuracy. Pairs of models are compared with the
# Diebold-Mariano test under squared-error loss and a Newey-West (Bartlett)
# long-run variance.
# ==============================================================================

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.stats import norm

from . import regressors
from .errors import DataError, DisaggError, ExpandingWindowError, InsufficientHistoryError
from .models import RegressorSpec
from .preprocess import TransformSpec, fit_apply_standardizer
from .series import Frequency, Panel, Series, initial_window_size

logger = logging.getLogger(__name__)

MIN_QUARTERS = 8
MIN_DM_LENGTH = 10


class WindowProtocol(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    initial_ratio: float = Field(default=0.5, gt=0.0, lt=1.0)
    # Overrides the ratio with an absolute number of training rows.
    initial_window: Optional[int] = Field(default=None, ge=1)
    max_failed_fraction: float = Field(default=0.2, ge=0.0, le=1.0)
    workers: int = Field(default=1, ge=1)

    def first_step(self, n_rows: int) -> int:
        if self.initial_window is not None:
            return self.initial_window
        return initial_window_size(n_rows, self.initial_ratio)


@dataclass(frozen=True)
class StepRecord:
    quarter: int
    train_rows: int
    prediction: float
    actual: float
    failed: bool = False
    error: str = ""
    fingerprint: str = ""
    searched: bool = False


@dataclass(frozen=True, eq=False)
class ExpandingWindowResult:
    predictions: Series
    actuals: Series
    steps: list[StepRecord]
    hyperparameters: dict[str, Any] = field(default_factory=dict)

    @property
    def failed_steps(self) -> int:
        return sum(1 for s in self.steps if s.failed)


def _run_step(
    spec: RegressorSpec,
    x: Panel,
    y: Series,
    t: int,
    hyperparameters: Optional[dict[str, Any]],
    transform: Optional[TransformSpec],
) -> tuple[StepRecord, dict[str, Any]]:
    """
    Fits on rows [0, t) and predicts row t.

    Level columns are rescaled with moments of rows [0, t) only. With no
    `hyperparameters` the back end searches first.

    Returns:
        The step record, and the hyperparameters used (empty when the step failed).
    """
    train_x, test_x = x.slice(0, t), x.slice(t, t + 1)
    train_y = y.slice(0, t)
    quarter, actual = int(y.index[t]), float(y.values[t])
    step_spec = spec.model_copy(update={"seed": spec.seed + t})
    searched = hyperparameters is None
    try:
        if transform is not None:
            train_x, test_x, _ = fit_apply_standardizer(train_x, test_x, transform)
        if hyperparameters is None:
            hyperparameters = regressors.search(train_x, train_y, step_spec)
        fit = regressors.fit_fixed(train_x, train_y, step_spec, hyperparameters)
        prediction = float(regressors.predict_array(fit, test_x)[0])
    except (DisaggError, np.linalg.LinAlgError, FloatingPointError, RuntimeError, ValueError) as e:
        # torch raises RuntimeError, numpy and scipy raise ValueError on bad numerics.
        logger.warning(f"Step predicting quarter ordinal {quarter} failed: {e}")
        return StepRecord(quarter, t, math.nan, actual, failed=True, error=str(e), searched=searched), {}
    return (
        StepRecord(quarter, t, prediction, actual, fingerprint=fit.fingerprint, searched=searched),
        hyperparameters,
    )


def run_expanding_window(
    spec: RegressorSpec,
    x: Panel,
    y: Series,
    protocol: Optional[WindowProtocol] = None,
    transform: Optional[TransformSpec] = None,
) -> ExpandingWindowResult:
    """
    One-step-ahead expanding-window evaluation.

    The step predicting row t uses seed `spec.seed + t`, so its result does
    not depend on how many rows follow it. A failed step yields a missing
    prediction; if hyperparameter search fails it is retried at the next step.

    Raises:
        InsufficientHistoryError: Fewer than 8 quarters.
        ExpandingWindowError: More than `max_failed_fraction` of steps failed.
    """
    protocol = protocol or WindowProtocol()
    if len(x) != len(y) or not np.array_equal(x.index, y.index):
        raise DataError("Design and target must share the same quarterly index.")
    n = len(y)
    if n < MIN_QUARTERS:
        raise InsufficientHistoryError(f"insufficient history: {n} quarters < {MIN_QUARTERS}.")
    t0 = protocol.first_step(n)
    if not 0 < t0 < n:
        raise DataError(f"Initial window of {t0} rows leaves no test quarter in {n} rows.")

    steps: dict[int, StepRecord] = {}
    hyperparameters: Optional[dict[str, Any]] = None

    # --- Search on the first window; a failed search moves to the next step ---
    t = t0
    while t < n and hyperparameters is None:
        record, chosen = _run_step(spec, x, y, t, None, transform)
        steps[t] = record
        if not record.failed:
            hyperparameters = chosen
            logger.info(f"{spec.kind.value}: hyperparameters frozen at {t} training rows: {chosen}")
        t += 1

    # --- Frozen hyperparameters for the remaining, mutually independent steps ---
    remaining = list(range(t, n))
    if hyperparameters is not None and remaining:
        frozen = hyperparameters

        def job(step: int) -> StepRecord:
            return _run_step(spec, x, y, step, frozen, transform)[0]

        if protocol.workers > 1:
            with ThreadPoolExecutor(max_workers=protocol.workers) as pool:
                records = list(pool.map(job, remaining))
        else:
            records = [job(step) for step in remaining]
        steps.update(zip(remaining, records))

    ordered = [steps[k] for k in sorted(steps)]
    failed = sum(1 for s in ordered if s.failed)
    if failed > protocol.max_failed_fraction * len(ordered):
        raise ExpandingWindowError(
            f"{failed} of {len(ordered)} expanding-window steps failed for {spec.kind.value}."
        )
    index = y.index[t0:]
    return ExpandingWindowResult(
        predictions=Series(index, [s.prediction for s in ordered], Frequency.QUARTERLY, "prediction"),
        actuals=y.slice(t0),
        steps=ordered,
        hyperparameters=hyperparameters or {},
    )


# ==============================================================================
# Accuracy Metrics
# ==============================================================================


class MetricSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    rmse: float
    mae: float
    r2: float
    correlation: float
    sign_accuracy: float
    n: int


def _paired(a: Series, b: Series) -> tuple[np.ndarray, np.ndarray]:
    if len(a) != len(b) or not np.array_equal(a.index, b.index):
        raise DataError("Series must share the same index to be compared.")
    keep = np.isfinite(a.values) & np.isfinite(b.values)
    return a.values[keep], b.values[keep]


def compute_metrics(predictions: Series, actuals: Series) -> MetricSet:
    """
    Accuracy of predictions against actuals, skipping pairs with a missing side.

    R² uses the test-sample mean of the actuals as baseline and is NaN when
    the actuals are constant; zero counts as a positive sign.

    Raises:
        DataError: The series are misaligned or fewer than 2 pairs remain.
    """
    pred, act = _paired(predictions, actuals)
    if pred.size < 2:
        raise DataError(f"Metrics need at least 2 prediction pairs, got {pred.size}.")
    err = act - pred
    sse = float(err @ err)
    sst = float(np.sum((act - act.mean()) ** 2))
    if np.ptp(pred) == 0.0 or np.ptp(act) == 0.0:
        corr = 1.0 if np.array_equal(pred, act) else math.nan
    else:
        corr = float(np.corrcoef(pred, act)[0, 1])
    return MetricSet(
        rmse=math.sqrt(sse / pred.size),
        mae=float(np.mean(np.abs(err))),
        r2=1.0 - sse / sst if sst > 0.0 else math.nan,
        correlation=corr,
        sign_accuracy=float(np.mean((pred >= 0.0) == (act >= 0.0))),
        n=int(pred.size),
    )


# ==============================================================================
# Diebold-Mariano
# ==============================================================================


class DmResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    statistic: float
    p_value: float
    bandwidth: int
    degenerate: bool
    n: int


def default_bandwidth(n: int) -> int:
    """Newey-West rule of thumb floor(4(n/100)^(2/9))."""
    return int(math.floor(4.0 * (n / 100.0) ** (2.0 / 9.0)))


def newey_west_variance(d: np.ndarray, bandwidth: int) -> float:
    """Bartlett-weighted long-run variance of a series around its mean."""
    n = d.size
    c = d - d.mean()
    s = float(c @ c) / n
    for k in range(1, min(bandwidth, n - 1) + 1):
        s += 2.0 * (1.0 - k / (bandwidth + 1.0)) * float(c[k:] @ c[:-k]) / n
    return s


def dm_test(errors_1: Series, errors_2: Series, bandwidth: Optional[int] = None) -> DmResult:
    """
    DM statistic on d_t = e₁² − e₂²; negative values favor model 1.

    A zero long-run variance yields the degenerate result (0, p = 1).

    Args:
        errors_1: Forecast errors of the first model.
        errors_2: Forecast errors of the second model, on the same index.
        bandwidth: Bartlett lag; defaults to `default_bandwidth` of the pair count.

    Returns:
        The statistic, its two-sided normal p-value and the bandwidth used.

    Raises:
        DataError: Misaligned inputs, fewer than 10 pairs or a negative bandwidth.
    """
    e1, e2 = _paired(errors_1, errors_2)
    n = e1.size
    if n < MIN_DM_LENGTH:
        raise DataError(f"Diebold-Mariano test needs at least {MIN_DM_LENGTH} pairs, got {n}.")
    if bandwidth is not None and bandwidth < 0:
        raise DataError(f"HAC bandwidth must be non-negative, got {bandwidth}.")
    lag = default_bandwidth(n) if bandwidth is None else bandwidth
    d = e1 * e1 - e2 * e2
    variance = newey_west_variance(d, lag)
    if np.ptp(d) == 0.0 or not variance > 0.0:
        return DmResult(statistic=0.0, p_value=1.0, bandwidth=lag, degenerate=True, n=n)
    stat = float(d.mean() / math.sqrt(variance / n))
    return DmResult(
        statistic=stat,
        p_value=float(2.0 * norm.sf(abs(stat))),
        bandwidth=lag,
        degenerate=False,
        n=n,
    )


def significance_stars(p_value: float) -> str:
    if p_value < 0.01:
        return "***"
    if p_value < 0.05:
        return "**"
    if p_value < 0.10:
        return "*"
    return ""


@dataclass(frozen=True)
class DmRow:
    country: str
    lag: int
    model_1: str
    model_2: str
    result: DmResult

    @property
    def stars(self) -> str:
        return "" if self.result.degenerate else significance_stars(self.result.p_value)

    @property
    def favors(self) -> str:
        if self.result.degenerate or self.result.statistic == 0.0:
            return "none"
        return self.model_1 if self.result.statistic < 0.0 else self.model_2


def pairwise_dm(
    errors: dict[str, Series],
    country: str = "",
    lag: int = 0,
    bandwidth: Optional[int] = None,
) -> list[DmRow]:
    """All model pairs of one (country, lag) cell, in insertion order."""
    rows = []
    for first, second in itertools.combinations(errors, 2):
        result = dm_test(errors[first], errors[second], bandwidth)
        rows.append(DmRow(country, lag, first, second, result))
    return rows


# ==============================================================================
# Summaries
# ==============================================================================


@dataclass(frozen=True)
class SummaryRow:
    country: str
    model: str
    lag: int
    metrics: MetricSet


def best_configurations(
    summary: Sequence[SummaryRow],
) -> tuple[list[SummaryRow], list[SummaryRow]]:
    """
    Lowest-RMSE row per country, and per (country, lag).

    Rows with a non-finite RMSE are skipped; ties go to the model name.
    """

    def pick(rows: list[SummaryRow]) -> SummaryRow:
        return min(rows, key=lambda r: (r.metrics.rmse, r.model))

    by_country: dict[str, list[SummaryRow]] = {}
    by_cell: dict[tuple[str, int], list[SummaryRow]] = {}
    for row in summary:
        if not math.isfinite(row.metrics.rmse):
            continue
        by_country.setdefault(row.country, []).append(row)
        by_cell.setdefault((row.country, row.lag), []).append(row)
    return (
        [pick(by_country[k]) for k in sorted(by_country)],
        [pick(by_cell[k]) for k in sorted(by_cell)],
    )
