# ==============================================================================
# gdpdisagg.elasticnet: Elastic Net by Cyclic Coordinate Descent
#
# Minimizes, over an unpenalized intercept β₀ and slopes β,
#
#     1/(2n) ‖y − β₀ − Xβ‖² + α [ r ‖β‖₁ + (1 − r)/2 ‖β‖² ]
#
# on a design whose columns are centred and scaled to unit (population)
# variance. This is the penalized least-squares objective written with a
# separate ℓ1 weight λ1 and ℓ2 weight λ2 under λ1 = 2nαr and λ2 = nα(1 − r),
# so a mixing ratio r ∈ (0, 1] and an overall strength α index the same
# family. Coefficients are reported on the original column scale.
#
# Model selection is K-fold cross-validation over every (r, α) pair, with
# contiguous folds. A nonparametric row bootstrap at the selected (α, r)
# quantifies coefficient uncertainty and supplies the bootstrap-mean
# coefficients used for the final disaggregation.
# ==============================================================================

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConvergenceError, DataError, DegenerateSeriesError, EstimationError
from .models import (
    FitResult,
    RegressorKind,
    RegressorSpec,
    contiguous_folds,
    fingerprint,
)
from .series import Frequency, Panel, Series

logger = logging.getLogger(__name__)

Sampler = Callable[[np.random.Generator, int], np.ndarray]


def soft_threshold(z: float, gamma: float) -> float:
    return float(np.sign(z) * max(abs(z) - gamma, 0.0))


@dataclass(frozen=True, eq=False)
class StandardizedDesign:
    """Centred target and centred, unit-variance design with their moments."""

    x: np.ndarray
    y: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float

    @property
    def n_rows(self) -> int:
        return int(self.x.shape[0])

    def original_scale(self, beta: np.ndarray) -> tuple[float, np.ndarray]:
        safe = np.where(self.x_scale > 0.0, self.x_scale, 1.0)
        coef = np.where(self.x_scale > 0.0, beta / safe, 0.0)
        return float(self.y_mean - self.x_mean @ coef), coef


def standardize(x: np.ndarray, y: np.ndarray) -> StandardizedDesign:
    """Zero-variance columns are kept at zero and never enter the model."""
    x_mean = x.mean(axis=0)
    x_scale = x.std(axis=0)
    safe = np.where(x_scale > 0.0, x_scale, 1.0)
    xs = np.where(x_scale > 0.0, (x - x_mean) / safe, 0.0)
    y_mean = float(y.mean())
    return StandardizedDesign(xs, y - y_mean, x_mean, x_scale, y_mean)


def objective(
    x: np.ndarray, y: np.ndarray, beta: np.ndarray, alpha: float, l1_ratio: float
) -> float:
    resid = y - x @ beta
    penalty = l1_ratio * np.abs(beta).sum() + 0.5 * (1.0 - l1_ratio) * (beta @ beta)
    return float(resid @ resid / (2.0 * x.shape[0]) + alpha * penalty)


def coordinate_descent(
    x: np.ndarray,
    y: np.ndarray,
    alpha: float,
    l1_ratio: float,
    *,
    beta0: Optional[np.ndarray] = None,
    tol: float = 1e-10,
    max_sweeps: int = 10_000,
    trace: Optional[list[float]] = None,
) -> tuple[np.ndarray, int]:
    """
    Cyclic coordinate descent on a centred problem.

    Each coordinate update is exact:
    β_j ← S(x_j'r/n + c_j β_j, αr) / (c_j + α(1 − r)), with c_j = ‖x_j‖²/n.
    Stops when the largest coordinate move in a sweep falls below
    `tol · max(1, ‖β‖∞)`. When `trace` is given, the objective after every
    sweep is appended to it.

    Raises:
        ConvergenceError: After `max_sweeps` sweeps; the message carries the
                          last coordinate move as a duality-gap surrogate.
    """
    n, p = x.shape
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    col_sq = (x * x).sum(axis=0) / n
    resid = y - x @ beta
    l1 = alpha * l1_ratio
    l2 = alpha * (1.0 - l1_ratio)
    max_move = np.inf
    for sweep in range(1, max_sweeps + 1):
        max_move = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            old = beta[j]
            z = float(x[:, j] @ resid) / n + col_sq[j] * old
            new = soft_threshold(z, l1) / (col_sq[j] + l2)
            if new != old:
                resid -= x[:, j] * (new - old)
                beta[j] = new
                max_move = max(max_move, abs(new - old))
        if trace is not None:
            trace.append(objective(x, y, beta, alpha, l1_ratio))
        if max_move <= tol * max(1.0, float(np.max(np.abs(beta), initial=0.0))):
            return beta, sweep
    raise ConvergenceError(
        f"Coordinate descent did not converge in {max_sweeps} sweeps "
        f"(α={alpha:.3e}, r={l1_ratio}); last coordinate move {max_move:.3e}."
    )


def alpha_max(design: StandardizedDesign, l1_ratio: float) -> float:
    """Smallest α at which every slope is exactly zero."""
    value = float(np.max(np.abs(design.x.T @ design.y), initial=0.0)) / (
        design.n_rows * l1_ratio
    )
    return value if value > 0.0 else np.finfo(float).eps


def alpha_path(design: StandardizedDesign, l1_ratio: float, n_alphas: int, min_ratio: float) -> np.ndarray:
    """Log-spaced, decreasing from α_max to `min_ratio · α_max`."""
    top = alpha_max(design, l1_ratio)
    return top * np.logspace(0.0, np.log10(min_ratio), n_alphas)


def _check_inputs(x: Panel, y: Series) -> None:
    if len(x) != len(y) or not np.array_equal(x.index, y.index):
        raise DataError("Design and target must share the same index.")
    if not np.all(np.isfinite(x.data)) or not np.all(np.isfinite(y.values)):
        raise DataError("Elastic Net inputs contain missing values.")
    if len(y) < 2 or np.var(y.values) == 0.0:
        raise DegenerateSeriesError("degenerate series: the target has zero variance.")


# ==============================================================================
# Cross-Validated Search
# ==============================================================================


def search(x: Panel, y: Series, spec: RegressorSpec) -> dict[str, float]:
    """
    Grid search over (r, α) by K-fold CV mean squared error.

    The α path of each r is computed once on the full window so every fold
    scores the same grid. Ties go to the lower MSE, then the larger α, then
    the earlier grid position.
    """
    settings = spec.elastic_net
    _check_inputs(x, y)
    full = standardize(x.data, y.values)
    folds = contiguous_folds(len(y), settings.folds)

    best: Optional[tuple[float, float, int]] = None
    chosen: dict[str, float] = {}
    order = 0
    for l1_ratio in settings.l1_ratios:
        alphas = alpha_path(full, l1_ratio, settings.n_alphas, settings.alpha_min_ratio)
        errors = np.zeros((len(folds), alphas.size))
        for f, held_out in enumerate(folds):
            keep = np.setdiff1d(np.arange(len(y)), held_out)
            train = standardize(x.data[keep], y.values[keep])
            beta = np.zeros(x.n_columns)
            for a, alpha in enumerate(alphas):
                beta, _ = coordinate_descent(
                    train.x,
                    train.y,
                    float(alpha),
                    l1_ratio,
                    beta0=beta,
                    tol=settings.tol,
                    max_sweeps=settings.max_sweeps,
                )
                intercept, coef = train.original_scale(beta)
                pred = intercept + x.data[held_out] @ coef
                errors[f, a] = float(np.mean((y.values[held_out] - pred) ** 2))
        cv_mse = errors.mean(axis=0)
        for a, alpha in enumerate(alphas):
            key = (float(cv_mse[a]), -float(alpha), order)
            order += 1
            if best is None or key < best:
                best = key
                chosen = {"alpha": float(alpha), "l1_ratio": float(l1_ratio), "cv_mse": float(cv_mse[a])}
    logger.info(
        f"Elastic Net CV selected α={chosen['alpha']:.4e}, r={chosen['l1_ratio']} "
        f"(MSE {chosen['cv_mse']:.4e})"
    )
    return chosen


def fit_fixed(
    x: Panel, y: Series, spec: RegressorSpec, hyperparameters: dict[str, float]
) -> FitResult:
    """Refits the full window at a given (α, r)."""
    settings = spec.elastic_net
    _check_inputs(x, y)
    alpha = float(hyperparameters["alpha"])
    l1_ratio = float(hyperparameters["l1_ratio"])
    design = standardize(x.data, y.values)
    beta, sweeps = coordinate_descent(
        design.x,
        design.y,
        alpha,
        l1_ratio,
        tol=settings.tol,
        max_sweeps=settings.max_sweeps,
    )
    intercept, coef = design.original_scale(beta)
    return FitResult(
        kind=RegressorKind.ELASTIC_NET,
        columns=x.columns,
        hyperparameters=dict(hyperparameters),
        state={
            "intercept": intercept,
            "coef": [float(c) for c in coef],
            "objective": objective(design.x, design.y, beta, alpha, l1_ratio),
            "sweeps": sweeps,
        },
        seed=spec.seed,
        fingerprint=fingerprint(x, y),
        design_frequency=x.frequency,
    )


def fit_elastic_net(
    x: Panel, y: Series, folds: Optional[int] = None, spec: Optional[RegressorSpec] = None
) -> FitResult:
    spec = spec or RegressorSpec(kind=RegressorKind.ELASTIC_NET)
    if folds is not None:
        spec = spec.model_copy(
            update={"elastic_net": spec.elastic_net.model_copy(update={"folds": folds})}
        )
    return fit_fixed(x, y, spec, search(x, y, spec))


def predict_array(fit: FitResult, data: np.ndarray, frequency: Frequency) -> np.ndarray:
    return float(fit.state["intercept"]) + data @ fit.array("coef")


# ==============================================================================
# Bootstrap
# ==============================================================================


@dataclass(frozen=True, eq=False)
class BootstrapSummary:
    """Per-coefficient bootstrap distribution at fixed hyperparameters."""

    columns: tuple[str, ...]
    mean_coef: np.ndarray
    mean_intercept: float
    lower: np.ndarray
    upper: np.ndarray
    replications: int
    skipped: int
    fit: FitResult


def _resample_rows(rng: np.random.Generator, n_rows: int) -> np.ndarray:
    return rng.integers(0, n_rows, size=n_rows)


def bootstrap_elastic_net(
    x: Panel,
    y: Series,
    replications: int,
    seed: int,
    fit: FitResult,
    sampler: Sampler = _resample_rows,
    spec: Optional[RegressorSpec] = None,
) -> BootstrapSummary:
    """
    Row-resampling bootstrap at the hyperparameters already chosen by `fit`.

    Resamples with a constant target are skipped and counted. The returned
    `fit` carries the bootstrap-mean intercept and slopes.

    Raises:
        EstimationError: If every replicate was skipped.
    """
    if replications < 1:
        raise DataError(f"Bootstrap needs at least one replication, got {replications}.")
    if fit.kind is not RegressorKind.ELASTIC_NET:
        raise DataError(f"Bootstrap needs an Elastic Net fit, got {fit.kind.value}.")
    _check_inputs(x, y)
    alpha = float(fit.hyperparameters["alpha"])
    l1_ratio = float(fit.hyperparameters["l1_ratio"])
    spec = spec or RegressorSpec(kind=RegressorKind.ELASTIC_NET, seed=seed)
    rng = np.random.default_rng(seed)

    coefs: list[np.ndarray] = []
    intercepts: list[float] = []
    skipped = 0
    for _ in range(replications):
        rows = sampler(rng, len(y))
        y_b = y.values[rows]
        if np.var(y_b) == 0.0:
            skipped += 1
            continue
        design = standardize(x.data[rows], y_b)
        beta, _ = coordinate_descent(
            design.x,
            design.y,
            alpha,
            l1_ratio,
            tol=spec.elastic_net.tol,
            max_sweeps=spec.elastic_net.max_sweeps,
        )
        intercept, coef = design.original_scale(beta)
        coefs.append(coef)
        intercepts.append(intercept)
    if not coefs:
        raise EstimationError(f"All {replications} bootstrap replicates were degenerate.")
    if skipped:
        logger.warning(f"Skipped {skipped} of {replications} degenerate bootstrap replicates.")

    draws = np.vstack(coefs)
    low_pct, high_pct = spec.elastic_net.interval
    mean_coef = draws.mean(axis=0)
    mean_intercept = float(np.mean(intercepts))
    averaged = fit.model_copy(
        update={
            "state": {
                **fit.state,
                "intercept": mean_intercept,
                "coef": [float(c) for c in mean_coef],
                "bootstrap_replications": len(coefs),
            }
        }
    )
    return BootstrapSummary(
        columns=fit.columns,
        mean_coef=mean_coef,
        mean_intercept=mean_intercept,
        lower=np.percentile(draws, low_pct, axis=0),
        upper=np.percentile(draws, high_pct, axis=0),
        replications=len(coefs),
        skipped=skipped,
        fit=averaged,
    )
