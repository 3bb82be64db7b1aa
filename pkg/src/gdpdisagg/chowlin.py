# ==============================================================================
# gdpdisagg.chowlin: Chow-Lin GLS Temporal Disaggregation
#
# Monthly growth is modelled as y_m = c + x_m'β + u_m with AR(1) residuals
# u_m = ρ u_{m-1} + ε_m. Only the quarterly sums Y_q = Σ_{m∈q} y_m are
# observed, so estimation runs on the aggregated model with residual
# covariance Ω(ρ) = J Σ(ρ) J', where J sums the three months of a quarter.
#
# ρ is chosen by maximizing the concentrated GLS log-likelihood: a coarse
# grid brackets the maximum, bounded Brent refines it. Given (β̂, ρ̂), the
# quarterly residuals are distributed back over the months through the
# AR(1) covariance, which reproduces the quarterly totals exactly.
# ==============================================================================

import logging
from typing import NamedTuple, Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, toeplitz
from scipy.optimize import minimize_scalar

from .errors import AlignmentError, InsufficientHistoryError, RankDeficientError
from .models import ChowLinSettings, FitResult, RegressorKind, RegressorSpec, fingerprint
from .series import Frequency, Panel, Series

logger = logging.getLogger(__name__)

_LOG_2PI = float(np.log(2.0 * np.pi))
_BOUNDARY_MARGIN = 1e-3


# ==============================================================================
# Covariance Structure
# ==============================================================================


def quarterly_covariance(rho: float, n_quarters: int) -> np.ndarray:
    """
    Ω(ρ)/σ²_ε for three-month sums of a stationary AR(1).

    Ω is Toeplitz. Between quarters h apart, the nine monthly pairs sit at
    lags 3h+d for d = -2..2 with multiplicities 3-|d|, so
    ω(h) = Σ_d (3-|d|) ρ^|3h+d| / (1-ρ²).
    """
    h = np.arange(n_quarters)[:, None]
    d = np.arange(-2, 3)[None, :]
    weights = 3.0 - np.abs(d)
    omega = (weights * rho ** np.abs(3 * h + d)).sum(axis=1) / (1.0 - rho * rho)
    return toeplitz(omega)


def monthly_quarterly_covariance(rho: float, n_quarters: int) -> np.ndarray:
    """Σ(ρ)J'/σ²_ε: covariance between each month and each quarterly sum."""
    m = np.arange(3 * n_quarters)[:, None, None]
    q = np.arange(n_quarters)[None, :, None]
    a = np.arange(3)[None, None, :]
    lags = np.abs(m - 3 * q - a)
    return (rho**lags).sum(axis=-1) / (1.0 - rho * rho)


class GlsSolution(NamedTuple):
    coef: np.ndarray
    sigma2: float
    loglik: float


def gls_at(rho: float, design: np.ndarray, y: np.ndarray) -> GlsSolution:
    """
    GLS coefficients and concentrated log-likelihood at a fixed ρ.

    With σ²_ε profiled out, σ̂² = û'Ω₁⁻¹û/Q and
    ℓ(ρ) = -Q/2 (log 2π + log σ̂² + 1) - ½ log|Ω₁|, where Ω₁ = Ω/σ²_ε.
    """
    n_quarters = y.shape[0]
    omega = quarterly_covariance(rho, n_quarters)
    try:
        factor = cho_factor(omega, lower=True)
        a = design.T @ cho_solve(factor, design)
        b = design.T @ cho_solve(factor, y)
        coef = np.linalg.solve(a, b)
    except LinAlgError as e:
        raise RankDeficientError(f"rank deficient: GLS normal equations at ρ={rho:.6f} are singular.") from e
    resid = y - design @ coef
    quad = float(resid @ cho_solve(factor, resid))
    sigma2 = max(quad / n_quarters, np.finfo(float).tiny)
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    loglik = -0.5 * n_quarters * (_LOG_2PI + np.log(sigma2) + 1.0) - 0.5 * logdet
    return GlsSolution(coef, sigma2, float(loglik))


def _maximize_rho(
    design: np.ndarray, y: np.ndarray, settings: ChowLinSettings
) -> tuple[float, list[str]]:
    """
    Locates the ρ that maximizes the concentrated log-likelihood.

    Returns:
        The estimate and any boundary warnings. The grid value is kept when
        Brent fails to improve on it.
    """
    lo, hi = settings.rho_lower, settings.rho_upper

    # --- Stage 1: Coarse grid to bracket the maximum ---
    grid = np.linspace(lo, hi, settings.grid_points)
    values = np.array([gls_at(float(r), design, y).loglik for r in grid])
    i = int(np.argmax(values))
    bracket = (float(grid[max(i - 1, 0)]), float(grid[min(i + 1, grid.size - 1)]))

    # --- Stage 2: Bounded Brent inside the bracket ---
    result = minimize_scalar(
        lambda r: -gls_at(float(r), design, y).loglik,
        bounds=bracket,
        method="bounded",
        options={"xatol": settings.xatol},
    )
    rho = float(result.x) if -result.fun >= values[i] else float(grid[i])
    logger.debug(f"Chow-Lin ρ search: grid best {grid[i]:.4f}, refined {rho:.6f}")

    # A maximum pinned to either bound usually means a misspecified model.
    warnings: list[str] = []
    if rho - lo < _BOUNDARY_MARGIN or hi - rho < _BOUNDARY_MARGIN:
        message = f"ρ̂ = {rho:.6f} is at the search boundary ({lo}, {hi})."
        logger.warning(message)
        warnings.append(message)
    return rho, warnings


# ==============================================================================
# Estimation
# ==============================================================================


def _estimate(
    x_quarterly: np.ndarray,
    y: Series,
    intercept_weight: float,
    settings: ChowLinSettings,
) -> tuple[np.ndarray, float, GlsSolution, list[str]]:
    """
    Shared estimation path for monthly and quarterly designs.

    Args:
        x_quarterly: Regressors already summed to quarters.
        y: Quarterly target.
        intercept_weight: 3 when the intercept is monthly, 1 when quarterly.
        settings: ρ bounds, grid and tolerance, or a fixed ρ.

    Raises:
        InsufficientHistoryError: Too few quarters or missing values.
        RankDeficientError: Collinear design or singular normal equations.
    """
    n_quarters, k = x_quarterly.shape
    if k + 1 >= n_quarters:
        raise InsufficientHistoryError(
            f"Chow-Lin needs more quarters ({n_quarters}) than coefficients ({k + 1})."
        )
    if not np.all(np.isfinite(x_quarterly)) or not np.all(np.isfinite(y.values)):
        raise InsufficientHistoryError("Chow-Lin inputs contain missing values.")
    # The intercept column carries the aggregation weight so that the stored
    # coefficient stays on the monthly scale.
    design = np.column_stack([np.full(n_quarters, intercept_weight), x_quarterly])
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise RankDeficientError("rank deficient: the quarterly design has collinear columns.")

    if settings.fixed_rho is not None:
        rho, warnings = float(settings.fixed_rho), []
    else:
        rho, warnings = _maximize_rho(design, y.values, settings)
    solution = gls_at(rho, design, y.values)
    return solution.coef, rho, solution, warnings


def _build_fit(
    columns: tuple[str, ...],
    coef: np.ndarray,
    rho: float,
    solution: GlsSolution,
    warnings: list[str],
    spec: RegressorSpec,
    stamp: str,
    design_frequency: Frequency,
) -> FitResult:
    settings = spec.chow_lin
    return FitResult(
        kind=RegressorKind.CHOW_LIN,
        columns=columns,
        hyperparameters={
            "rho_lower": settings.rho_lower,
            "rho_upper": settings.rho_upper,
            "fixed_rho": settings.fixed_rho,
        },
        state={
            "intercept": float(coef[0]),
            "coef": [float(c) for c in coef[1:]],
            "rho": rho,
            "sigma2": solution.sigma2,
            "loglik": solution.loglik,
        },
        seed=spec.seed,
        fingerprint=stamp,
        design_frequency=design_frequency,
        warnings=tuple(warnings),
    )


def check_month_quarter_alignment(x_monthly: Panel, y_quarterly: Series) -> None:
    """The monthly panel must cover exactly the months of the target quarters."""
    if x_monthly.frequency is not Frequency.MONTHLY:
        raise AlignmentError("Chow-Lin expects monthly regressors.")
    if y_quarterly.frequency is not Frequency.QUARTERLY:
        raise AlignmentError("Chow-Lin expects a quarterly target.")
    if len(y_quarterly) == 0:
        raise AlignmentError("Quarterly target is empty.")
    first_month = 3 * int(y_quarterly.index[0])
    if len(x_monthly) != 3 * len(y_quarterly) or int(x_monthly.index[0]) != first_month:
        raise AlignmentError(
            f"Monthly panel ({len(x_monthly)} months from ordinal "
            f"{int(x_monthly.index[0]) if len(x_monthly) else 'n/a'}) does not cover "
            f"the {len(y_quarterly)} target quarters starting at month {first_month}."
        )


def fit_chow_lin(
    x_monthly: Panel, y_quarterly: Series, spec: Optional[RegressorSpec] = None
) -> FitResult:
    """
    Fits the monthly Chow-Lin model to quarterly totals.

    The monthly intercept aggregates to 3c per quarter, so the stored
    intercept is monthly and `predict` multiplies it by 3 when the fit is
    applied to a quarterly design.

    Raises:
        AlignmentError: The panel does not cover the quarters' months.
        RankDeficientError: The aggregated design is singular.
    """
    spec = spec or RegressorSpec(kind=RegressorKind.CHOW_LIN)
    check_month_quarter_alignment(x_monthly, y_quarterly)
    x_q = x_monthly.data.reshape(len(y_quarterly), 3, x_monthly.n_columns).sum(axis=1)
    coef, rho, solution, warnings = _estimate(x_q, y_quarterly, 3.0, spec.chow_lin)
    logger.info(f"Chow-Lin fit on {len(y_quarterly)} quarters: ρ̂={rho:.4f}")
    return _build_fit(
        x_monthly.columns,
        coef,
        rho,
        solution,
        warnings,
        spec,
        fingerprint(x_monthly, y_quarterly),
        Frequency.MONTHLY,
    )


def fit_chow_lin_quarterly(
    x_quarterly: Panel, y_quarterly: Series, spec: Optional[RegressorSpec] = None
) -> FitResult:
    """
    Chow-Lin GLS on an already aggregated quarterly design.

    This is the form the expanding-window evaluation uses, where each row is
    a quarter and the intercept is quarterly.

    Raises:
        AlignmentError: The panel is not quarterly or its index differs from the target's.
        RankDeficientError: The design is singular.
    """
    spec = spec or RegressorSpec(kind=RegressorKind.CHOW_LIN)
    if x_quarterly.frequency is not Frequency.QUARTERLY:
        raise AlignmentError("fit_chow_lin_quarterly expects a quarterly panel.")
    if not np.array_equal(x_quarterly.index, y_quarterly.index):
        raise AlignmentError("Design and target must share the same quarterly index.")
    coef, rho, solution, warnings = _estimate(
        x_quarterly.data, y_quarterly, 1.0, spec.chow_lin
    )
    return _build_fit(
        x_quarterly.columns,
        coef,
        rho,
        solution,
        warnings,
        spec,
        fingerprint(x_quarterly, y_quarterly),
        Frequency.QUARTERLY,
    )


def predict_array(fit: FitResult, data: np.ndarray, frequency: Frequency) -> np.ndarray:
    """Linear prediction c + xβ, with the intercept scaled to the requested frequency."""
    intercept = float(fit.state["intercept"])
    if fit.design_frequency is Frequency.MONTHLY and frequency is Frequency.QUARTERLY:
        intercept *= 3.0
    return intercept + data @ fit.array("coef")


# ==============================================================================
# Distribution
# ==============================================================================


def chow_lin_distribute(fit: FitResult, x_monthly: Panel, y_quarterly: Series) -> Series:
    """
    Distributes quarterly residuals over months: ŷ = p + ΣJ'Ω⁻¹(Y − Jp).

    Since J(ΣJ') = Ω, the three-month sums of ŷ equal Y up to rounding.
    With ρ̂ = 0 every month receives a third of its quarter's residual.

    Args:
        fit: A Chow-Lin fit on the same monthly columns.
        x_monthly: Monthly regressors covering the target quarters.
        y_quarterly: Quarterly totals to reproduce.

    Returns:
        The monthly series whose quarterly sums match `y_quarterly`.

    Raises:
        AlignmentError: Wrong fit kind, columns or month coverage.
        RankDeficientError: Ω(ρ̂) cannot be factored.
    """
    if fit.kind is not RegressorKind.CHOW_LIN:
        raise AlignmentError(f"chow_lin_distribute needs a Chow-Lin fit, got {fit.kind.value}.")
    if tuple(x_monthly.columns) != tuple(fit.columns):
        raise AlignmentError("Monthly panel columns differ from the fitted columns.")
    check_month_quarter_alignment(x_monthly, y_quarterly)

    n_quarters = len(y_quarterly)
    rho = float(fit.state["rho"])
    # --- Regression part, then the residual each quarter still has to absorb ---
    base = predict_array(fit, x_monthly.data, Frequency.MONTHLY)
    resid = y_quarterly.values - base.reshape(n_quarters, 3).sum(axis=1)
    omega = quarterly_covariance(rho, n_quarters)
    cross = monthly_quarterly_covariance(rho, n_quarters)
    try:
        correction = cross @ cho_solve(cho_factor(omega, lower=True), resid)
    except LinAlgError as e:
        raise RankDeficientError(f"rank deficient: Ω(ρ̂) is singular at ρ̂={rho:.6f}.") from e
    return Series(x_monthly.index, base + correction, Frequency.MONTHLY, y_quarterly.name)
