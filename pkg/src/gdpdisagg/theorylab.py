# ==============================================================================
# gdpdisagg.theorylab: Numerical Checks of the Theoretical Claims
#
# Three studies back the two theoretical results the method rests on:
#
#   1. Regime switching: when the coefficients of a linear model switch
#      between a normal regime (β₁) and a crisis regime (β₂, probability π),
#      OLS estimates a blend of the two and is biased inside the crisis
#      regime by (1−π)(β₂−β₁)'E[X | crisis]. `simulate_regime_bias` checks
#      both statements by simulation.
#   2. Ridge shrinkage: the ridge MSE curve
#      MSE(λ) = Σ_j (σ²d_j + λ²α_j²) / (d_j + λ)²
#      starts with a negative slope whenever σ > 0, so some λ > 0 beats OLS.
#      `ridge_mse_curve` evaluates it, locates the grid minimum and can
#      cross-check one point by Monte Carlo.
#   3. `regularization_experiment` runs the synthetic horse race between
#      Elastic Net and unpenalized GLS on a wide, correlated design.
# ==============================================================================

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import DataError
from .evaluate import WindowProtocol, run_expanding_window
from .models import ElasticNetSettings, RegressorKind, RegressorSpec
from .series import Frequency, LagSpec, Panel, Series, add_lags

logger = logging.getLogger(__name__)

MIN_CRISIS_DRAWS = 5


# ==============================================================================
# Regime-Switching Bias
# ==============================================================================


class RegimeDgpSpec(BaseModel):
    """
    y = x'β_s + ε, s ~ Bernoulli(π), x | s ~ N(μ_s, σ_x² I), no intercept.

    Means may be scalars (broadcast) or vectors of the coefficient length.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    beta_normal: tuple[float, ...]
    beta_crisis: tuple[float, ...]
    crisis_prob: float = Field(ge=0.0, le=1.0)
    noise_sd: float = Field(default=0.1, ge=0.0)
    normal_mean: tuple[float, ...] = (0.0,)
    crisis_mean: tuple[float, ...] = (1.0,)
    regressor_sd: float = Field(default=1.0, gt=0.0)
    n: int = Field(default=100_000, ge=100)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def shapes_agree(self) -> "RegimeDgpSpec":
        p = len(self.beta_normal)
        if p == 0 or len(self.beta_crisis) != p:
            raise ValueError("beta_normal and beta_crisis must be non-empty and equally long.")
        for name in ("normal_mean", "crisis_mean"):
            if len(getattr(self, name)) not in (1, p):
                raise ValueError(f"{name} must be a scalar or have length {p}.")
        return self

    def mean(self, crisis: bool) -> np.ndarray:
        value = np.asarray(self.crisis_mean if crisis else self.normal_mean, dtype=float)
        return np.broadcast_to(value, (len(self.beta_normal),)).copy()

    @property
    def beta_bar(self) -> np.ndarray:
        b1, b2 = np.asarray(self.beta_normal), np.asarray(self.beta_crisis)
        return (1.0 - self.crisis_prob) * b1 + self.crisis_prob * b2


@dataclass(frozen=True, eq=False)
class RegimeBiasReport:
    beta_ols: np.ndarray
    standard_errors: np.ndarray
    beta_bar: np.ndarray
    projection: np.ndarray
    n_crisis: int
    crisis_bias_formula: float
    crisis_bias_empirical: Optional[float]
    crisis_bias_se: Optional[float]
    warnings: list[str] = field(default_factory=list)

    def within_standard_errors(self, k: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.beta_ols - self.beta_bar) <= k * self.standard_errors))


def crisis_bias_formula(spec: RegimeDgpSpec) -> float:
    """(1−π)(β₂−β₁)'E[X | crisis]."""
    diff = np.asarray(spec.beta_crisis) - np.asarray(spec.beta_normal)
    return float((1.0 - spec.crisis_prob) * diff @ spec.mean(crisis=True))


def population_projection(spec: RegimeDgpSpec) -> np.ndarray:
    """
    Probability limit of OLS without intercept: E[xx']⁻¹E[xy].

    It coincides with the blended coefficient β̄ only when E[xx' | s] does not
    depend on the regime.
    """
    p = len(spec.beta_normal)
    second = np.zeros((p, p))
    cross = np.zeros(p)
    for crisis, weight, beta in (
        (False, 1.0 - spec.crisis_prob, spec.beta_normal),
        (True, spec.crisis_prob, spec.beta_crisis),
    ):
        mu = spec.mean(crisis)
        moment = spec.regressor_sd**2 * np.eye(p) + np.outer(mu, mu)
        second += weight * moment
        cross += weight * moment @ np.asarray(beta)
    return np.linalg.solve(second, cross)


def simulate_regime_bias(spec: RegimeDgpSpec) -> RegimeBiasReport:
    """Simulates the switching model, fits OLS and measures the crisis-regime bias."""
    rng = np.random.default_rng(spec.seed)
    p = len(spec.beta_normal)
    crisis = rng.random(spec.n) < spec.crisis_prob
    means = np.where(crisis[:, None], spec.mean(True), spec.mean(False))
    x = means + spec.regressor_sd * rng.standard_normal((spec.n, p))
    betas = np.where(crisis[:, None], np.asarray(spec.beta_crisis), np.asarray(spec.beta_normal))
    y = np.einsum("ij,ij->i", x, betas) + spec.noise_sd * rng.standard_normal(spec.n)

    beta_ols, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ beta_ols
    bread = np.linalg.inv(x.T @ x)
    meat = (x * resid[:, None] ** 2).T @ x
    standard_errors = np.sqrt(np.diag(bread @ meat @ bread))

    warnings: list[str] = []
    n_crisis = int(crisis.sum())
    empirical: Optional[float] = None
    empirical_se: Optional[float] = None
    if n_crisis < MIN_CRISIS_DRAWS:
        message = f"crisis regime underrepresented: {n_crisis} crisis draw(s) in {spec.n}."
        logger.warning(message)
        warnings.append(message)
    if n_crisis >= 2:
        crisis_resid = y[crisis] - x[crisis] @ spec.beta_bar
        empirical = float(crisis_resid.mean())
        empirical_se = float(crisis_resid.std(ddof=1) / math.sqrt(n_crisis))

    return RegimeBiasReport(
        beta_ols=beta_ols,
        standard_errors=standard_errors,
        beta_bar=spec.beta_bar,
        projection=population_projection(spec),
        n_crisis=n_crisis,
        crisis_bias_formula=crisis_bias_formula(spec),
        crisis_bias_empirical=empirical,
        crisis_bias_se=empirical_se,
        warnings=warnings,
    )


def regime_consistency_rate(spec: RegimeDgpSpec, n_seeds: int = 100, k: float = 3.0) -> float:
    """Share of seeds whose OLS estimate lies within k standard errors of β̄."""
    hits = sum(
        simulate_regime_bias(spec.model_copy(update={"seed": spec.seed + s})).within_standard_errors(k)
        for s in range(n_seeds)
    )
    return hits / n_seeds


# ==============================================================================
# Ridge MSE Curve
# ==============================================================================


def _default_lambdas() -> tuple[float, ...]:
    return (0.0, *(float(v) for v in np.logspace(-4.0, 2.0, 200)))


class RidgeCurveSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    eigenvalues: tuple[float, ...]
    rotated_coefficients: tuple[float, ...]
    sigma: float = Field(ge=0.0)
    lambdas: tuple[float, ...] = Field(default_factory=_default_lambdas)

    @field_validator("eigenvalues")
    @classmethod
    def eigenvalues_positive(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if not v or any(d <= 0.0 for d in v):
            raise ValueError("every eigenvalue d_j must be strictly positive.")
        return v

    @field_validator("lambdas")
    @classmethod
    def grid_valid(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if any(lam < 0.0 for lam in v):
            raise ValueError("λ grid values must be non-negative.")
        if 0.0 not in v:
            raise ValueError("λ grid must include 0.")
        return tuple(sorted(set(v)))

    @model_validator(mode="after")
    def lengths_agree(self) -> "RidgeCurveSpec":
        if len(self.rotated_coefficients) != len(self.eigenvalues):
            raise ValueError("rotated_coefficients must match eigenvalues in length.")
        return self


def ridge_mse(spec: RidgeCurveSpec, lam: float) -> float:
    d = np.asarray(spec.eigenvalues)
    a = np.asarray(spec.rotated_coefficients)
    return float(np.sum((spec.sigma**2 * d + lam**2 * a**2) / (d + lam) ** 2))


@dataclass(frozen=True)
class RidgeCurveRow:
    lam: float
    analytic_mse: float
    mc_mse: Optional[float] = None
    mc_stderr: Optional[float] = None


@dataclass(frozen=True, eq=False)
class RidgeCurve:
    rows: list[RidgeCurveRow]
    best_lambda: float
    best_mse: float
    mse_at_zero: float
    initial_slope: float

    @property
    def shrinkage_helps(self) -> bool:
        return self.best_lambda > 0.0 and self.best_mse < self.mse_at_zero

    def mc_consistent(self, k: float = 3.0) -> bool:
        for row in self.rows:
            if row.mc_mse is None or row.mc_stderr is None:
                continue
            if abs(row.mc_mse - row.analytic_mse) > k * row.mc_stderr:
                return False
        return True


def monte_carlo_ridge(
    spec: RidgeCurveSpec, lam: float, replications: int = 2000, seed: int = 0
) -> tuple[float, float]:
    """
    Simulates Y = Xβ + σε with X'X = diag(d) and β = α, and returns the mean
    and standard error of ‖β̂_λ − β‖².
    """
    if replications < 2:
        raise DataError("Monte Carlo cross-check needs at least 2 replications.")
    d = np.asarray(spec.eigenvalues)
    beta = np.asarray(spec.rotated_coefficients)
    p = d.size
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((max(p, 2 * p), p)))
    x = q * np.sqrt(d)
    solve = np.linalg.inv(x.T @ x + lam * np.eye(p)) @ x.T
    noise = spec.sigma * rng.standard_normal((replications, x.shape[0]))
    estimates = (x @ beta + noise) @ solve.T
    losses = np.sum((estimates - beta) ** 2, axis=1)
    return float(losses.mean()), float(losses.std(ddof=1) / math.sqrt(replications))


def ridge_mse_curve(
    spec: RidgeCurveSpec,
    mc_lambdas: tuple[float, ...] = (),
    replications: int = 2000,
    seed: int = 0,
) -> RidgeCurve:
    """Closed-form MSE over the grid, its minimizer and optional Monte Carlo checks."""
    rows = []
    for lam in spec.lambdas:
        analytic = ridge_mse(spec, lam)
        if lam in mc_lambdas:
            mc, se = monte_carlo_ridge(spec, lam, replications, seed)
            rows.append(RidgeCurveRow(lam, analytic, mc, se))
        else:
            rows.append(RidgeCurveRow(lam, analytic))
    for lam in mc_lambdas:
        if lam not in spec.lambdas:
            mc, se = monte_carlo_ridge(spec, lam, replications, seed)
            rows.append(RidgeCurveRow(lam, ridge_mse(spec, lam), mc, se))
    rows.sort(key=lambda r: r.lam)

    grid_rows = [r for r in rows if r.lam in spec.lambdas]
    best = min(grid_rows, key=lambda r: (r.analytic_mse, r.lam))
    at_zero = ridge_mse(spec, 0.0)
    step = 1e-6
    slope = (ridge_mse(spec, step) - at_zero) / step
    if spec.sigma > 0.0 and not slope < 0.0:
        logger.warning(f"Ridge MSE slope at 0⁺ is {slope:.3e}, expected negative.")
    logger.info(f"Ridge MSE minimum {best.analytic_mse:.6g} at λ={best.lam:.4g} (OLS {at_zero:.6g})")
    return RidgeCurve(rows, best.lam, best.analytic_mse, at_zero, slope)


# ==============================================================================
# Regularization Experiment
# ==============================================================================


class RegularizationExperimentSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_indicators: int = Field(default=15, ge=1)
    lag_count: int = Field(default=2, ge=0)
    n_quarters: int = Field(default=130, ge=20)
    initial_ratio: float = Field(default=0.5, gt=0.0, lt=1.0)
    n_seeds: int = Field(default=40, ge=1)
    seed: int = Field(default=0, ge=0)
    factor_loading: float = Field(default=0.8, ge=0.0, lt=1.0)
    factor_persistence: float = Field(default=0.5, gt=-1.0, lt=1.0)
    n_active: int = Field(default=5, ge=1)
    coefficient: float = 0.5
    noise_sd: float = Field(default=1.0, gt=0.0)
    # Same grid and folds as the production regressor unless overridden.
    elastic_net: ElasticNetSettings = Field(default_factory=ElasticNetSettings)


@dataclass(frozen=True)
class ExperimentRow:
    seed: int
    elastic_net_mse: float
    gls_mse: float

    @property
    def elastic_net_wins(self) -> bool:
        return self.elastic_net_mse < self.gls_mse


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    rows: list[ExperimentRow]

    @property
    def win_rate(self) -> float:
        return sum(r.elastic_net_wins for r in self.rows) / len(self.rows)


def synthetic_design(spec: RegularizationExperimentSpec, seed: int) -> tuple[Panel, Series]:
    """
    Indicators share one AR(1) factor; `lag_count` quarterly lags widen the
    design to n_indicators·(lag_count+1) columns, of which `n_active` enter
    the target.
    """
    rng = np.random.default_rng(seed)
    total = spec.n_quarters + spec.lag_count
    factor = np.zeros(total)
    shocks = rng.standard_normal(total)
    for t in range(total):
        factor[t] = (spec.factor_persistence * factor[t - 1] if t else 0.0) + shocks[t]
    idio = rng.standard_normal((total, spec.n_indicators))
    load = spec.factor_loading
    data = load * factor[:, None] + math.sqrt(1.0 - load**2) * idio
    columns = {f"x{j + 1:02d}": data[:, j] for j in range(spec.n_indicators)}
    panel = add_lags(Panel.from_columns(range(total), columns, Frequency.QUARTERLY), LagSpec(lag_count=spec.lag_count))

    beta = np.zeros(panel.n_columns)
    active = rng.choice(panel.n_columns, size=min(spec.n_active, panel.n_columns), replace=False)
    beta[active] = spec.coefficient
    y = panel.data @ beta + spec.noise_sd * rng.standard_normal(len(panel))
    return panel, Series(panel.index, y, Frequency.QUARTERLY, "target")


def _oos_mse(kind: RegressorKind, x: Panel, y: Series, seed: int, spec: RegularizationExperimentSpec) -> float:
    regressor = RegressorSpec(kind=kind, seed=seed, elastic_net=spec.elastic_net)
    result = run_expanding_window(regressor, x, y, WindowProtocol(initial_ratio=spec.initial_ratio))
    err = result.actuals.values - result.predictions.values
    return float(np.nanmean(err**2))


def regularization_experiment(spec: Optional[RegularizationExperimentSpec] = None) -> ExperimentReport:
    """Elastic Net vs unpenalized Chow-Lin GLS, out of sample, across seeds."""
    spec = spec or RegularizationExperimentSpec()
    rows = []
    for s in range(spec.n_seeds):
        seed = spec.seed + s
        x, y = synthetic_design(spec, seed)
        row = ExperimentRow(
            seed=seed,
            elastic_net_mse=_oos_mse(RegressorKind.ELASTIC_NET, x, y, seed, spec),
            gls_mse=_oos_mse(RegressorKind.CHOW_LIN, x, y, seed, spec),
        )
        logger.debug(f"Seed {seed}: EN {row.elastic_net_mse:.4f} vs GLS {row.gls_mse:.4f}")
        rows.append(row)
    report = ExperimentReport(rows)
    logger.info(f"Elastic Net beat GLS in {report.win_rate:.0%} of {len(rows)} seeds")
    return report
