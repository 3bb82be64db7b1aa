# ==============================================================================
# gdpdisagg.core: The Pipeline Engine
#
# This module orchestrates a run. It knows nothing about Typer or Rich: its
# input is a validated `RunConfig`, its output is a set of files under the
# country's output directory plus a structured `PipelineResult`.
#
# A run is a sequence of named stages drawn from `STAGES`:
#
#   preprocess   → ADF screen and the aggregated quarterly design
#   evaluate     → expanding-window predictions per regressor × lag cell
#   dm           → pairwise Diebold-Mariano tables from prediction files
#   disaggregate → full-sample refit, monthly signal, reconciliation
#   explain      → Shapley attributions for the final model
#   theory       → Monte Carlo checks of regime bias and the ridge MSE curve
#
# Whatever happens, a manifest is written at the end listing the stages that
# completed, the one that failed (if any), and a SHA-256 of every output.
# ==============================================================================

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence, TypedDict

import numpy as np

from . import __version__, regressors
from .config import RunConfig
from .elasticnet import BootstrapSummary, bootstrap_elastic_net
from .errors import DataError, DisaggError, EstimationError, ExpandingWindowError
from .evaluate import (
    ExpandingWindowResult,
    SummaryRow,
    best_configurations,
    compute_metrics,
    pairwise_dm,
    run_expanding_window,
)
from .explain import rank_features, shapley_attributions
from .formats import (
    Manifest,
    MasterFile,
    load_master_csv,
    load_monthly_series,
    read_predictions,
    write_adf,
    write_adjustment,
    write_attribution,
    write_benchmark,
    write_dm,
    write_fit,
    write_manifest,
    write_monthly,
    write_predictions,
    write_ranking,
    write_summary,
    write_table,
)
from .models import FitResult, RegressorKind
from .preprocess import (
    Standardizer,
    adf_report,
    aggregate_quarterly,
    fit_standardizer,
    transform_panel,
)
from .reconcile import annualize, compare_benchmark, reconcile, recover_levels
from .series import LagSpec, Panel, Series, add_lags, align, monthly_lags, period_label
from .theorylab import (
    regime_consistency_rate,
    regularization_experiment,
    ridge_mse_curve,
    simulate_regime_bias,
)

logger = logging.getLogger(__name__)

# Levels start from this index value when no base level is configured.
DEFAULT_BASE_LEVEL = 100.0


# ==============================================================================
# Data Contracts
# ==============================================================================


class PipelineResult(TypedDict):
    """Structured outcome of `run_pipeline`, handed to the presentation layer."""

    output_dir: Path
    manifest_path: Path
    completed: list[str]
    outputs: list[Path]
    warnings: list[str]


@dataclass(frozen=True, eq=False)
class PreparedData:
    """Transformed monthly indicators, their quarterly aggregate and the target."""

    monthly: Panel
    quarterly: Panel
    target: Series

    def design(self, lag: int) -> tuple[Panel, Series]:
        lagged = add_lags(self.quarterly, LagSpec(lag_count=lag))
        return align(lagged, self.target)


@dataclass(eq=False)
class FinalModel:
    fit: FitResult
    design: Panel
    target: Series
    standardizer: Standardizer
    bootstrap: Optional[BootstrapSummary] = None


@dataclass(eq=False)
class PipelineContext:
    """Lazily loaded state shared by the stages of one run."""

    config: RunConfig
    workers: int = 1
    warnings: list[str] = field(default_factory=list)
    _master: Optional[MasterFile] = None
    _prepared: Optional[PreparedData] = None
    _final: Optional[FinalModel] = None

    @property
    def output_dir(self) -> Path:
        return self.config.output.directory / self.config.data.country

    @property
    def country(self) -> str:
        return self.config.data.country

    def master(self) -> MasterFile:
        if self._master is None:
            data = self.config.data
            self._master = load_master_csv(data.path, data.date_column, data.gdp_column, data.indicators)
        return self._master

    def prepared(self) -> PreparedData:
        if self._prepared is None:
            self._prepared = prepare_data(self.config, self.master())
        return self._prepared

    def final_model(self) -> FinalModel:
        if self._final is None:
            self._final = fit_final_model(self.config, self.prepared())
        return self._final


StageFn = Callable[[PipelineContext], list[Path]]


# ==============================================================================
# Shared Steps
# ==============================================================================


def prepare_data(config: RunConfig, master: MasterFile) -> PreparedData:
    """Transforms the indicators, aggregates them to quarters and aligns GDP growth."""
    spec = config.transform_spec()
    monthly = transform_panel(master.indicators, spec)
    quarterly = aggregate_quarterly(monthly, spec)
    quarterly, target = align(quarterly, master.gdp_growth)
    logger.info(
        f"Prepared {len(monthly)} months and {len(quarterly)} quarters "
        f"({period_label(int(target.index[0]), target.frequency)} to "
        f"{period_label(int(target.index[-1]), target.frequency)})."
    )
    return PreparedData(monthly, quarterly, target)


def fit_final_model(config: RunConfig, prepared: PreparedData) -> FinalModel:
    """
    Full-sample refit of the configured regressor and lag.

    With Elastic Net and a positive bootstrap size the returned fit carries
    the bootstrap-mean coefficients.
    """
    settings = config.disaggregation
    x, y = prepared.design(settings.lag)
    standardizer = fit_standardizer(x, config.transform_spec())
    x_std = standardizer.apply(x)
    spec = config.regressor_spec(settings.regressor)
    fit = regressors.fit(x_std, y, spec)
    summary: Optional[BootstrapSummary] = None
    if settings.regressor is RegressorKind.ELASTIC_NET and settings.bootstrap_replications:
        summary = bootstrap_elastic_net(
            x_std, y, settings.bootstrap_replications, spec.seed, fit, spec=spec
        )
        fit = summary.fit
    logger.info(f"Final {settings.regressor.value} model fitted at lag {settings.lag} on {len(y)} quarters.")
    return FinalModel(fit, x_std, y, standardizer, summary)


def _evaluate_cell(
    context: PipelineContext, kind: RegressorKind, lag: int, step_workers: int = 1
) -> Optional[ExpandingWindowResult]:
    x, y = context.prepared().design(lag)
    try:
        return run_expanding_window(
            context.config.regressor_spec(kind),
            x,
            y,
            context.config.window_protocol(step_workers),
            context.config.transform_spec(),
        )
    except EstimationError as e:
        message = f"{kind.value} at lag {lag}: {e}"
        logger.error(f"Evaluation cell failed. {message}")
        context.warnings.append(message)
        return None


# ==============================================================================
# Stages
# ==============================================================================


def stage_preprocess(context: PipelineContext) -> list[Path]:
    config = context.config
    master = context.master()
    prepared = context.prepared()
    out = context.output_dir
    x, y = prepared.quarterly, prepared.target
    records = [
        {"date": label, **dict(zip(x.columns, row.tolist())), "gdp_growth": float(value)}
        for label, row, value in zip(x.labels, x.data, y.values)
    ]
    return [
        write_adf(out / "adf.csv", adf_report(master.indicators, config.data.adf_max_lag)),
        write_table(out / "quarterly_design.csv", records),
    ]


def stage_evaluate(context: PipelineContext) -> list[Path]:
    config = context.config
    cells = [(kind, lag) for kind in config.model.regressors for lag in config.model.lags]
    # Workers left over after one per cell go to the steps inside each cell.
    step_workers = max(1, context.workers // max(1, len(cells)))
    logger.info(
        f"Evaluating {len(cells)} regressor x lag cell(s) with {context.workers} worker(s), "
        f"{step_workers} per cell for expanding-window steps."
    )
    context.prepared()

    def job(cell: tuple[RegressorKind, int]) -> Optional[ExpandingWindowResult]:
        return _evaluate_cell(context, *cell, step_workers)

    if context.workers > 1:
        with ThreadPoolExecutor(max_workers=context.workers) as pool:
            results = list(pool.map(job, cells))
    else:
        results = [job(cell) for cell in cells]

    out = context.output_dir
    written: list[Path] = []
    summary: list[SummaryRow] = []
    for (kind, lag), result in zip(cells, results):
        if result is None:
            continue
        written.append(
            write_predictions(
                out / "predictions" / f"{kind.value}_lag{lag}.csv", result, context.country, kind.value, lag
            )
        )
        metrics = compute_metrics(result.predictions, result.actuals)
        summary.append(SummaryRow(context.country, kind.value, lag, metrics))
        logger.info(f"{kind.value} lag {lag}: RMSE={metrics.rmse:.6f}, failed steps={result.failed_steps}")
    if not summary:
        raise ExpandingWindowError("Every evaluation cell failed; no summary to write.")

    best_overall, best_per_lag = best_configurations(summary)
    written.append(write_summary(out / "summary.csv", summary))
    written.append(write_summary(out / "best_overall.csv", best_overall))
    written.append(write_summary(out / "best_by_lag.csv", best_per_lag))
    return written


def stage_dm(context: PipelineContext) -> list[Path]:
    directory = context.output_dir / "predictions"
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise DataError(f"No prediction files found under {directory}; run 'evaluate' first.")
    cells: dict[tuple[str, int], dict[str, Series]] = {}
    for path in files:
        loaded = read_predictions(path)
        cells.setdefault((loaded.country, loaded.lag), {})[loaded.model] = loaded.errors
    rows = []
    for (country, lag), errors in sorted(cells.items()):
        if len(errors) < 2:
            logger.warning(f"Only one model at lag {lag} for {country}; no DM pair to test.")
            continue
        rows.extend(pairwise_dm(errors, country, lag))
    return [write_dm(context.output_dir / "dm.csv", rows)]


def stage_disaggregate(context: PipelineContext) -> list[Path]:
    config = context.config
    settings = config.disaggregation
    prepared = context.prepared()
    final = context.final_model()
    out = context.output_dir

    monthly = final.standardizer.apply(monthly_lags(prepared.monthly, LagSpec(lag_count=settings.lag)))
    signal = regressors.predict(final.fit, monthly)
    reconciled = reconcile(signal, prepared.target, settings.mode)
    base = settings.base_level if settings.base_level is not None else DEFAULT_BASE_LEVEL
    levels = recover_levels(reconciled.growth, base)
    annualized = annualize(reconciled.growth)
    logger.info(
        f"Reconciled {len(signal)} months ({settings.mode.value}); "
        f"max violation {reconciled.diagnostics.violation_after:.3e}."
    )

    written = [
        write_fit(out / "final_fit.json", final.fit),
        write_monthly(out / "monthly_gdp.csv", signal, reconciled, levels, annualized),
        write_adjustment(out / "adjustment_factors.csv", reconciled),
    ]
    if final.bootstrap is not None:
        boot = final.bootstrap
        written.append(
            write_table(
                out / "bootstrap.csv",
                [
                    {"column": c, "mean": float(m), "lower": float(lo), "upper": float(hi)}
                    for c, m, lo, hi in zip(boot.columns, boot.mean_coef, boot.lower, boot.upper)
                ],
            )
        )
    if settings.benchmark_path is not None:
        benchmark = load_monthly_series(
            settings.benchmark_path, settings.benchmark_date_column, settings.benchmark_column
        )
        comparison = compare_benchmark(levels, benchmark)
        written.append(write_benchmark(out / "benchmark.csv", comparison))
    return written


def stage_explain(context: PipelineContext) -> list[Path]:
    settings = context.config.explain
    final = context.final_model()
    attribution = shapley_attributions(
        final.fit,
        final.design,
        final.design,
        settings.mode,
        seed=context.config.model.seed,
        permutations=settings.permutations,
        background_cap=settings.background_cap,
    )
    gap = attribution.local_accuracy_gap()
    if gap > 1e-6:
        context.warnings.append(f"Shapley local accuracy gap {gap:.3e}")
    out = context.output_dir
    return [
        write_attribution(out / "attribution.csv", attribution, final.design.frequency),
        write_ranking(out / "ranking.csv", rank_features(attribution, settings.top)),
    ]


def stage_theory(context: PipelineContext) -> list[Path]:
    theory = context.config.theory
    seed = context.config.model.seed
    out = context.output_dir

    regime = theory.regime.model_copy(update={"seed": seed})
    report = simulate_regime_bias(regime)
    context.warnings.extend(report.warnings)
    rate = regime_consistency_rate(regime, theory.regime_seeds)
    regime_rows = [
        {
            "coefficient": j,
            "beta_ols": float(report.beta_ols[j]),
            "standard_error": float(report.standard_errors[j]),
            "beta_bar": float(report.beta_bar[j]),
            "projection": float(report.projection[j]),
        }
        for j in range(report.beta_ols.size)
    ]
    bias_rows = [
        {
            "n_crisis": report.n_crisis,
            "bias_formula": report.crisis_bias_formula,
            "bias_empirical": math.nan if report.crisis_bias_empirical is None else report.crisis_bias_empirical,
            "bias_se": math.nan if report.crisis_bias_se is None else report.crisis_bias_se,
            "consistency_rate": rate,
        }
    ]

    curve = ridge_mse_curve(theory.ridge, theory.mc_lambdas, theory.mc_replications, seed)
    ridge_rows = [
        {
            "lambda": row.lam,
            "analytic_mse": row.analytic_mse,
            "mc_mse": math.nan if row.mc_mse is None else row.mc_mse,
            "mc_stderr": math.nan if row.mc_stderr is None else row.mc_stderr,
        }
        for row in curve.rows
    ]
    logger.info(
        f"Ridge curve: best lambda {curve.best_lambda:.4g} "
        f"(MSE {curve.best_mse:.6g} vs {curve.mse_at_zero:.6g} at zero)."
    )
    written = [
        write_table(out / "theory_regime.csv", regime_rows),
        write_table(out / "theory_regime_bias.csv", bias_rows),
        write_table(out / "theory_ridge.csv", ridge_rows),
    ]
    if theory.run_experiment:
        update: dict[str, Any] = {"seed": seed}
        # The experiment scores the configured production Elastic Net unless
        # [theory.experiment.elastic_net] overrides it.
        if "elastic_net" not in theory.experiment.model_fields_set:
            update["elastic_net"] = context.config.elastic_net
        experiment = regularization_experiment(theory.experiment.model_copy(update=update))
        written.append(
            write_table(
                out / "theory_experiment.csv",
                [
                    {
                        "seed": row.seed,
                        "elastic_net_mse": row.elastic_net_mse,
                        "gls_mse": row.gls_mse,
                        "elastic_net_wins": row.elastic_net_wins,
                    }
                    for row in experiment.rows
                ],
            )
        )
        logger.info(f"Regularization experiment: Elastic Net win rate {experiment.win_rate:.2%}.")
    return written


# A dictionary mapping stage names to their implementations. The order of
# `ALL_STAGES` is the order `all` runs them in.
STAGES: dict[str, StageFn] = {
    "preprocess": stage_preprocess,
    "evaluate": stage_evaluate,
    "dm": stage_dm,
    "disaggregate": stage_disaggregate,
    "explain": stage_explain,
    "theory": stage_theory,
}
ALL_STAGES: tuple[str, ...] = tuple(STAGES)


# ==============================================================================
# The Core Engine Function
# ==============================================================================


def run_pipeline(config: RunConfig, stages: Sequence[str] = ALL_STAGES, workers: int = 1) -> PipelineResult:
    """
    Runs the named stages in order and writes the manifest.

    Raises:
        DataError: An unknown stage name, or invalid inputs in any stage.
        DisaggError: The first stage error; the manifest written before
                     re-raising records the stages completed so far.
    """
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise DataError(f"Unknown stage(s) {unknown}; choose from {list(STAGES)}.")

    context = PipelineContext(config, workers=workers)
    out = context.output_dir
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(
        package_version=__version__,
        config=config.model_dump(mode="json"),
        seed=config.model.seed,
    )
    manifest_path = out / "manifest.json"
    outputs: list[Path] = []
    logger.info(f"Core engine starting stages {list(stages)} for '{context.country}' into {out}")

    try:
        for name in stages:
            logger.info(f"--- Stage: {name} ---")
            try:
                outputs.extend(STAGES[name](context))
            except DisaggError:
                manifest.failed_stage = name
                logger.error(f"Stage '{name}' aborted.", exc_info=True)
                raise
            except (ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
                manifest.failed_stage = name
                logger.error(f"Stage '{name}' aborted with a numerical error.", exc_info=True)
                raise EstimationError(f"Stage '{name}' failed: {e}") from e
            manifest.completed_stages.append(name)
    except DisaggError as e:
        manifest.error = str(e)
        raise
    finally:
        if context._master is not None:
            manifest.input_sha256 = context._master.sha256
        manifest.warnings = list(context.warnings)
        manifest.record_outputs(out, outputs)
        write_manifest(manifest_path, manifest)
        logger.info(f"Manifest written to {manifest_path}")

    return {
        "output_dir": out,
        "manifest_path": manifest_path,
        "completed": list(manifest.completed_stages),
        "outputs": outputs,
        "warnings": list(context.warnings),
    }
