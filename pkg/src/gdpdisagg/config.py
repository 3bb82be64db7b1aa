# ==============================================================================
# gdpdisagg.config: Run Configuration
#
# A run is described by one TOML document validated into `RunConfig`. Every
# section rejects unknown keys, so a typo fails loudly instead of silently
# falling back to a default. Relative paths are resolved against the
# directory holding the configuration file, and a handful of fields can be
# overridden from the command line.
# ==============================================================================

import logging
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ConfigError
from .evaluate import WindowProtocol
from .explain import DEFAULT_BACKGROUND_CAP, ShapleyMode
from .models import (
    ChowLinSettings,
    ElasticNetSettings,
    FeedForwardSettings,
    GradientBoostSettings,
    RegressorKind,
    RegressorSpec,
)
from .preprocess import TransformKind, TransformSpec
from .reconcile import ReconcileMode
from .series import LagSpec
from .theorylab import RegimeDgpSpec, RegularizationExperimentSpec, RidgeCurveSpec

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1
THREADS_ENV = "DISAGG_THREADS"


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class DataSection(_Section):
    path: Path
    country: str = "us"
    date_column: str = "DATE"
    gdp_column: str = "GDP"
    # None means every column except DATE and GDP.
    indicators: Optional[list[str]] = None
    transforms: dict[str, TransformKind]
    adf_max_lag: int = Field(default=4, ge=0)


class ModelSection(_Section):
    regressors: list[RegressorKind] = Field(default_factory=lambda: list(RegressorKind))
    lags: list[int] = Field(default_factory=lambda: [0, 1, 2])
    seed: int = Field(default=0, ge=0)


class EvaluationSection(_Section):
    initial_ratio: float = Field(default=0.5, gt=0.0, lt=1.0)
    initial_window: Optional[int] = Field(default=None, ge=1)
    max_failed_fraction: float = Field(default=0.2, ge=0.0, le=1.0)


class DisaggregationSection(_Section):
    regressor: RegressorKind = RegressorKind.ELASTIC_NET
    lag: int = Field(default=1, ge=0)
    mode: ReconcileMode = ReconcileMode.MA5
    # 0 disables the bootstrap; the point estimate is used as is.
    bootstrap_replications: int = Field(default=0, ge=0)
    base_level: Optional[float] = Field(default=None, gt=0.0)
    benchmark_path: Optional[Path] = None
    benchmark_date_column: str = "DATE"
    benchmark_column: str = "value"


class ExplainSection(_Section):
    mode: ShapleyMode = ShapleyMode.SAMPLED
    permutations: int = Field(default=1000, ge=1)
    background_cap: int = Field(default=DEFAULT_BACKGROUND_CAP, ge=1)
    top: int = Field(default=10, ge=1)


def _default_regime() -> RegimeDgpSpec:
    return RegimeDgpSpec(
        beta_normal=(0.0,),
        beta_crisis=(2.0,),
        crisis_prob=0.5,
        normal_mean=(1.0,),
        crisis_mean=(1.0,),
    )


def _default_ridge() -> RidgeCurveSpec:
    return RidgeCurveSpec(eigenvalues=(1.0, 1.0), rotated_coefficients=(1.0, 1.0), sigma=1.0)


class TheorySection(_Section):
    regime: RegimeDgpSpec = Field(default_factory=_default_regime)
    regime_seeds: int = Field(default=100, ge=1)
    ridge: RidgeCurveSpec = Field(default_factory=_default_ridge)
    mc_lambdas: tuple[float, ...] = (1.0,)
    mc_replications: int = Field(default=2000, ge=2)
    experiment: RegularizationExperimentSpec = Field(default_factory=RegularizationExperimentSpec)
    run_experiment: bool = True


class OutputSection(_Section):
    directory: Path = Path("out")


class RunConfig(_Section):
    config_version: Literal[1] = CONFIG_VERSION
    data: DataSection
    model: ModelSection = ModelSection()
    chow_lin: ChowLinSettings = ChowLinSettings()
    elastic_net: ElasticNetSettings = ElasticNetSettings()
    gradient_boost: GradientBoostSettings = GradientBoostSettings()
    feedforward: FeedForwardSettings = FeedForwardSettings()
    evaluation: EvaluationSection = EvaluationSection()
    disaggregation: DisaggregationSection = DisaggregationSection()
    explain: ExplainSection = ExplainSection()
    theory: TheorySection = TheorySection()
    output: OutputSection = OutputSection()

    def regressor_spec(self, kind: RegressorKind, seed_offset: int = 0) -> RegressorSpec:
        return RegressorSpec(
            kind=kind,
            seed=self.model.seed + seed_offset,
            chow_lin=self.chow_lin,
            elastic_net=self.elastic_net,
            gradient_boost=self.gradient_boost,
            feedforward=self.feedforward,
        )

    def transform_spec(self) -> TransformSpec:
        return TransformSpec(kinds=self.data.transforms)

    def lag_spec(self, lag: int) -> LagSpec:
        return LagSpec(lag_count=lag)

    def window_protocol(self, workers: int = 1) -> WindowProtocol:
        return WindowProtocol(
            initial_ratio=self.evaluation.initial_ratio,
            initial_window=self.evaluation.initial_window,
            max_failed_fraction=self.evaluation.max_failed_fraction,
            workers=workers,
        )


def _resolve(base: Path, raw: dict[str, Any]) -> dict[str, Any]:
    """Makes relative path fields absolute with respect to `base`."""
    for section, key in (
        ("data", "path"),
        ("disaggregation", "benchmark_path"),
        ("output", "directory"),
    ):
        block = raw.get(section)
        if isinstance(block, dict) and isinstance(block.get(key), str):
            path = Path(block[key])
            block[key] = str(path if path.is_absolute() else base / path)
    return raw


def load_config(
    path: Path,
    *,
    seed: Optional[int] = None,
    out: Optional[Path] = None,
    country: Optional[str] = None,
) -> RunConfig:
    """
    Reads, resolves and validates a TOML run configuration.

    Raises:
        ConfigError: The file is unreadable, not TOML, or fails validation.
    """
    logger.info(f"Loading run configuration from {path}")
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"Could not read configuration file {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Configuration file {path} is not valid TOML: {e}") from e

    raw = _resolve(path.resolve().parent, raw)
    if seed is not None:
        raw.setdefault("model", {})["seed"] = seed
    if out is not None:
        raw.setdefault("output", {})["directory"] = str(out)
    if country is not None:
        raw.setdefault("data", {})["country"] = country

    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        where = " -> ".join(map(str, first["loc"]))
        logger.debug(f"Full configuration validation error:\n{e}")
        raise ConfigError(f"Configuration invalid at '{where}': {first['msg']}") from e
    logger.debug(f"Configuration validated: {config.model_dump(mode='json')}")
    return config


def worker_count() -> int:
    """Worker pool size from DISAGG_THREADS (default 1)."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError as e:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got '{raw}'.") from e
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got '{raw}'.")
    return value
