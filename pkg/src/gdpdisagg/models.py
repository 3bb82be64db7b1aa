# ==============================================================================
# gdpdisagg.models: Shared Contracts for the Regression Back Ends
#
# Every regression back end (Chow-Lin, Elastic Net, gradient-boosted trees,
# feedforward network) consumes a `RegressorSpec` and produces a `FitResult`.
# The FitResult is a versioned, JSON-serializable record: prediction is a
# pure function of it, so a fit can be archived, reloaded and replayed
# bit-for-bit.
# ==============================================================================

import hashlib
from enum import Enum
from typing import Any, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .errors import ColumnMismatchError, DataError
from .series import Frequency, Panel, Series

FIT_SCHEMA_VERSION = 1


class RegressorKind(str, Enum):
    CHOW_LIN = "chow_lin"
    ELASTIC_NET = "elastic_net"
    GRADIENT_BOOST = "gradient_boost"
    FEEDFORWARD = "feedforward"


# ==============================================================================
# Per-Backend Settings
# ==============================================================================


class ChowLinSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    rho_lower: float = Field(default=-0.999, gt=-1.0)
    rho_upper: float = Field(default=0.999, lt=1.0)
    grid_points: int = Field(default=41, ge=3)
    xatol: float = Field(default=1e-10, gt=0.0)
    # Pins ρ instead of estimating it (ρ = 0 reduces GLS to OLS).
    fixed_rho: Optional[float] = Field(default=None, gt=-1.0, lt=1.0)


class ElasticNetSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    folds: int = Field(default=5, ge=2)
    l1_ratios: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9, 0.95, 0.99, 1.0)
    n_alphas: int = Field(default=100, ge=1)
    alpha_min_ratio: float = Field(default=1e-4, gt=0.0, lt=1.0)
    tol: float = Field(default=1e-10, gt=0.0)
    max_sweeps: int = Field(default=10_000, ge=1)
    bootstrap_replications: int = Field(default=5_000, ge=1)
    interval: tuple[float, float] = (2.5, 97.5)

    @field_validator("l1_ratios")
    @classmethod
    def ratios_in_unit_interval(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if not v or any(not 0.0 < r <= 1.0 for r in v):
            raise ValueError("l1_ratios must be a non-empty set of values in (0, 1].")
        return v


class GradientBoostSettings(BaseModel):
    """Grid axes; the default product has 3*4*3*3*2*2 = 432 combinations."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    folds: int = Field(default=5, ge=2)
    max_depth: tuple[int, ...] = (2, 3, 4)
    learning_rate: tuple[float, ...] = (0.01, 0.05, 0.1, 0.3)
    n_trees: tuple[int, ...] = (100, 300, 500)
    subsample: tuple[float, ...] = (0.7, 0.85, 1.0)
    reg_lambda: tuple[float, ...] = (0.0, 1.0)
    min_child_weight: tuple[float, ...] = (1.0, 3.0)


class FeedForwardSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    trials: int = Field(default=100, ge=1, le=100)
    max_layers: int = Field(default=2, ge=1, le=2)
    min_units: int = Field(default=8, ge=1)
    max_units: int = Field(default=128, ge=1, le=128)
    activations: tuple[str, ...] = ("relu", "tanh", "elu", "selu", "swish")
    max_dropout: float = Field(default=0.5, ge=0.0, lt=1.0)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = Field(default=1e-8, gt=0.0)
    max_epochs: int = Field(default=1000, ge=1)
    patience: int = Field(default=50, ge=1)
    validation_fraction: float = Field(default=0.2, gt=0.0, lt=1.0)


class RegressorSpec(BaseModel):
    """Which back end to run, its search space, and the seed fixing all randomness."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: RegressorKind
    seed: int = Field(default=0, ge=0)
    chow_lin: ChowLinSettings = ChowLinSettings()
    elastic_net: ElasticNetSettings = ElasticNetSettings()
    gradient_boost: GradientBoostSettings = GradientBoostSettings()
    feedforward: FeedForwardSettings = FeedForwardSettings()


# ==============================================================================
# The Fit Record
# ==============================================================================


class FitResult(BaseModel):
    """
    A fitted model behind the shared regressor interface.

    `state` holds the learned numbers as plain (nested) lists of floats so
    the record serializes to JSON without loss: coefficients for the linear
    models, node arrays for the tree ensemble, layer weights for the network.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    schema_version: Literal[1] = FIT_SCHEMA_VERSION
    kind: RegressorKind
    columns: tuple[str, ...]
    hyperparameters: dict[str, Any]
    state: dict[str, Any]
    seed: int
    fingerprint: str
    design_frequency: Frequency
    warnings: tuple[str, ...] = ()

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FitResult":
        return cls.model_validate_json(text)

    def array(self, key: str) -> np.ndarray:
        return np.asarray(self.state[key], dtype=np.float64)


def fingerprint(x: Panel, y: Optional[Series] = None) -> str:
    """SHA-256 over exactly the rows a model was allowed to see."""
    digest = hashlib.sha256()
    digest.update("|".join(x.columns).encode("utf-8"))
    digest.update(np.ascontiguousarray(x.index).tobytes())
    digest.update(np.ascontiguousarray(x.data).tobytes())
    if y is not None:
        digest.update(np.ascontiguousarray(y.index).tobytes())
        digest.update(np.ascontiguousarray(y.values).tobytes())
    return digest.hexdigest()


def contiguous_folds(n_rows: int, folds: int) -> list[np.ndarray]:
    """Unshuffled K-fold partition of row positions, in time order."""
    if folds < 2:
        raise DataError(f"Cross-validation needs at least 2 folds, got {folds}.")
    if n_rows < folds:
        raise DataError(f"Cannot split {n_rows} rows into {folds} folds.")
    return np.array_split(np.arange(n_rows), folds)


def check_columns(fit: FitResult, x: Panel) -> None:
    """Prediction design must match the training columns, names and order."""
    if tuple(x.columns) == tuple(fit.columns):
        return
    missing = [c for c in fit.columns if c not in x.columns]
    extra = [c for c in x.columns if c not in fit.columns]
    raise ColumnMismatchError(missing=missing, extra=extra)
