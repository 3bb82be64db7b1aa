# ==============================================================================
# gdpdisagg.boosting: Gradient-Boosted Regression Trees
#
# Stagewise squared-loss boosting with second-order split gains:
#
#   - the ensemble starts from the training mean (base score);
#   - each round fits a depth-limited tree to gradients g = ŷ − y and unit
#     hessians, on a row subsample drawn without replacement;
#   - a split is kept when gain = ½[G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)]
#     is positive and both children carry at least `min_child_weight`;
#   - leaves predict −G/(H+λ), shrunk by the learning rate.
#
# Trees are stored as flat node arrays so a fit serializes to JSON.
# ==============================================================================

import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError
from .models import (
    FitResult,
    GradientBoostSettings,
    RegressorKind,
    RegressorSpec,
    contiguous_folds,
    fingerprint,
)
from .series import Frequency, Panel, Series

logger = logging.getLogger(__name__)

_MIN_GAIN = 1e-12
_ZERO_GRADIENT = 1e-14


@dataclass(frozen=True)
class BoostParams:
    max_depth: int
    learning_rate: float
    n_trees: int
    subsample: float = 1.0
    reg_lambda: float = 0.0
    min_child_weight: float = 1.0

    def as_dict(self) -> dict[str, float]:
        return {
            "max_depth": self.max_depth,
            "learning_rate": self.learning_rate,
            "n_trees": self.n_trees,
            "subsample": self.subsample,
            "reg_lambda": self.reg_lambda,
            "min_child_weight": self.min_child_weight,
        }


@dataclass
class Ensemble:
    """Flat node storage; `roots[t]` is the first node of tree t, leaves have feature −1."""

    base_score: float
    learning_rate: float
    roots: list[int] = field(default_factory=list)
    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def add_leaf(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def to_state(self) -> dict[str, object]:
        return {
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "roots": list(self.roots),
            "feature": list(self.feature),
            "threshold": list(self.threshold),
            "left": list(self.left),
            "right": list(self.right),
            "value": list(self.value),
        }


def _best_split(
    x: np.ndarray, g: np.ndarray, h: np.ndarray, params: BoostParams
) -> Optional[tuple[int, float, float]]:
    """Best (feature, threshold, gain) over all features at once."""
    n = x.shape[0]
    if n < 2:
        return None
    order = np.argsort(x, axis=0, kind="stable")
    xs = np.take_along_axis(x, order, axis=0)
    gl = np.cumsum(g[order], axis=0)[:-1]
    hl = np.cumsum(h[order], axis=0)[:-1]
    g_total, h_total = float(g.sum()), float(h.sum())
    gr, hr = g_total - gl, h_total - hl
    lam = params.reg_lambda
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = 0.5 * (
            gl**2 / (hl + lam) + gr**2 / (hr + lam) - g_total**2 / (h_total + lam)
        )
    ok = (
        (xs[:-1] < xs[1:])
        & (hl >= params.min_child_weight)
        & (hr >= params.min_child_weight)
        & np.isfinite(gain)
    )
    gain = np.where(ok, gain, -np.inf)
    flat = int(np.argmax(gain))
    i, j = divmod(flat, x.shape[1])
    if not gain[i, j] > _MIN_GAIN:
        return None
    return j, float(0.5 * (xs[i, j] + xs[i + 1, j])), float(gain[i, j])


def _grow(
    ensemble: Ensemble,
    x: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    rows: np.ndarray,
    depth: int,
    params: BoostParams,
) -> int:
    """
    Grows one subtree over `rows` depth-first and returns its node id.

    The node is written as a leaf first and turned into a split afterwards,
    so a branch that stops early is already a valid leaf.
    """
    g_sum, h_sum = float(g[rows].sum()), float(h[rows].sum())
    node = ensemble.add_leaf(-g_sum / (h_sum + params.reg_lambda))
    if depth >= params.max_depth:
        return node
    split = _best_split(x[rows], g[rows], h[rows], params)
    if split is None:
        return node
    feature, threshold, _gain = split
    goes_left = x[rows, feature] <= threshold
    left = _grow(ensemble, x, g, h, rows[goes_left], depth + 1, params)
    right = _grow(ensemble, x, g, h, rows[~goes_left], depth + 1, params)
    ensemble.feature[node] = feature
    ensemble.threshold[node] = threshold
    ensemble.left[node] = left
    ensemble.right[node] = right
    return node


def _tree_output(
    data: np.ndarray,
    root: int,
    feature: np.ndarray,
    threshold: np.ndarray,
    left: np.ndarray,
    right: np.ndarray,
    value: np.ndarray,
) -> np.ndarray:
    """Routes every row of `data` down one tree at once."""
    node = np.full(data.shape[0], root, dtype=np.int64)
    rows = np.arange(data.shape[0])
    while True:
        f = feature[node]
        inner = f >= 0
        if not inner.any():
            return value[node]
        r, n = rows[inner], node[inner]
        goes_left = data[r, f[inner]] <= threshold[n]
        node[inner] = np.where(goes_left, left[n], right[n])


def boost(
    x: np.ndarray,
    y: np.ndarray,
    params: BoostParams,
    seed: int,
    checkpoints: tuple[int, ...] = (),
    x_eval: Optional[np.ndarray] = None,
) -> tuple[Ensemble, dict[int, np.ndarray]]:
    """
    Runs the boosting loop.

    When `x_eval` is given, its predictions after each round listed in
    `checkpoints` are returned too, so one run scores several ensemble sizes.

    Args:
        x: Training design.
        y: Training target.
        params: One point of the grid.
        seed: Drives the row subsample of every round.
        checkpoints: Ensemble sizes at which `x_eval` predictions are kept.
        x_eval: Optional held-out design.

    Returns:
        The ensemble and a map from checkpoint size to held-out predictions.
    """
    n = x.shape[0]
    rng = np.random.default_rng(seed)
    ensemble = Ensemble(base_score=float(y.mean()), learning_rate=params.learning_rate)
    pred = np.full(n, ensemble.base_score)
    eval_pred = None if x_eval is None else np.full(x_eval.shape[0], ensemble.base_score)
    staged: dict[int, np.ndarray] = {}
    hess = np.ones(n)
    n_rows = max(1, int(round(params.subsample * n)))

    def record(t: int) -> None:
        if eval_pred is not None and t in checkpoints:
            staged[t] = eval_pred.copy()

    for t in range(1, params.n_trees + 1):
        grad = pred - y
        # A perfect fit grows no further trees; later checkpoints repeat the last state.
        if np.max(np.abs(grad)) < _ZERO_GRADIENT:
            for rest in range(t, params.n_trees + 1):
                record(rest)
            break
        if n_rows < n:
            rows = np.sort(rng.choice(n, size=n_rows, replace=False))
        else:
            rows = np.arange(n)
        root = _grow(ensemble, x, grad, hess, rows, 0, params)
        ensemble.roots.append(root)
        arrays = _node_arrays(ensemble)
        pred += params.learning_rate * _tree_output(x, root, *arrays)
        if eval_pred is not None and x_eval is not None:
            eval_pred += params.learning_rate * _tree_output(x_eval, root, *arrays)
        record(t)
    return ensemble, staged


def _node_arrays(
    ensemble: Ensemble,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    return (
        np.asarray(ensemble.feature, dtype=np.int64),
        np.asarray(ensemble.threshold, dtype=np.float64),
        np.asarray(ensemble.left, dtype=np.int64),
        np.asarray(ensemble.right, dtype=np.int64),
        np.asarray(ensemble.value, dtype=np.float64),
    )


def predict_array(fit: FitResult, data: np.ndarray, frequency: Frequency) -> np.ndarray:
    """Replays a stored ensemble. Trees are frequency-agnostic, so `frequency` is unused."""
    state = fit.state
    arrays = (
        np.asarray(state["feature"], dtype=np.int64),
        np.asarray(state["threshold"], dtype=np.float64),
        np.asarray(state["left"], dtype=np.int64),
        np.asarray(state["right"], dtype=np.int64),
        np.asarray(state["value"], dtype=np.float64),
    )
    out = np.full(data.shape[0], float(state["base_score"]))
    rate = float(state["learning_rate"])
    for root in state["roots"]:
        out += rate * _tree_output(data, int(root), *arrays)
    return out


# ==============================================================================
# Grid Search and Fitting
# ==============================================================================


def grid(settings: GradientBoostSettings) -> list[BoostParams]:
    """Cartesian product of the grid axes, in declaration order."""
    return [
        BoostParams(d, lr, t, s, lam, mcw)
        for d, lr, t, s, lam, mcw in itertools.product(
            settings.max_depth,
            settings.learning_rate,
            settings.n_trees,
            settings.subsample,
            settings.reg_lambda,
            settings.min_child_weight,
        )
    ]


def _check_inputs(x: Panel, y: Series, folds: int) -> None:
    if len(x) != len(y) or not np.array_equal(x.index, y.index):
        raise DataError("Design and target must share the same index.")
    if len(y) < folds:
        raise DataError(f"Gradient boosting needs at least {folds} rows for {folds}-fold CV, got {len(y)}.")
    if not np.all(np.isfinite(x.data)) or not np.all(np.isfinite(y.values)):
        raise DataError("Gradient boosting inputs contain missing values.")


def search(x: Panel, y: Series, spec: RegressorSpec) -> dict[str, float]:
    """
    K-fold CV over the grid. Ensemble sizes sharing every other axis are
    scored from one boosting run at the largest size. Ties go to the lower
    MSE, then fewer trees, then shallower trees, then grid order.

    Args:
        x: Training design.
        y: Training target.
        spec: Carries the grid, the fold count and the seed. Fold f uses `seed + f`.

    Returns:
        The chosen hyperparameters plus their `cv_mse`.

    Raises:
        DataError: Misaligned inputs, missing values or too few rows.
    """
    settings = spec.gradient_boost
    _check_inputs(x, y, settings.folds)
    folds = contiguous_folds(len(y), settings.folds)
    sizes = tuple(sorted(settings.n_trees))
    candidates = grid(settings)
    position = {c: i for i, c in enumerate(candidates)}
    sq_error: dict[BoostParams, float] = {c: 0.0 for c in candidates}

    # --- One boosting run per grid point with the tree count left out ---
    shapes = {
        BoostParams(c.max_depth, c.learning_rate, sizes[-1], c.subsample, c.reg_lambda, c.min_child_weight)
        for c in candidates
    }
    for shape in sorted(shapes, key=lambda s: tuple(s.as_dict().values())):
        for f, held_out in enumerate(folds):
            keep = np.setdiff1d(np.arange(len(y)), held_out)
            _, staged = boost(
                x.data[keep],
                y.values[keep],
                shape,
                spec.seed + f,
                checkpoints=sizes,
                x_eval=x.data[held_out],
            )
            for size in sizes:
                member = BoostParams(
                    shape.max_depth, shape.learning_rate, size, shape.subsample, shape.reg_lambda, shape.min_child_weight
                )
                err = float(np.sum((y.values[held_out] - staged[size]) ** 2))
                sq_error[member] += err / len(y)

    # --- Tie-break: lower CV MSE, fewer trees, shallower trees, grid order ---
    best = min(
        candidates,
        key=lambda c: (sq_error[c], c.n_trees, c.max_depth, position[c]),
    )
    chosen = {**best.as_dict(), "cv_mse": sq_error[best]}
    logger.info(f"Gradient boosting CV selected {best} (MSE {sq_error[best]:.4e})")
    return chosen


def fit_fixed(
    x: Panel, y: Series, spec: RegressorSpec, hyperparameters: dict[str, float]
) -> FitResult:
    """
    Boosts one ensemble with already chosen hyperparameters on all rows.

    Missing `subsample`, `reg_lambda` and `min_child_weight` take the plain
    boosting defaults (1, 0, 1).

    Raises:
        DataError: Misaligned inputs or missing values.
    """
    _check_inputs(x, y, 1)
    params = BoostParams(
        max_depth=int(hyperparameters["max_depth"]),
        learning_rate=float(hyperparameters["learning_rate"]),
        n_trees=int(hyperparameters["n_trees"]),
        subsample=float(hyperparameters.get("subsample", 1.0)),
        reg_lambda=float(hyperparameters.get("reg_lambda", 0.0)),
        min_child_weight=float(hyperparameters.get("min_child_weight", 1.0)),
    )
    ensemble, _ = boost(x.data, y.values, params, spec.seed)
    logger.debug(f"Boosted {len(ensemble.roots)} tree(s), {len(ensemble.value)} node(s)")
    return FitResult(
        kind=RegressorKind.GRADIENT_BOOST,
        columns=x.columns,
        hyperparameters=dict(hyperparameters),
        state=ensemble.to_state(),
        seed=spec.seed,
        fingerprint=fingerprint(x, y),
        design_frequency=x.frequency,
    )


def fit_gradient_boost(
    x: Panel, y: Series, folds: Optional[int] = None, spec: Optional[RegressorSpec] = None
) -> FitResult:
    """Grid search followed by a refit on every row; `folds` overrides the configured count."""
    spec = spec or RegressorSpec(kind=RegressorKind.GRADIENT_BOOST)
    if folds is not None:
        spec = spec.model_copy(
            update={"gradient_boost": spec.gradient_boost.model_copy(update={"folds": folds})}
        )
    return fit_fixed(x, y, spec, search(x, y, spec))
