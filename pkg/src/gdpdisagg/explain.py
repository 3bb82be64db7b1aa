# ==============================================================================
# gdpdisagg.explain: Shapley Attributions for Any Fitted Regressor
#
# The value of a coalition S for observation x is the mean prediction over
# background rows b of the hybrid point taking x on S and b elsewhere
# (interventional, not conditional). Two estimators:
#
#   - exact: enumerate all 2^k coalitions (k ≤ 15);
#   - sampled: average marginal contributions over seeded feature
#     permutations, evaluated in chunks.
#
# Both only call the FitResult's prediction function, so every back end is
# explained the same way.
# ==============================================================================

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from . import regressors
from .errors import DataError
from .models import FitResult, check_columns
from .series import Frequency, Panel

logger = logging.getLogger(__name__)

MAX_EXACT_FEATURES = 15
DEFAULT_BACKGROUND_CAP = 100
_CHUNK_ROWS = 200_000


class ShapleyMode(str, Enum):
    EXACT = "exact"
    SAMPLED = "sampled"


@dataclass(frozen=True, eq=False)
class Attribution:
    index: np.ndarray
    columns: tuple[str, ...]
    values: np.ndarray
    base_value: float
    predictions: np.ndarray

    def local_accuracy_gap(self) -> float:
        """max_i |φ₀ + Σ_j φ_ij − f(x_i)|."""
        return float(np.max(np.abs(self.base_value + self.values.sum(axis=1) - self.predictions)))


def thin_background(panel: Panel, cap: int = DEFAULT_BACKGROUND_CAP) -> np.ndarray:
    """At most `cap` rows, evenly spaced over the panel, first and last included."""
    if len(panel) == 0:
        raise DataError("Background panel is empty.")
    if cap < 1:
        raise DataError(f"Background cap must be positive, got {cap}.")
    if len(panel) <= cap:
        return panel.data.copy()
    positions = np.unique(np.round(np.linspace(0, len(panel) - 1, cap)).astype(np.int64))
    return panel.data[positions]


def _hybrid_values(
    fit: FitResult,
    x: np.ndarray,
    background: np.ndarray,
    include: np.ndarray,
    frequency: Frequency,
) -> np.ndarray:
    """
    Coalition values for masks `include` (m, k): returns (m, n) means over
    the background.
    """
    m, k = include.shape
    n, b = x.shape[0], background.shape[0]
    hybrid = np.where(
        include[:, None, None, :], x[None, :, None, :], background[None, None, :, :]
    )
    preds = regressors.predict_rows(fit, hybrid.reshape(-1, k), frequency)
    return preds.reshape(m, n, b).mean(axis=2)


def _exact(fit: FitResult, x: Panel, background: np.ndarray) -> tuple[np.ndarray, float]:
    k = x.n_columns
    masks = np.arange(1 << k)
    bits = ((masks[:, None] >> np.arange(k)[None, :]) & 1).astype(bool)
    per_chunk = max(1, _CHUNK_ROWS // max(1, len(x) * background.shape[0]))
    values = np.vstack(
        [
            _hybrid_values(fit, x.data, background, bits[i : i + per_chunk], x.frequency)
            for i in range(0, masks.size, per_chunk)
        ]
    )
    sizes = bits.sum(axis=1)
    weights = np.array(
        [math.factorial(s) * math.factorial(k - s - 1) / math.factorial(k) for s in range(k)]
    )
    phi = np.zeros((len(x), k))
    for j in range(k):
        without = masks[~bits[:, j]]
        delta = values[without | (1 << j)] - values[without]
        phi[:, j] = weights[sizes[without]] @ delta
    return phi, float(values[0, 0])


def _sampled(
    fit: FitResult, x: Panel, background: np.ndarray, permutations: int, seed: int
) -> tuple[np.ndarray, float]:
    k = x.n_columns
    rng = np.random.default_rng(seed)
    orders = np.array([rng.permutation(k) for _ in range(permutations)])
    ranks = np.argsort(orders, axis=1)
    steps = np.arange(k + 1)
    per_chunk = max(1, _CHUNK_ROWS // max(1, (k + 1) * len(x) * background.shape[0]))
    phi = np.zeros((len(x), k))
    base = math.nan
    for start in range(0, permutations, per_chunk):
        chunk_ranks = ranks[start : start + per_chunk]
        p = chunk_ranks.shape[0]
        include = chunk_ranks[:, None, :] < steps[None, :, None]
        values = _hybrid_values(fit, x.data, background, include.reshape(-1, k), x.frequency)
        values = values.reshape(p, k + 1, len(x))
        if math.isnan(base):
            base = float(values[0, 0, 0])
        deltas = values[:, 1:, :] - values[:, :-1, :]
        for q in range(p):
            phi[:, orders[start + q]] += deltas[q].T
    return phi / permutations, base


def shapley_attributions(
    fit: FitResult,
    x: Panel,
    background: Panel,
    mode: ShapleyMode = ShapleyMode.EXACT,
    seed: int = 0,
    permutations: int = 1000,
    background_cap: int = DEFAULT_BACKGROUND_CAP,
) -> Attribution:
    """
    Per-observation Shapley values φ with base value φ₀ = mean background prediction.

    Raises:
        DataError: Exact mode with more than 15 features (use sampled mode),
                   or an empty background.
    """
    check_columns(fit, x)
    check_columns(fit, background)
    rows = thin_background(background, background_cap)
    if mode is ShapleyMode.EXACT and x.n_columns > MAX_EXACT_FEATURES:
        raise DataError(
            f"Exact Shapley enumeration is limited to {MAX_EXACT_FEATURES} features, "
            f"got {x.n_columns}; use sampled mode."
        )
    if permutations < 1:
        raise DataError(f"Sampled mode needs at least one permutation, got {permutations}.")
    logger.info(
        f"Shapley ({mode.value}) for {fit.kind.value}: {len(x)} observation(s), "
        f"{x.n_columns} feature(s), {rows.shape[0]} background row(s)"
    )
    if mode is ShapleyMode.EXACT:
        phi, base = _exact(fit, x, rows)
    else:
        phi, base = _sampled(fit, x, rows, permutations, seed)
    predictions = regressors.predict_array(fit, x)
    return Attribution(x.index.copy(), x.columns, phi, base, predictions)


def rank_features(attribution: Attribution, top: Optional[int] = 10) -> list[tuple[str, float]]:
    """Features by mean |φ|, largest first; ties broken by name."""
    scores = np.mean(np.abs(attribution.values), axis=0)
    ranking = sorted(zip(attribution.columns, (float(s) for s in scores)), key=lambda t: (-t[1], t[0]))
    return ranking if top is None else ranking[:top]
