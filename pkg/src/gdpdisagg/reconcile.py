# ==============================================================================
# gdpdisagg.reconcile: Making Monthly Signals Consistent with Quarterly GDP
#
# Two reconciliation modes share the diagnostics and output type:
#
#   - `ma5` (default): quarterly growth is tied to monthly growth through the
#     five-term moving average z_q = ⅓y_m + ⅔y_{m−1} + y_{m−2} + ⅔y_{m−3} + ⅓y_{m−4},
#     m the quarter's last month. The preliminary signal ỹ is moved by the
#     smallest Euclidean adjustment satisfying My = z.
#   - `denton`: every month of a quarter is scaled by the common factor that
#     makes the three-month sum hit the quarterly total.
#
# Reconciled growth is turned into index levels and an annualized rate here
# as well, together with an optional comparison against an official monthly
# series.
# ==============================================================================

import logging
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import (
    AlignmentError,
    DataError,
    DegenerateConstraintsError,
    ProportionalScalingError,
)
from .series import Frequency, Series, period_label

logger = logging.getLogger(__name__)

# Weights on months m, m−1, m−2, m−3, m−4.
MA5_WEIGHTS: tuple[Fraction, ...] = (
    Fraction(1, 3),
    Fraction(2, 3),
    Fraction(1),
    Fraction(2, 3),
    Fraction(1, 3),
)
_WEIGHTS = np.array([float(w) for w in MA5_WEIGHTS])
_WINDOW = len(MA5_WEIGHTS)


class ReconcileMode(str, Enum):
    MA5 = "ma5"
    DENTON = "denton"


@dataclass(frozen=True, eq=False)
class ConstraintSystem:
    """
    Stacked MA(5) constraints.

    `quarter_ends` holds 1-based month positions of the constrained quarters'
    last months; `quarters` holds their quarterly ordinals when the system was
    built from calendar data.
    """

    matrix: np.ndarray
    quarter_ends: tuple[int, ...]
    targets: Optional[np.ndarray] = None
    quarters: Optional[np.ndarray] = None
    first_month: Optional[int] = None

    @property
    def n_months(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def n_constraints(self) -> int:
        return int(self.matrix.shape[0])

    def with_targets(self, targets: Sequence[float] | np.ndarray) -> "ConstraintSystem":
        z = np.asarray(targets, dtype=np.float64)
        if z.shape != (self.n_constraints,):
            raise DataError(
                f"Expected {self.n_constraints} constraint targets, got {z.shape[0]}."
            )
        return ConstraintSystem(self.matrix, self.quarter_ends, z, self.quarters, self.first_month)

    def constrained_months(self) -> np.ndarray:
        """True for months entering at least one constraint window."""
        return np.any(self.matrix != 0.0, axis=0)


@dataclass(frozen=True, eq=False)
class ReconcileDiagnostics:
    quarters: np.ndarray
    adjustment_factors: np.ndarray
    violation_before: float
    violation_after: float
    adjustment_norm: float


@dataclass(frozen=True, eq=False)
class ReconciledSeries:
    growth: Series
    constrained: np.ndarray
    diagnostics: ReconcileDiagnostics
    mode: ReconcileMode


# ==============================================================================
# Constraint Construction
# ==============================================================================


def exact_row(quarter_end: int, n_months: int) -> list[Fraction]:
    """Constraint row in rational arithmetic, for exactness checks."""
    row = [Fraction(0)] * n_months
    for lag, weight in enumerate(MA5_WEIGHTS):
        row[quarter_end - 1 - lag] = weight
    return row


def build_constraint_matrix(n_months: int, quarter_ends: Sequence[int]) -> ConstraintSystem:
    """
    Builds M for 1-based quarter-end months.

    Quarters ending before month 5 have no complete MA(5) window and are left
    out, so M has one row per quarter with m ≥ 5.

    Raises:
        DataError: "no constrainable quarter" when T < 5 or every quarter ends
                   before month 5; ends not increasing by 3 or out of range.
    """
    if n_months < _WINDOW:
        raise DataError(f"no constrainable quarter: {n_months} month(s) < {_WINDOW}.")
    ends = [int(m) for m in quarter_ends]
    if any(b - a != 3 for a, b in zip(ends, ends[1:])):
        raise DataError(f"Quarter ends must increase in steps of 3, got {ends}.")
    if ends and (ends[0] < 1 or ends[-1] > n_months):
        raise DataError(f"Quarter ends {ends} fall outside months 1..{n_months}.")
    kept = tuple(m for m in ends if m >= _WINDOW)
    if not kept:
        raise DataError("no constrainable quarter: every quarter ends before month 5.")
    matrix = np.zeros((len(kept), n_months))
    for row, m in enumerate(kept):
        matrix[row, m - _WINDOW : m] = _WEIGHTS[::-1]
    return ConstraintSystem(matrix, kept)


def build_constraint_system(months: np.ndarray, targets: Series) -> ConstraintSystem:
    """
    Places quarterly growth targets on a monthly index by calendar.

    Target quarters whose last month lies outside the index, or whose window
    would start before the first month, are not constrained.
    """
    if targets.frequency is not Frequency.QUARTERLY:
        raise AlignmentError("Reconciliation targets must be quarterly.")
    months = np.asarray(months, dtype=np.int64)
    if months.size == 0:
        raise DataError("no constrainable quarter: empty monthly index.")
    first = int(months[0])
    ends = 3 * targets.index + 2 - first + 1
    inside = (ends >= _WINDOW) & (ends <= months.size)
    dropped = int(np.count_nonzero(~inside))
    if dropped:
        logger.debug(f"{dropped} target quarter(s) fall outside the constrainable range.")
    if not inside.any():
        raise DataError("no constrainable quarter: no target falls inside the monthly index.")
    skeleton = build_constraint_matrix(months.size, [int(m) for m in ends[inside]])
    return ConstraintSystem(
        skeleton.matrix,
        skeleton.quarter_ends,
        np.asarray(targets.values[inside], dtype=np.float64),
        targets.index[inside].copy(),
        first,
    )


# ==============================================================================
# Reconciliation
# ==============================================================================


def _require_targets(system: ConstraintSystem) -> np.ndarray:
    if system.targets is None:
        raise DataError("Constraint system has no targets attached.")
    return system.targets


def reconcile_min_norm(tilde_y: Series, system: ConstraintSystem) -> Series:
    """
    ŷ = ỹ + M'(MM')⁻¹(z − Mỹ), the solution of min ‖y − ỹ‖² s.t. My = z.

    Raises:
        DegenerateConstraintsError: MM' is singular.
    """
    z = _require_targets(system)
    if len(tilde_y) != system.n_months:
        raise AlignmentError(
            f"Signal has {len(tilde_y)} months, constraint system expects {system.n_months}."
        )
    m = system.matrix
    if np.linalg.matrix_rank(m) < m.shape[0]:
        raise DegenerateConstraintsError("degenerate constraints: M does not have full row rank.")
    try:
        factor = cho_factor(m @ m.T, lower=True)
    except LinAlgError as e:
        raise DegenerateConstraintsError("degenerate constraints: MM' is singular.") from e
    gap = z - m @ tilde_y.values
    return tilde_y.with_values(tilde_y.values + m.T @ cho_solve(factor, gap))


def adjustment_factors(tilde_y: Series, system: ConstraintSystem) -> np.ndarray:
    """k_q = z_q / (Mỹ)_q; NaN where the aggregate is zero."""
    z = _require_targets(system)
    aggregate = system.matrix @ tilde_y.values
    factors = np.full(z.shape, np.nan)
    ok = aggregate != 0.0
    factors[ok] = z[ok] / aggregate[ok]
    return factors


def _quarter_sums(values: np.ndarray, start: int, n_quarters: int) -> np.ndarray:
    return values[start : start + 3 * n_quarters].reshape(n_quarters, 3).sum(axis=1)


def denton_proportional(tilde_y: Series, quarterly_totals: Series) -> Series:
    """
    Scales each targeted quarter's months by k_q = total / Σ ỹ.

    Months of quarters without a target, or only partly inside the monthly
    index, pass through unchanged.

    Raises:
        ProportionalScalingError: A targeted quarter's monthly sum is zero.
    """
    values, _, _ = _denton(tilde_y, quarterly_totals)
    return tilde_y.with_values(values)


def _denton(
    tilde_y: Series, totals: Series
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if tilde_y.frequency is not Frequency.MONTHLY or totals.frequency is not Frequency.QUARTERLY:
        raise AlignmentError("Denton scaling needs a monthly signal and quarterly totals.")
    values = tilde_y.values.copy()
    first = int(tilde_y.index[0]) if len(tilde_y) else 0
    factors = np.full(len(totals), np.nan)
    constrained = np.zeros(len(tilde_y), dtype=bool)
    for i, (quarter, total) in enumerate(zip(totals.index, totals.values)):
        start = 3 * int(quarter) - first
        if start < 0 or start + 3 > len(tilde_y):
            continue
        block = values[start : start + 3]
        current = float(block.sum())
        if current == 0.0:
            raise ProportionalScalingError(
                f"proportional scaling undefined: months of {period_label(int(quarter), Frequency.QUARTERLY)} sum to zero."
            )
        factors[i] = total / current
        values[start : start + 3] = block * factors[i]
        constrained[start : start + 3] = True
    return values, factors, constrained


def reconcile(tilde_y: Series, targets: Series, mode: ReconcileMode = ReconcileMode.MA5) -> ReconciledSeries:
    """Reconciles a monthly signal in the requested mode and reports diagnostics."""
    if tilde_y.frequency is not Frequency.MONTHLY:
        raise AlignmentError("Reconciliation expects a monthly signal.")
    if not np.all(np.isfinite(tilde_y.values)):
        raise DataError("Monthly signal contains missing values.")

    if mode is ReconcileMode.MA5:
        system = build_constraint_system(tilde_y.index, targets)
        z = _require_targets(system)
        before = float(np.max(np.abs(system.matrix @ tilde_y.values - z)))
        factors = adjustment_factors(tilde_y, system)
        hat = reconcile_min_norm(tilde_y, system)
        after = float(np.max(np.abs(system.matrix @ hat.values - z)))
        quarters = system.quarters if system.quarters is not None else np.arange(z.size)
        constrained = system.constrained_months()
    else:
        values, factors, constrained = _denton(tilde_y, targets)
        hat = tilde_y.with_values(values)
        kept = np.isfinite(factors)
        quarters = targets.index[kept]
        factors = factors[kept]
        first = int(tilde_y.index[0])
        starts = 3 * quarters - first
        z = targets.values[kept]
        before = float(np.max(np.abs(np.array([tilde_y.values[s : s + 3].sum() for s in starts]) - z), initial=0.0))
        after = float(np.max(np.abs(np.array([values[s : s + 3].sum() for s in starts]) - z), initial=0.0))

    if after >= 1e-9:
        logger.warning(f"Reconciled constraints violated by {after:.3e}.")
    unconstrained = int(np.count_nonzero(~constrained))
    if unconstrained:
        logger.info(f"{unconstrained} month(s) are not covered by any constraint.")
    diagnostics = ReconcileDiagnostics(
        quarters=np.asarray(quarters, dtype=np.int64),
        adjustment_factors=np.asarray(factors, dtype=np.float64),
        violation_before=before,
        violation_after=after,
        adjustment_norm=float(np.linalg.norm(hat.values - tilde_y.values)),
    )
    return ReconciledSeries(hat, constrained, diagnostics, mode)


# ==============================================================================
# Levels, Annualization and Benchmarks
# ==============================================================================


def recover_levels(hat_y: Series, base_level: float) -> Series:
    """Level_m = Level_{m−1} · exp(ŷ_m), starting from `base_level` before the first month."""
    if not base_level > 0.0 or not np.isfinite(base_level):
        raise DataError(f"Base level must be positive and finite, got {base_level}.")
    if not np.all(np.isfinite(hat_y.values)):
        raise DataError("Cannot recover levels from non-finite growth values.")
    return hat_y.with_values(base_level * np.cumprod(np.exp(hat_y.values)), name="level")


def annualize(hat_y: Series) -> Series:
    """
    400 × the MA(5)-weighted sum of monthly growth; NaN for the first four months.

    Raises:
        DataError: Fewer than five observations.
    """
    y = hat_y.values
    if y.size < _WINDOW:
        raise DataError(f"Annualization needs at least {_WINDOW} observations, got {y.size}.")
    out = np.full(y.size, np.nan)
    out[4:] = (
        (y[4:] + y[:-4]) + 2.0 * (y[3:-1] + y[1:-3]) + 3.0 * y[2:-2]
    ) * (400.0 / 3.0)
    return hat_y.with_values(out, name="annualized")


def rebase_index(levels: Series, reference: int, value: float = 100.0) -> Series:
    """Rescales levels so the reference month (ordinal) equals `value`."""
    position = reference - int(levels.index[0])
    if not 0 <= position < len(levels):
        raise AlignmentError(
            f"Reference {period_label(reference, levels.frequency)} is outside the series."
        )
    anchor = float(levels.values[position])
    if anchor == 0.0 or not np.isfinite(anchor):
        raise DataError("Cannot rebase on a zero or missing reference value.")
    return levels.with_values(levels.values * (value / anchor))


@dataclass(frozen=True, eq=False)
class BenchmarkComparison:
    months: np.ndarray
    estimate: np.ndarray
    benchmark: np.ndarray
    correlation: float


def compare_benchmark(
    levels: Series, benchmark: Series, reference: Optional[int] = None
) -> BenchmarkComparison:
    """
    Rebases both series to 100 at `reference` (default: first shared month)
    and correlates them over the shared months.
    """
    shared = np.intersect1d(levels.index, benchmark.index)
    if shared.size < 2:
        raise AlignmentError("Estimate and benchmark share fewer than two months.")
    anchor = int(shared[0]) if reference is None else reference
    ours = rebase_index(levels, anchor)
    theirs = rebase_index(benchmark, anchor)
    a = ours.values[shared - int(levels.index[0])]
    b = theirs.values[shared - int(benchmark.index[0])]
    if np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        correlation = float("nan")
    else:
        correlation = float(np.corrcoef(a, b)[0, 1])
    logger.info(f"Benchmark correlation over {shared.size} months: {correlation:.4f}")
    return BenchmarkComparison(shared, a, b, correlation)
