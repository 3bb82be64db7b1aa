# ==============================================================================
# gdpdisagg.series: Frequency-Aware Time-Series Containers
#
# The two containers defined here, `Series` and `Panel`, are the common
# currency of the whole package. Both carry an integer period index together
# with a declared frequency:
#
#   - monthly ordinal   = year * 12 + (month - 1)
#   - quarterly ordinal = year * 4 + (quarter - 1)
#
# Calendar arithmetic therefore never touches timezones or locales, and the
# quarter containing a monthly ordinal is simply `ordinal // 3`.
#
# Containers are immutable: arrays are copied on construction and flagged
# read-only, so instances can be shared freely across worker threads.
# ==============================================================================

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import AlignmentError, DataError, InsufficientHistoryError

logger = logging.getLogger(__name__)


class Frequency(str, Enum):
    MONTHLY = "monthly"
    QUARTERLY = "quarterly"


# ==============================================================================
# Calendar Helpers
# ==============================================================================


def month_ordinal(year: int, month: int) -> int:
    """Maps a calendar (year, month) pair onto a monthly ordinal."""
    if not 1 <= month <= 12:
        raise DataError(f"Month must lie in 1..12, got {month}.")
    return year * 12 + month - 1


def quarter_ordinal(year: int, quarter: int) -> int:
    """Maps a calendar (year, quarter) pair onto a quarterly ordinal."""
    if not 1 <= quarter <= 4:
        raise DataError(f"Quarter must lie in 1..4, got {quarter}.")
    return year * 4 + quarter - 1


def quarter_of_month(month: int) -> int:
    """Quarter number of a calendar month: ceil(month / 3)."""
    return (month + 2) // 3


def month_to_quarter(ordinal: int) -> int:
    """Quarterly ordinal of the quarter containing a monthly ordinal."""
    return ordinal // 3


def period_label(ordinal: int, frequency: Frequency) -> str:
    """
    Human-readable label for a period ordinal.

    Months render as ISO dates on the first of the month (`2008-10-01`),
    quarters as `2008Q4`.
    """
    if frequency is Frequency.MONTHLY:
        year, month0 = divmod(int(ordinal), 12)
        return f"{year:04d}-{month0 + 1:02d}-01"
    year, quarter0 = divmod(int(ordinal), 4)
    return f"{year:04d}Q{quarter0 + 1}"


def parse_period_label(label: str, frequency: Frequency) -> int:
    """Inverse of `period_label`."""
    text = label.strip()
    try:
        if frequency is Frequency.MONTHLY:
            year, month = int(text[0:4]), int(text[5:7])
            if len(text) != 10 or text[4] != "-" or text[7:] != "-01":
                raise ValueError(text)
            return month_ordinal(year, month)
        year, quarter = int(text[0:4]), int(text[5:])
        if text[4] != "Q":
            raise ValueError(text)
        return quarter_ordinal(year, quarter)
    except (ValueError, IndexError) as e:
        raise DataError(f"Cannot parse {frequency.value} period label '{label}'.") from e


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _check_index(index: np.ndarray) -> None:
    if index.ndim != 1:
        raise DataError("Period index must be one-dimensional.")
    if index.size > 1 and not np.all(np.diff(index) == 1):
        raise DataError(
            "Period index must be strictly increasing without gaps at the "
            "declared frequency."
        )


# ==============================================================================
# Containers
# ==============================================================================


@dataclass(frozen=True, eq=False)
class Series:
    """A univariate series on a gap-free monthly or quarterly index."""

    index: np.ndarray
    values: np.ndarray
    frequency: Frequency
    name: str = "value"

    def __post_init__(self) -> None:
        index = np.array(self.index, dtype=np.int64)
        values = np.array(self.values, dtype=np.float64)
        _check_index(index)
        if values.ndim != 1 or values.shape[0] != index.shape[0]:
            raise DataError(
                f"Series '{self.name}' has {values.shape} values for "
                f"{index.shape[0]} periods."
            )
        object.__setattr__(self, "index", _frozen(index))
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "frequency", Frequency(self.frequency))

    @classmethod
    def from_start(
        cls,
        start: int,
        values: Sequence[float] | np.ndarray,
        frequency: Frequency,
        name: str = "value",
    ) -> "Series":
        """Builds a series whose first period is the ordinal `start`."""
        n = len(values)
        return cls(np.arange(start, start + n), np.asarray(values), frequency, name)

    def __len__(self) -> int:
        return int(self.index.shape[0])

    @property
    def labels(self) -> list[str]:
        return [period_label(o, self.frequency) for o in self.index]

    def slice(self, start: int, stop: Optional[int] = None) -> "Series":
        """Positional, contiguous slice."""
        return Series(
            self.index[start:stop], self.values[start:stop], self.frequency, self.name
        )

    def with_values(self, values: np.ndarray, name: Optional[str] = None) -> "Series":
        return Series(self.index, values, self.frequency, name or self.name)


@dataclass(frozen=True, eq=False)
class Panel:
    """A multivariate panel of named columns sharing one period index."""

    index: np.ndarray
    columns: tuple[str, ...]
    data: np.ndarray
    frequency: Frequency

    def __post_init__(self) -> None:
        index = np.array(self.index, dtype=np.int64)
        columns = tuple(str(c) for c in self.columns)
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 1 and len(columns) == 1:
            data = data.reshape(-1, 1)
        if data.size == 0 and data.ndim < 2:
            data = data.reshape(index.shape[0], len(columns))
        _check_index(index)
        if data.ndim != 2 or data.shape != (index.shape[0], len(columns)):
            raise DataError(
                f"Panel data shape {data.shape} does not match "
                f"{index.shape[0]} periods x {len(columns)} columns."
            )
        if len(set(columns)) != len(columns):
            duplicated = sorted({c for c in columns if columns.count(c) > 1})
            raise DataError(f"Panel column names must be unique: {duplicated}.")
        object.__setattr__(self, "index", _frozen(index))
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "frequency", Frequency(self.frequency))

    @classmethod
    def from_columns(
        cls,
        index: Iterable[int] | np.ndarray,
        columns: Mapping[str, Sequence[float] | np.ndarray],
        frequency: Frequency,
    ) -> "Panel":
        names = tuple(columns)
        index_array = np.asarray(list(index), dtype=np.int64)
        if not names:
            return cls(index_array, (), np.empty((index_array.shape[0], 0)), frequency)
        data = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
        return cls(index_array, names, data, frequency)

    def __len__(self) -> int:
        return int(self.index.shape[0])

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    @property
    def labels(self) -> list[str]:
        return [period_label(o, self.frequency) for o in self.index]

    def column(self, name: str) -> Series:
        try:
            j = self.columns.index(name)
        except ValueError as e:
            raise DataError(f"Panel has no column '{name}'.") from e
        return Series(self.index, self.data[:, j], self.frequency, name)

    def select(self, columns: Sequence[str]) -> "Panel":
        missing = [c for c in columns if c not in self.columns]
        if missing:
            raise DataError(f"Panel has no columns {missing}.")
        positions = [self.columns.index(c) for c in columns]
        return Panel(self.index, tuple(columns), self.data[:, positions], self.frequency)

    def slice(self, start: int, stop: Optional[int] = None) -> "Panel":
        """Positional, contiguous row slice."""
        return Panel(
            self.index[start:stop], self.columns, self.data[start:stop], self.frequency
        )

    def with_data(
        self, data: np.ndarray, columns: Optional[Sequence[str]] = None
    ) -> "Panel":
        return Panel(
            self.index,
            tuple(columns) if columns is not None else self.columns,
            data,
            self.frequency,
        )


class LagSpec(BaseModel):
    """Number of quarterly lags appended to every indicator."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    lag_count: int = Field(default=0, ge=0)


@dataclass(frozen=True, eq=False)
class SampleSplit:
    """The two sides of a chronological train/test split."""

    train_x: Panel
    train_y: Series
    test_x: Panel
    test_y: Series


# ==============================================================================
# Alignment Primitives
# ==============================================================================


def lag_column_name(column: str, lag: int) -> str:
    return f"{column}_lag{lag}"


def _lagged(panel: Panel, spec: LagSpec, shift: int) -> Panel:
    lags = spec.lag_count
    if lags == 0:
        return panel
    drop = lags * shift
    if drop >= len(panel):
        raise InsufficientHistoryError(
            f"insufficient history: {lags} lag(s) need more than {drop} rows, "
            f"panel has {len(panel)}."
        )
    blocks = [panel.data[drop:]]
    names = list(panel.columns)
    for j in range(1, lags + 1):
        start = drop - j * shift
        blocks.append(panel.data[start : len(panel) - j * shift])
        names.extend(lag_column_name(c, j) for c in panel.columns)
    return Panel(panel.index[drop:], tuple(names), np.hstack(blocks), panel.frequency)


def add_lags(panel: Panel, spec: LagSpec) -> Panel:
    """
    Appends `spec.lag_count` quarterly lags of every column.

    The output keeps the original columns first, followed by `<col>_lag1`
    for every column, then `<col>_lag2`, and so on. The first `lag_count`
    rows, which would hold missing lagged values, are dropped.

    Raises:
        DataError: If the panel is not quarterly.
        InsufficientHistoryError: If `lag_count` is not smaller than the
                                  number of rows.
    """
    if panel.frequency is not Frequency.QUARTERLY:
        raise DataError("add_lags expects a quarterly panel.")
    return _lagged(panel, spec, shift=1)


def monthly_lags(panel: Panel, spec: LagSpec) -> Panel:
    """
    Monthly counterpart of `add_lags`: lag j is the value one quarter
    (three months) per lag earlier, so a quarterly fit with lagged
    regressors can be evaluated on monthly indicators.
    """
    if panel.frequency is not Frequency.MONTHLY:
        raise DataError("monthly_lags expects a monthly panel.")
    return _lagged(panel, spec, shift=3)


def align(panel: Panel, series: Series) -> tuple[Panel, Series]:
    """Restricts a panel and a series to their shared contiguous index."""
    if panel.frequency is not series.frequency:
        raise AlignmentError(
            f"Cannot align a {panel.frequency.value} panel with a "
            f"{series.frequency.value} series."
        )
    if len(panel) == 0 or len(series) == 0:
        raise AlignmentError("Cannot align empty inputs.")
    start = max(int(panel.index[0]), int(series.index[0]))
    stop = min(int(panel.index[-1]), int(series.index[-1]))
    if start > stop:
        raise AlignmentError("Panel and series do not overlap.")
    p0 = start - int(panel.index[0])
    s0 = start - int(series.index[0])
    n = stop - start + 1
    return panel.slice(p0, p0 + n), series.slice(s0, s0 + n)


def initial_window_size(n_rows: int, ratio: float) -> int:
    """ceil(ratio * n_rows), guarded against floating-point overshoot."""
    if not 0.0 < ratio < 1.0:
        raise DataError(f"Split ratio must lie strictly between 0 and 1, got {ratio}.")
    return math.ceil(ratio * n_rows - 1e-9)


def split_train_test(panel: Panel, target: Series, ratio: float) -> SampleSplit:
    """
    Chronological split: the first ceil(ratio * N) rows train, the rest test.

    Raises:
        AlignmentError: If panel and target indices differ.
        DataError: If the ratio is outside (0, 1) or either side is empty.
    """
    if len(panel) != len(target) or not np.array_equal(panel.index, target.index):
        raise AlignmentError("Panel and target must share the same index to split.")
    n = len(panel)
    n_train = initial_window_size(n, ratio)
    if n_train <= 0 or n_train >= n:
        raise DataError(
            f"Split of {n} rows at ratio {ratio} leaves an empty side "
            f"(train={n_train}, test={n - n_train})."
        )
    logger.debug(f"Splitting {n} rows into {n_train} train / {n - n_train} test.")
    return SampleSplit(
        train_x=panel.slice(0, n_train),
        train_y=target.slice(0, n_train),
        test_x=panel.slice(n_train),
        test_y=target.slice(n_train),
    )
