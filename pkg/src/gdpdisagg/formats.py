# ==============================================================================
# gdpdisagg.formats: Data Ingestion and Report Emission
#
# Reading: the master file is a monthly CSV with a DATE column, one column
# per indicator and a sparse GDP column populated only at quarter-end
# months. `load_master_csv` validates it in stages (file access, CSV
# parsing, calendar, cells, GDP layout) and raises a `ParseError` subclass
# carrying the path and, where it applies, the offending line number.
#
# Writing: every report is a CSV produced through pandas, whose default
# float formatting is the shortest representation that round-trips. The
# run manifest is a JSON document validated by pydantic.
# ==============================================================================

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from .errors import DataError, FileAccessError, InvalidFormatError
from .evaluate import DmRow, ExpandingWindowResult, SummaryRow
from .explain import Attribution
from .models import FitResult
from .preprocess import AdfReportRow
from .reconcile import BenchmarkComparison, ReconciledSeries
from .series import Frequency, Panel, Series, parse_period_label, period_label

logger = logging.getLogger(__name__)

# Line 1 of a CSV is the header, so data row i (0-based) sits on line i + 2.
_HEADER_LINES = 2


@dataclass(frozen=True, eq=False)
class MasterFile:
    """A validated master file: monthly indicators plus quarterly GDP."""

    path: Path
    indicators: Panel
    gdp_levels: Series
    gdp_growth: Series
    sha256: str


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _read_csv(path: Path) -> pd.DataFrame:
    logger.debug(f"Reading CSV content from {path}.")
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError as e:
        msg = "The specified file does not exist."
        logger.error(f"{msg} Path: {path}")
        raise FileAccessError(msg, path=path) from e
    except pd.errors.EmptyDataError as e:
        raise InvalidFormatError("The file is empty.", path=path) from e
    except pd.errors.ParserError as e:
        raise InvalidFormatError(f"The file is not a valid CSV document: {e}", path=path) from e
    except (OSError, UnicodeDecodeError) as e:
        msg = f"Could not read the file due to an OS-level error: {e}"
        logger.error(f"{msg} Path: {path}")
        raise FileAccessError(msg, path=path) from e


def _monthly_ordinals(frame: pd.DataFrame, column: str, path: Path) -> np.ndarray:
    """Parses DATE cells and checks they are unique, increasing and gap-free."""
    ordinals = np.empty(len(frame), dtype=np.int64)
    for i, text in enumerate(frame[column]):
        if not text.strip():
            raise InvalidFormatError(f"missing {column} value.", path=path, row=i + _HEADER_LINES)
        try:
            ordinals[i] = parse_period_label(text, Frequency.MONTHLY)
        except DataError as e:
            raise InvalidFormatError(
                f"{column} value '{text}' is not a first-of-month ISO date (yyyy-mm-01).",
                path=path,
                row=i + _HEADER_LINES,
            ) from e

    seen: set[int] = set()
    for i, ordinal in enumerate(ordinals):
        line = i + _HEADER_LINES
        if int(ordinal) in seen:
            raise InvalidFormatError(f"duplicate {column} '{frame[column].iloc[i]}'.", path=path, row=line)
        seen.add(int(ordinal))
        if i and ordinal < ordinals[i - 1]:
            raise InvalidFormatError(f"{column} not monotone: '{frame[column].iloc[i]}' precedes its predecessor.", path=path, row=line)
        if i and ordinal != ordinals[i - 1] + 1:
            raise InvalidFormatError(
                f"gap in {column}: '{frame[column].iloc[i]}' does not follow "
                f"'{frame[column].iloc[i - 1]}' by one month.",
                path=path,
                row=line,
            )
    return ordinals


def _numeric_column(frame: pd.DataFrame, column: str, path: Path, allow_blank: bool) -> np.ndarray:
    cells = frame[column].str.strip()
    values = pd.to_numeric(cells.replace("", np.nan), errors="coerce").to_numpy(dtype=np.float64)
    for i in np.flatnonzero(~np.isfinite(values)):
        if cells.iloc[i] == "":
            if allow_blank:
                continue
            raise InvalidFormatError(f"missing value in column '{column}'.", path=path, row=int(i) + _HEADER_LINES)
        raise InvalidFormatError(
            f"non-numeric value '{cells.iloc[i]}' in column '{column}'.",
            path=path,
            row=int(i) + _HEADER_LINES,
        )
    return values


def load_master_csv(
    filepath: str | Path,
    date_column: str = "DATE",
    gdp_column: str = "GDP",
    indicators: Optional[Sequence[str]] = None,
) -> MasterFile:
    """
    Parses and validates a master file.

    GDP growth is log(GDP_q) − log(GDP_{q−1}) between consecutive populated
    quarter ends, so n GDP quarters give n − 1 growth observations. Blank GDP
    cells are allowed before the first and after the last populated quarter.

    Raises:
        FileAccessError: The file cannot be found or read.
        InvalidFormatError: The content violates the schema; the message
                            carries the line number where one applies.
    """
    path = Path(filepath)
    logger.info(f"Initiating master file parse for: {path}")
    frame = _read_csv(path)
    frame.columns = [str(c).strip() for c in frame.columns]

    # --- Stage 1: Columns ---
    for required in (date_column, gdp_column):
        if required not in frame.columns:
            raise InvalidFormatError(f"missing required column '{required}'.", path=path)
    names = list(indicators) if indicators is not None else [c for c in frame.columns if c not in (date_column, gdp_column)]
    absent = [c for c in names if c not in frame.columns]
    if absent:
        raise InvalidFormatError(f"indicator column(s) not found: {absent}.", path=path)
    if not names:
        raise InvalidFormatError("the file holds no indicator columns.", path=path)
    if len(frame) == 0:
        raise InvalidFormatError("the file holds no data rows.", path=path)

    # --- Stage 2: Calendar ---
    months = _monthly_ordinals(frame, date_column, path)

    # --- Stage 3: Cells ---
    columns = {name: _numeric_column(frame, name, path, allow_blank=False) for name in names}
    gdp = _numeric_column(frame, gdp_column, path, allow_blank=True)

    # --- Stage 4: GDP layout ---
    present = np.flatnonzero(np.isfinite(gdp))
    for i in present:
        if months[i] % 3 != 2:
            raise InvalidFormatError(
                f"{gdp_column} value at {frame[date_column].iloc[i]} is not at a quarter-end month.",
                path=path,
                row=int(i) + _HEADER_LINES,
            )
        if gdp[i] <= 0.0:
            raise InvalidFormatError(f"{gdp_column} must be positive, got {gdp[i]}.", path=path, row=int(i) + _HEADER_LINES)
    if present.size < 2:
        raise InvalidFormatError(f"{gdp_column} needs at least two populated quarters.", path=path)
    quarter_ends = np.arange(present[0], present[-1] + 1, 3)
    missing = np.setdiff1d(quarter_ends, present)
    if missing.size:
        raise InvalidFormatError(
            f"{gdp_column} gap: quarter ending {frame[date_column].iloc[missing[0]]} is blank.",
            path=path,
            row=int(missing[0]) + _HEADER_LINES,
        )

    panel = Panel.from_columns(months, columns, Frequency.MONTHLY)
    quarters = months[present] // 3
    levels = Series(quarters, gdp[present], Frequency.QUARTERLY, gdp_column)
    logged = np.log(levels.values)
    growth = Series(quarters[1:], logged[1:] - logged[:-1], Frequency.QUARTERLY, gdp_column)
    logger.info(
        f"Validation successful. Found {len(panel)} months, {panel.n_columns} indicators, "
        f"{len(levels)} GDP quarters ({len(growth)} growth observations)."
    )
    return MasterFile(path, panel, levels, growth, sha256_file(path))


def load_monthly_series(filepath: str | Path, date_column: str, value_column: str) -> Series:
    """Reads a two-column monthly CSV such as an official benchmark index."""
    path = Path(filepath)
    frame = _read_csv(path)
    frame.columns = [str(c).strip() for c in frame.columns]
    for required in (date_column, value_column):
        if required not in frame.columns:
            raise InvalidFormatError(f"missing required column '{required}'.", path=path)
    months = _monthly_ordinals(frame, date_column, path)
    values = _numeric_column(frame, value_column, path, allow_blank=False)
    return Series(months, values, Frequency.MONTHLY, value_column)


# ==============================================================================
# Report Writers
# ==============================================================================


def _write(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    logger.debug(f"Wrote {len(frame)} row(s) to {path}")
    return path


def write_fit(path: Path, fit: FitResult) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(fit.to_json() + "\n", encoding="utf-8")
    return path


def write_adf(path: Path, rows: Sequence[AdfReportRow]) -> Path:
    return _write(
        pd.DataFrame(
            {
                "column": [r.column for r in rows],
                "statistic": [r.result.statistic if r.result else np.nan for r in rows],
                "lag_order": [r.result.lag_order if r.result else np.nan for r in rows],
                "critical_5pct": [r.result.critical_value if r.result else np.nan for r in rows],
                "p_value": [r.result.p_value if r.result else np.nan for r in rows],
                "decision": [r.result.decision.value if r.result else "" for r in rows],
                "note": [r.note for r in rows],
            }
        ),
        path,
    )


def write_predictions(
    path: Path, result: ExpandingWindowResult, country: str, model: str, lag: int
) -> Path:
    steps = result.steps
    return _write(
        pd.DataFrame(
            {
                "country": country,
                "model": model,
                "lag": lag,
                "date": [period_label(s.quarter, Frequency.QUARTERLY) for s in steps],
                "actual": [s.actual for s in steps],
                "prediction": [s.prediction for s in steps],
                "error": [s.actual - s.prediction for s in steps],
                "train_rows": [s.train_rows for s in steps],
                "failed": [s.failed for s in steps],
                "fingerprint": [s.fingerprint for s in steps],
            }
        ),
        path,
    )


@dataclass(frozen=True, eq=False)
class PredictionFile:
    country: str
    model: str
    lag: int
    errors: Series


def read_predictions(path: Path) -> PredictionFile:
    """Reads a file written by `write_predictions` back into an error series."""
    frame = _read_csv(path)
    expected = {"country", "model", "lag", "date", "error"}
    if not expected.issubset(frame.columns):
        raise InvalidFormatError(f"prediction file lacks columns {sorted(expected - set(frame.columns))}.", path=path)
    if len(frame) == 0:
        raise InvalidFormatError("prediction file holds no rows.", path=path)
    try:
        quarters = [parse_period_label(d, Frequency.QUARTERLY) for d in frame["date"]]
        lag = int(frame["lag"].iloc[0])
    except (DataError, ValueError) as e:
        raise InvalidFormatError(f"prediction file is malformed: {e}", path=path) from e
    errors = pd.to_numeric(frame["error"].replace("", np.nan), errors="coerce").to_numpy(dtype=np.float64)
    return PredictionFile(
        country=str(frame["country"].iloc[0]),
        model=str(frame["model"].iloc[0]),
        lag=lag,
        errors=Series(quarters, errors, Frequency.QUARTERLY, "error"),
    )


def _summary_frame(rows: Sequence[SummaryRow]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "Country": [r.country for r in rows],
            "Model": [r.model for r in rows],
            "Lag": [r.lag for r in rows],
            "RMSE": [r.metrics.rmse for r in rows],
            "MAE": [r.metrics.mae for r in rows],
            "R2": [r.metrics.r2 for r in rows],
            "Corr": [r.metrics.correlation for r in rows],
            "SignAcc": [r.metrics.sign_accuracy for r in rows],
            "N": [r.metrics.n for r in rows],
        }
    )


def write_summary(path: Path, rows: Sequence[SummaryRow]) -> Path:
    return _write(_summary_frame(rows), path)


def write_dm(path: Path, rows: Sequence[DmRow]) -> Path:
    return _write(
        pd.DataFrame(
            {
                "Country": [r.country for r in rows],
                "Lag": [r.lag for r in rows],
                "Model1": [r.model_1 for r in rows],
                "Model2": [r.model_2 for r in rows],
                "DM": [r.result.statistic for r in rows],
                "PValue": [r.result.p_value for r in rows],
                "Stars": [r.stars for r in rows],
                "Favors": [r.favors for r in rows],
                "Bandwidth": [r.result.bandwidth for r in rows],
                "Degenerate": [r.result.degenerate for r in rows],
                "N": [r.result.n for r in rows],
            }
        ),
        path,
    )


def write_monthly(
    path: Path,
    signal: Series,
    reconciled: ReconciledSeries,
    levels: Series,
    annualized: Series,
) -> Path:
    return _write(
        pd.DataFrame(
            {
                "date": reconciled.growth.labels,
                "signal": signal.values,
                "growth": reconciled.growth.values,
                "level": levels.values,
                "annualized": annualized.values,
                "constrained": reconciled.constrained,
            }
        ),
        path,
    )


def write_adjustment(path: Path, reconciled: ReconciledSeries) -> Path:
    diagnostics = reconciled.diagnostics
    return _write(
        pd.DataFrame(
            {
                "quarter": [period_label(int(q), Frequency.QUARTERLY) for q in diagnostics.quarters],
                "adjustment_factor": diagnostics.adjustment_factors,
            }
        ),
        path,
    )


def write_benchmark(path: Path, comparison: BenchmarkComparison) -> Path:
    return _write(
        pd.DataFrame(
            {
                "date": [period_label(int(m), Frequency.MONTHLY) for m in comparison.months],
                "estimate": comparison.estimate,
                "benchmark": comparison.benchmark,
            }
        ),
        path,
    )


def write_attribution(path: Path, attribution: Attribution, frequency: Frequency) -> Path:
    n, k = attribution.values.shape
    return _write(
        pd.DataFrame(
            {
                "date": np.repeat([period_label(int(o), frequency) for o in attribution.index], k),
                "feature": np.tile(attribution.columns, n),
                "phi": attribution.values.reshape(-1),
            }
        ),
        path,
    )


def write_ranking(path: Path, ranking: Sequence[tuple[str, float]]) -> Path:
    return _write(
        pd.DataFrame({"feature": [f for f, _ in ranking], "mean_abs_phi": [v for _, v in ranking]}),
        path,
    )


def write_table(path: Path, records: Sequence[dict[str, Any]]) -> Path:
    """Generic writer for small result tables given as row dicts."""
    return _write(pd.DataFrame.from_records(list(records)), path)


def read_table(path: Path) -> pd.DataFrame:
    """Reads any emitted CSV with numeric columns restored."""
    try:
        return pd.read_csv(path)
    except FileNotFoundError as e:
        raise FileAccessError("The specified file does not exist.", path=path) from e


# ==============================================================================
# Run Manifest
# ==============================================================================


class Manifest(BaseModel):
    """Everything needed to tell whether two runs produced the same outputs."""

    model_config = ConfigDict(extra="forbid")

    package_version: str
    config: dict[str, Any]
    seed: int
    input_sha256: Optional[str] = None
    outputs: dict[str, str] = {}
    completed_stages: list[str] = []
    failed_stage: Optional[str] = None
    error: Optional[str] = None
    warnings: list[str] = []

    def record_outputs(self, root: Path, paths: Sequence[Path]) -> None:
        for p in paths:
            self.outputs[p.relative_to(root).as_posix()] = sha256_file(p)


def write_manifest(path: Path, manifest: Manifest) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    ordered = manifest.model_copy(update={"outputs": dict(sorted(manifest.outputs.items()))})
    path.write_text(ordered.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path
