# ==============================================================================
# tests.conftest: Centralized Test Fixtures for `gdpdisagg`
#
# Shared fixtures used across the suite. Everything numerical is generated
# from fixed seeds so that every test sees the same "golden" data:
#
#   - `panel_factory`: synthetic monthly or quarterly panels;
#   - `linear_design`: a quarterly design with a known linear target;
#   - `write_master`: writes a master CSV (DATE, indicators, sparse GDP);
#   - `write_config`: writes a TOML run configuration pointing at it.
# ==============================================================================

from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
import pandas as pd
import pytest

from gdpdisagg.series import Frequency, Panel, Series, month_ordinal, quarter_ordinal


@pytest.fixture(scope="session")
def project_root() -> Path:
    """A session-scoped fixture that returns the project's root directory."""
    return Path(__file__).parent.parent


@pytest.fixture(scope="session")
def samples_dir(project_root: Path) -> Path:
    """Provides the path to the directory containing sample data files."""
    return project_root / "samples"


@pytest.fixture(scope="function")
def panel_factory() -> Callable[..., Panel]:
    """
    Provides a factory for Gaussian panels.

    Quarterly panels start in 2000Q1, monthly panels in 2000-01.
    """

    def _factory(
        n_rows: int,
        n_columns: int = 3,
        frequency: Frequency = Frequency.QUARTERLY,
        seed: int = 0,
        prefix: str = "x",
    ) -> Panel:
        rng = np.random.default_rng(seed)
        start = quarter_ordinal(2000, 1) if frequency is Frequency.QUARTERLY else month_ordinal(2000, 1)
        return Panel(
            np.arange(start, start + n_rows),
            tuple(f"{prefix}{j}" for j in range(n_columns)),
            rng.standard_normal((n_rows, n_columns)),
            frequency,
        )

    return _factory


@pytest.fixture(scope="function")
def linear_design(panel_factory: Callable[..., Panel]) -> tuple[Panel, Series, np.ndarray]:
    """
    A 60-quarter design with y = 0.5 + Xβ + 0.1ε and β = (1, −0.5, 0.25).
    """
    x = panel_factory(60, 3, seed=11)
    beta = np.array([1.0, -0.5, 0.25])
    noise = np.random.default_rng(12).standard_normal(60)
    y = Series(x.index, 0.5 + x.data @ beta + 0.1 * noise, Frequency.QUARTERLY, "gdp")
    return x, y, beta


def synthetic_master_frame(n_months: int = 72, seed: int = 3) -> pd.DataFrame:
    """
    Monthly indicators driven by a common growth signal, with flow GDP
    summed over each quarter and written at quarter-end months only.
    """
    rng = np.random.default_rng(seed)
    m = np.arange(n_months)
    g = 0.002 + 0.004 * np.sin(0.7 * m) + 0.002 * np.cos(1.3 * m)
    ip = 100.0 * np.exp(np.cumsum(g + 0.001 * rng.standard_normal(n_months)))
    emp = 50.0 * np.exp(np.cumsum(0.5 * g + 0.0007 * rng.standard_normal(n_months)))
    spread = 1.5 + np.sin(0.3 * m) + 0.05 * rng.standard_normal(n_months)
    latent = 1000.0 * np.exp(np.cumsum(g))
    gdp = np.full(n_months, np.nan)
    for end in range(2, n_months, 3):
        gdp[end] = latent[end - 2 : end + 1].sum()
    dates = [f"{2010 + k // 12:04d}-{k % 12 + 1:02d}-01" for k in m]
    return pd.DataFrame({"DATE": dates, "IP": ip, "EMP": emp, "SPREAD": spread, "GDP": gdp})


@pytest.fixture(scope="function")
def master_frame() -> Callable[..., pd.DataFrame]:
    """Provides `synthetic_master_frame` as a factory fixture."""
    return synthetic_master_frame


@pytest.fixture(scope="function")
def write_master(tmp_path: Path) -> Callable[..., Path]:
    """
    A factory fixture writing a master CSV to a temporary directory.

    Pass `frame` to write an arbitrary DataFrame, or `text` for raw content.
    """

    def _writer(
        frame: Optional[pd.DataFrame] = None,
        text: Optional[str] = None,
        filename: str = "master.csv",
        n_months: int = 72,
    ) -> Path:
        path = tmp_path / filename
        if text is not None:
            path.write_text(text, encoding="utf-8")
        else:
            (frame if frame is not None else synthetic_master_frame(n_months)).to_csv(path, index=False)
        return path

    return _writer


_LIGHT_CONFIG = """\
config_version = 1

[data]
path = "{master}"
country = "test"
adf_max_lag = 2

[data.transforms]
IP = "log_diff"
EMP = "log_diff"
SPREAD = "level"

[model]
regressors = {regressors}
lags = {lags}
seed = 5

[elastic_net]
folds = 3
n_alphas = 15
l1_ratios = [0.5, 1.0]

[gradient_boost]
folds = 3
max_depth = [2]
learning_rate = [0.1]
n_trees = [20]
subsample = [1.0]
reg_lambda = [1.0]
min_child_weight = [1.0]

[feedforward]
trials = 2
max_units = 8
max_epochs = 30
patience = 5

[disaggregation]
regressor = "{final}"
lag = {final_lag}
mode = "{mode}"
bootstrap_replications = {bootstrap}

[explain]
mode = "exact"
top = 3

[theory]
regime_seeds = 3
mc_replications = 50
run_experiment = false

[theory.regime]
beta_normal = [0.0]
beta_crisis = [2.0]
crisis_prob = 0.5
normal_mean = [1.0]
crisis_mean = [1.0]
n = 2000

[output]
directory = "{out}"
"""


@pytest.fixture(scope="function")
def write_config(tmp_path: Path, write_master: Callable[..., Path]) -> Callable[..., Path]:
    """
    A factory fixture writing a light TOML configuration next to a fresh
    synthetic master file. Keyword arguments override template fields.
    """

    def _writer(extra: str = "", **overrides: Any) -> Path:
        fields: dict[str, Any] = {
            "master": write_master().as_posix(),
            "regressors": '["chow_lin", "elastic_net"]',
            "lags": "[0, 1]",
            "final": "elastic_net",
            "final_lag": 1,
            "mode": "ma5",
            "bootstrap": 0,
            "out": (tmp_path / "out").as_posix(),
        }
        fields.update(overrides)
        path = tmp_path / "config.toml"
        path.write_text(_LIGHT_CONFIG.format(**fields) + extra, encoding="utf-8")
        return path

    return _writer
