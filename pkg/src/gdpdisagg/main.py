# ==============================================================================
# gdpdisagg.main: The Command-Line Interface
#
# This module defines the user-facing command-line interface for `gdpdisagg`
# using the Typer framework. It is the sole entry point for user interaction.
#
# Its responsibilities are:
#   1. Define the subcommands and their shared options.
#   2. Load the run configuration and hand it to `core.run_pipeline`.
#   3. Install logging and present results and errors with `rich`.
#   4. Map failures onto exit codes: 1 for invalid inputs or configuration,
#      2 for runtime failures during estimation.
#
# This layer contains no numerical logic.
# ==============================================================================

import logging
import sys
import time
from pathlib import Path
from typing import Annotated, Optional, Sequence

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table
from rich.theme import Theme
from rich.traceback import install as install_rich_traceback

try:
    from . import __version__, core
    from .config import load_config, worker_count
    from .errors import DataError, DisaggError
    from .formats import read_table
except ImportError:
    print(
        "Fatal Error: `gdpdisagg` could not be run.\n"
        "This file is part of a package and cannot be executed directly.\n"
        "Please install `gdpdisagg` properly, e.g., `pip install -e .`"
    )
    sys.exit(1)


# ==============================================================================
# Initialization and Configuration
# ==============================================================================

custom_theme = Theme(
    {
        "info": "dim cyan",
        "warning": "yellow",
        "error": "bold red",
        "success": "bold green",
        "title": "bold magenta",
        "path": "bold cyan",
        "stage": "bold yellow",
        "dim": "dim",
    }
)

console = Console(theme=custom_theme)

install_rich_traceback(show_locals=False, extra_lines=1, console=console)

app = typer.Typer(
    name="gdpdisagg",
    help="Monthly GDP from quarterly accounts: regression, reconciliation and evaluation.",
    add_completion=False,
    no_args_is_help=True,
    rich_markup_mode="rich",
    context_settings={"help_option_names": ["-h", "--help"]},
)

EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

ConfigOption = Annotated[
    Path,
    typer.Option(
        "--config",
        "-c",
        help="Path to the TOML run configuration.",
        exists=True,
        file_okay=True,
        dir_okay=False,
        readable=True,
        resolve_path=True,
    ),
]
SeedOption = Annotated[
    Optional[int],
    typer.Option("--seed", help="Override the base random seed.", min=0),
]
OutOption = Annotated[
    Optional[Path],
    typer.Option("--out", "-o", help="Override the output directory.", resolve_path=True),
]
CountryOption = Annotated[
    Optional[str],
    typer.Option("--country", help="Override the country label used for output paths."),
]
VerboseOption = Annotated[
    bool,
    typer.Option("--verbose", help="Show debug-level log records."),
]


# ==============================================================================
# Private Helper Functions
# ==============================================================================


def _setup_logging(verbose: bool) -> None:
    """Routes package log records through a single RichHandler."""
    root = logging.getLogger("gdpdisagg")
    root.handlers.clear()
    root.addHandler(RichHandler(console=console, show_path=False, markup=False, rich_tracebacks=True))
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    root.propagate = False


def _print_summary_table(output_dir: Path) -> None:
    path = output_dir / "summary.csv"
    if not path.exists():
        return
    frame = read_table(path)
    table = Table(title="[title]Out-of-Sample Accuracy[/title]", header_style="info")
    for column in ("Model", "Lag", "RMSE", "MAE", "R2", "Corr", "SignAcc", "N"):
        table.add_column(column, justify="left" if column == "Model" else "right")
    for row in frame.itertuples(index=False):
        table.add_row(
            str(row.Model),
            str(row.Lag),
            f"{row.RMSE:.4f}",
            f"{row.MAE:.4f}",
            f"{row.R2:.3f}",
            f"{row.Corr:.3f}",
            f"{row.SignAcc:.3f}",
            str(row.N),
        )
    console.print(table)


def _print_result(result: core.PipelineResult) -> None:
    table = Table.grid(expand=True, padding=(0, 2))
    table.add_column(style="info", no_wrap=True)
    table.add_column()
    table.add_row("Stages:", ", ".join(f"[stage]{s}[/stage]" for s in result["completed"]))
    table.add_row("Outputs:", f"{len(result['outputs']):,} file(s)")
    table.add_row("Directory:", f"[path]{result['output_dir']}[/path]")
    table.add_row("Manifest:", f"[path]{result['manifest_path'].name}[/path]")
    console.print(Panel(table, title="[title]Run Summary[/title]", border_style="success", padding=(1, 2)))

    if "evaluate" in result["completed"]:
        _print_summary_table(result["output_dir"])
    for warning in result["warnings"]:
        console.print(f"[warning]! {warning}[/warning]")


def _execute(
    stages: Sequence[str],
    config_path: Path,
    seed: Optional[int],
    out: Optional[Path],
    country: Optional[str],
    verbose: bool,
) -> None:
    """Shared body of every subcommand."""
    _setup_logging(verbose)
    console.print(
        Panel(
            f"[info]Running[/info] {' → '.join(stages)}\n   Config: [path]{config_path}[/path]",
            title="[bold]gdpdisagg[/bold]",
            expand=False,
            border_style="info",
        )
    )
    start_time = time.perf_counter()
    try:
        config = load_config(config_path, seed=seed, out=out, country=country)
        workers = worker_count()
        with console.status("[bold green]Working...[/bold green]", spinner="dots"):
            result = core.run_pipeline(config, stages, workers=workers)
        _print_result(result)
    except DataError as e:
        console.print(
            Panel(
                f"[error]Invalid Input[/error]\n\n[yellow]{e}[/yellow]",
                title="[error]Error[/error]",
                border_style="error",
            )
        )
        raise typer.Exit(code=EXIT_VALIDATION) from e
    except DisaggError as e:
        console.print(
            Panel(
                f"[error]Run Failed[/error]\n\n[yellow]{e}[/yellow]",
                title="[error]Error[/error]",
                border_style="error",
            )
        )
        raise typer.Exit(code=EXIT_RUNTIME) from e
    except Exception as e:
        console.print(
            Panel(
                "[error]An unexpected critical error occurred.[/error]\nSee traceback below for details.",
                title="[error]Critical Error[/error]",
                border_style="error",
            )
        )
        console.print_exception(show_locals=False)
        raise typer.Exit(code=EXIT_RUNTIME) from e
    finally:
        duration = time.perf_counter() - start_time
        console.print(f"[dim]Finished in {duration:.3f} seconds.[/dim]", justify="right")


def _version_callback(value: bool) -> None:
    if value:
        console.print(f"gdpdisagg version: [bold cyan]{__version__}[/bold cyan]")
        raise typer.Exit()


# ==============================================================================
# CLI Commands
# ==============================================================================


@app.command(name="preprocess", help="Validate the master file, screen unit roots, build the quarterly design.")
def preprocess(
    config: ConfigOption,
    seed: SeedOption = None,
    out: OutOption = None,
    country: CountryOption = None,
    verbose: VerboseOption = False,
) -> None:
    _execute(["preprocess"], config, seed, out, country, verbose)


@app.command(name="evaluate", help="Expanding-window evaluation of every regressor x lag cell.")
def evaluate(
    config: ConfigOption,
    seed: SeedOption = None,
    out: OutOption = None,
    country: CountryOption = None,
    verbose: VerboseOption = False,
) -> None:
    _execute(["evaluate"], config, seed, out, country, verbose)


@app.command(name="disaggregate", help="Refit on the full sample and produce reconciled monthly GDP.")
def disaggregate(
    config: ConfigOption,
    seed: SeedOption = None,
    out: OutOption = None,
    country: CountryOption = None,
    verbose: VerboseOption = False,
) -> None:
    _execute(["disaggregate"], config, seed, out, country, verbose)


@app.command(name="dm", help="Pairwise Diebold-Mariano tests from existing prediction files.")
def dm(
    config: ConfigOption,
    seed: SeedOption = None,
    out: OutOption = None,
    country: CountryOption = None,
    verbose: VerboseOption = False,
) -> None:
    _execute(["dm"], config, seed, out, country, verbose)


@app.command(name="explain", help="Shapley attributions for the final model.")
def explain(
    config: ConfigOption,
    seed: SeedOption = None,
    out: OutOption = None,
    country: CountryOption = None,
    verbose: VerboseOption = False,
) -> None:
    _execute(["explain"], config, seed, out, country, verbose)


@app.command(name="theory", help="Monte Carlo checks of regime bias and the ridge MSE curve.")
def theory(
    config: ConfigOption,
    seed: SeedOption = None,
    out: OutOption = None,
    country: CountryOption = None,
    verbose: VerboseOption = False,
) -> None:
    _execute(["theory"], config, seed, out, country, verbose)


@app.command(name="all", help="Run every stage in order.")
def run_all(
    config: ConfigOption,
    seed: SeedOption = None,
    out: OutOption = None,
    country: CountryOption = None,
    verbose: VerboseOption = False,
) -> None:
    _execute(list(core.ALL_STAGES), config, seed, out, country, verbose)


@app.callback()
def main_callback(
    version: Annotated[
        Optional[bool],
        typer.Option(
            "--version",
            "-v",
            help="Show the application's version and exit.",
            callback=_version_callback,
            is_eager=True,
        ),
    ] = None,
) -> None:
    """
    gdpdisagg: monthly GDP estimates consistent with quarterly national accounts.
    """
    pass


if __name__ == "__main__":  # pragma: no cover
    app()
