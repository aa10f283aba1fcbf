import functools
import logging
from pathlib import Path
from typing import List, Optional

import typer
from rich.console import Console
from rich.logging import RichHandler

from exceptions import LensError
from experiment import service
from experiment.loader import defaults_toml, load_config
from experiment.service import Experiment
from report.service import build_report, verify as verify_manifest
from settings import settings

app = typer.Typer(add_completion=False, no_args_is_help=True,
                  help="Training-geometry diagnostics for low-rank pre-training methods.")
console = Console(stderr=True)

ConfigArg = typer.Argument(..., help="Experiment TOML file")
MethodOpt = typer.Option(None, "--method", "-m", help="Restrict to these methods")
SizeOpt = typer.Option(None, "--size", "-s", help="Restrict to these model sizes")


@app.callback()
def setup(verbose: bool = typer.Option(False, "--verbose", "-v")):
    logging.basicConfig(level="DEBUG" if verbose else settings.log_level.upper(),
                        format="%(message)s", datefmt="[%X]",
                        handlers=[RichHandler(console=console, show_path=False)],
                        force=True)


def handle_errors(command):
    """Maps LensError onto its exit code after printing the detail."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except LensError as err:
            console.print(f"{type(err).__name__}: {err.detail}", style="bold red", markup=False)
            raise typer.Exit(code=err.exit_code)

    return wrapper


def run_metric(config: Path, command, **kwargs):
    experiment = Experiment.load(config)
    try:
        return command(experiment, **kwargs)
    finally:
        experiment.close()


@app.command()
@handle_errors
def train(config: Path = ConfigArg, method: Optional[List[str]] = MethodOpt,
          size: Optional[List[str]] = SizeOpt):
    """Train the selected runs and write their checkpoints."""
    records = run_metric(config, service.cmd_train, methods=method, sizes=size)
    console.print(f"trained {len(records)} runs")


@app.command()
@handle_errors
def landscape(config: Path = ConfigArg, method: Optional[List[str]] = MethodOpt,
              size: Optional[List[str]] = SizeOpt):
    """Random-direction loss landscapes of every checkpoint."""
    rows = run_metric(config, service.cmd_landscape, methods=method, sizes=size)
    console.print(f"{len(rows)} landscape rows")


@app.command()
@handle_errors
def pca(config: Path = ConfigArg, method: Optional[List[str]] = MethodOpt,
        size: Optional[List[str]] = SizeOpt):
    """Loss landscapes along top singular directions."""
    rows = run_metric(config, service.cmd_pca, methods=method, sizes=size)
    console.print(f"{len(rows)} pca rows")


@app.command()
@handle_errors
def interp(config: Path = ConfigArg, method: Optional[List[str]] = MethodOpt,
           size: Optional[List[str]] = SizeOpt):
    """Consecutive-checkpoint and inter-method barrier heights."""
    ccbh_rows, imbh_rows = run_metric(config, service.cmd_interp, methods=method, sizes=size)
    console.print(f"{len(ccbh_rows)} ccbh rows, {len(imbh_rows)} imbh rows")


@app.command()
@handle_errors
def spectra(config: Path = ConfigArg, method: Optional[List[str]] = MethodOpt,
            size: Optional[List[str]] = SizeOpt):
    """Singular-value statistics of weights and updates."""
    rows = run_metric(config, service.cmd_spectra, methods=method, sizes=size)
    console.print(f"{len(rows)} spectra rows")


@app.command()
@handle_errors
def activations(config: Path = ConfigArg, method: Optional[List[str]] = MethodOpt,
                size: Optional[List[str]] = SizeOpt):
    """Hidden-state deviation from the reference method."""
    rows = run_metric(config, service.cmd_activations, methods=method, sizes=size)
    console.print(f"{len(rows)} activation rows")


@app.command()
@handle_errors
def predict(config: Path = ConfigArg,
            targets: Optional[Path] = typer.Option(None, help="method,size,step,target CSV"),
            scheme: Optional[List[str]] = typer.Option(None, help="loso and/or lomo"),
            feature: Optional[List[str]] = typer.Option(None, help="Feature columns to use")):
    """Fit the downstream-performance predictor from recorded metrics."""
    fits = run_metric(config, service.cmd_predict, targets=targets,
                      schemes=scheme or ("loso", "lomo"), columns=feature or None)
    for name, fit in fits.items():
        console.print(f"{name}: pearson={fit.pearson} r2={fit.r2:.4f}")


@app.command()
@handle_errors
def report(output_dir: Path = typer.Argument(..., help="Experiment output directory"),
           partial: bool = typer.Option(False, help="Render only figures whose inputs exist")):
    """Render SVG figures and write the hash manifest."""
    manifest = build_report(output_dir, partial=partial)
    console.print(f"manifest: {len(manifest.files)} files, config {manifest.config_hash[:12]}")


@app.command()
@handle_errors
def verify(output_dir: Path = typer.Argument(..., help="Experiment output directory")):
    """Re-hash every file listed in the manifest."""
    manifest = verify_manifest(output_dir)
    console.print(f"ok: {len(manifest.files)} files match")


@app.command("config")
@handle_errors
def config_cmd(path: Optional[Path] = typer.Argument(None, help="Experiment TOML to validate"),
               print_defaults: bool = typer.Option(False, "--print-defaults"),
               seed: int = typer.Option(0, help="Seed written into the defaults")):
    """Print the default experiment or validate one."""
    if print_defaults:
        typer.echo(defaults_toml(seed), nl=False)
        return
    if path is None:
        console.print("pass a config path or --print-defaults")
        raise typer.Exit(code=2)
    config, _ = load_config(path)
    console.print(f"valid: {len(config.methods)} methods, {len(config.sizes)} sizes, "
                  f"hash {config.config_hash()[:12]}")


if __name__ == "__main__":
    app()
