"""Command-line interface: ``fit``, ``simulate`` and ``diagnose``."""

from __future__ import annotations

import functools
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import click

from . import params as params_module
from .dataio import load_dataset, read_traces, schema_from, write_table, write_text, write_traces
from .design import hlm_labels, term_names
from .diagnostics import assess_convergence, monitored_labels, summarize_chains
from .errors import (
    DataValidationError,
    InsufficientCompleteCasesError,
    MissingnessError,
    ParameterValidationError,
    SamplerError,
    SpecificationError,
)
from .narrative import convergence_lines, estimates_table, fit_summary, missing_counts, simulation_summary
from .sampler import run_chains
from .simulator import make_design, run_replications

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
USAGE_ERRORS = (ParameterValidationError, SpecificationError, MissingnessError)
FATAL_ERRORS = (DataValidationError, InsufficientCompleteCasesError, SamplerError, OSError)


def configure_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT,
        filename=log_file,
        force=True,
    )


def _handle_errors(command: Callable) -> Callable:
    """Map library exceptions onto click's usage (exit 2) and fatal (exit 1) errors."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except USAGE_ERRORS as exc:
            raise click.UsageError(str(exc)) from exc
        except FATAL_ERRORS as exc:
            logger.error("%s", exc)
            raise click.ClickException(str(exc)) from exc

    return wrapper


def chain_options(command: Callable) -> Callable:
    options = [
        click.option("--seed", type=int, default=None, help="Root seed of all random streams."),
        click.option("--chains", type=int, default=None, help="Number of chains."),
        click.option("--burn-in", type=int, default=None, help="Burn-in iterations per chain."),
        click.option("--kept", type=int, default=None, help="Kept iterations per chain."),
        click.option("--workers", type=int, default=None, help="Worker processes."),
        click.option(
            "--out-dir",
            type=click.Path(file_okay=False, path_type=Path),
            default=Path("output"),
            show_default=True,
            help="Directory for reports and traces.",
        ),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _chain_overrides(seed, chains, burn_in, kept, workers) -> Dict[str, Any]:
    return {"SEED": seed, "NUM_CHAINS": chains, "BURN_IN": burn_in, "KEPT": kept, "WORKERS": workers}


def _read_optional(path: Optional[Path]) -> Dict[str, str]:
    return params_module.read_config_file(path) if path is not None else {}


@click.group()
@click.option(
    "--log-level",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    default="INFO",
    show_default=True,
)
@click.option("--log-file", type=click.Path(dir_okay=False), default=None, help="Write the log here instead of stderr.")
def cli(log_level: str, log_file: Optional[str]) -> None:
    """Gibbs sampling for two-level models with missing cluster covariates."""
    configure_logging(log_level, log_file)


@cli.command()
@click.argument("data", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option(
    "--schema",
    "schema_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Key-value file naming outcome, cluster and covariate columns.",
)
@click.option(
    "--model",
    "model_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Key-value file with interactions, credible level and priors.",
)
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Key-value file with chain settings.",
)
@chain_options
@click.option("--split-traces", is_flag=True, help="Also write one trace file per parameter per chain.")
@_handle_errors
def fit(data, schema_path, model_path, config_path, seed, chains, burn_in, kept, workers, out_dir, split_traces):
    """Fit the model to DATA and write estimates, convergence and traces."""
    schema = schema_from(params_module.read_config_file(schema_path))
    dataset = load_dataset(data, schema)

    model_raw = _read_optional(model_path)
    params_module.reject_unknown(model_raw, params_module.MODEL_RULES, params_module.PRIOR_RULES)
    spec, level = params_module.model_spec_from(model_raw, dataset.c_names, dataset.x1_names, dataset.x2_names)
    priors = params_module.prior_config_from(model_raw)
    priors.check_dimension(dataset.p)

    chain_raw = params_module.merge_params(
        _read_optional(config_path), _chain_overrides(seed, chains, burn_in, kept, workers)
    )
    params_module.reject_unknown(chain_raw, params_module.GIBBS_RULES)
    config = params_module.gibbs_config_from(chain_raw)

    logger.info("--- Fitting %s with %d chain(s) ---", data, config.n_chains)
    fitted = run_chains(dataset, spec, priors, config)
    report = assess_convergence(fitted, hlm_labels(spec))
    if not report.psrf_pass:
        failing = ", ".join(report.failing()) or "all parameters"
        logger.warning("Convergence not reached (PSRF >= 1.1 or unavailable) for: %s", failing)
        click.echo(f"Warning: convergence criterion not met for {failing}.", err=True)

    names = term_names(spec, dataset.x_names, dataset.c_names)
    terms = {f"beta{i}": name for i, name in enumerate(names)}
    table = summarize_chains(fitted, level=level, terms=terms)
    missing = missing_counts(
        (dataset.y_name,) + dataset.c_names,
        [dataset.y_missing.sum(), *dataset.c_missing.sum(axis=0)],
    )
    text = fit_summary(
        table,
        report,
        n_rows=dataset.N,
        n_clusters=dataset.J,
        missing=missing,
        centers=dataset.centers,
        chains=config.n_chains,
        burn_in=config.burn_in,
        kept=config.kept,
        seed=config.seed,
    )
    write_table(table, out_dir / "estimates.csv")
    write_table(report.to_frame(), out_dir / "convergence.csv")
    write_text(text, out_dir / "report.txt")
    write_traces(fitted, out_dir, split=split_traces)
    click.echo(text, nl=False)


@cli.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@chain_options
@_handle_errors
def simulate(config_path, seed, chains, burn_in, kept, workers, out_dir):
    """Run the replication study described in CONFIG_PATH."""
    raw = params_module.merge_params(
        params_module.read_config_file(config_path),
        _chain_overrides(seed, chains, burn_in, kept, workers),
    )
    settings = params_module.simulation_settings_from(raw)
    try:
        design = make_design(
            settings["scenario"], settings["n_clusters"], settings["cluster_size"], **settings["overrides"]
        )
    except ValueError as exc:
        raise click.UsageError(f"invalid scenario constants: {exc}") from exc
    config = settings["gibbs"]
    report = run_replications(design, settings["replications"], config, priors=settings["priors"])

    text = simulation_summary(report, design.n_clusters, design.cluster_size, config.seed)
    write_table(report.metrics, out_dir / "metrics.csv")
    write_table(report.converged_metrics, out_dir / "metrics_converged.csv")
    write_table(report.log, out_dir / "replications.csv")
    write_text(text, out_dir / "report.txt")
    click.echo(text, nl=False)


@cli.command()
@click.argument("trace_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--level", type=float, default=0.95, show_default=True, help="Credible level.")
@click.option(
    "--out-dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Also write convergence.csv and estimates.csv here.",
)
@_handle_errors
def diagnose(trace_dir, level, out_dir):
    """Recompute convergence diagnostics and posterior summaries from saved traces."""
    if not 0 < level < 1:
        raise click.UsageError("--level must lie in (0, 1)")
    chains = read_traces(trace_dir)
    try:
        report = assess_convergence(chains, monitored_labels(chains[0].labels))
    except ValueError as exc:
        raise DataValidationError(f"cannot assess convergence: {exc}") from exc
    table = summarize_chains(chains, level=level)
    lines = [f"{len(chains)} chain(s) of {chains[0].kept} draws from {trace_dir}", ""]
    lines.append(estimates_table(table))
    lines += ["", "Convergence:"] + convergence_lines(report)
    text = "\n".join(lines) + "\n"
    if out_dir is not None:
        write_table(report.to_frame(), out_dir / "convergence.csv")
        write_table(table, out_dir / "estimates.csv")
        write_text(text, out_dir / "report.txt")
    click.echo(text, nl=False)


def main() -> None:
    cli(prog_name="hlm-gibbs")


__all__ = ["cli", "configure_logging", "main"]
