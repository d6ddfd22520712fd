#!/usr/bin/env python3
"""
treedecomp - Main Entry Point

Command line interface: `decompose` runs ingestion, Stage 1 and Stage 2 on
a matrix or sample file, `simulate` writes a random ground-truth model with
its data, and `evaluate` compares a recovery with its generator.

Exit codes: 0 success, 2 input or format error, 3 numeric failure.
"""

import functools
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
from rich.console import Console

from . import __version__
from .core.correlation import compute_correlations, detect_input_kind, load_matrix, load_samples, save_matrix, save_samples
from .core.evaluation import compare_models
from .core.exceptions import ConfigError, InputError, NumericError, QuartetIndexError, SchemaError, SearchError, TreeDecompError, TreeError
from .core.stage1 import TreeDecomposer
from .core.stage2 import EdgeSolution, NodeParameters, estimate_parameters
from .core.synth import GeneratorModel, exact_matrix, generate_model, perturb, sample_data
from .core.tree import DecompTree, quartet_topology_error
from .ui.console import ConsoleReporter
from .utils.config import Config
from .utils.helpers import atomic_write_json, atomic_write_text, read_json, setup_logging

logger = logging.getLogger(__name__)

console = Console()
error_console = Console(stderr=True)

EXIT_INPUT = 2
EXIT_NUMERIC = 3


def exit_code(error: BaseException) -> int:
    """Map an exception to the process exit status"""
    if isinstance(error, (InputError, TreeError, QuartetIndexError, SearchError)):
        return EXIT_INPUT
    if isinstance(error, NumericError):
        return EXIT_NUMERIC
    return 1


def handle_errors(command):
    """Turn library exceptions into a one-line stderr reason and an exit code"""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        debug = bool(ctx.obj and ctx.obj.get("debug"))
        try:
            return command(*args, **kwargs)
        except TreeDecompError as e:
            if debug:
                error_console.print_exception()
            else:
                error_console.print(f"[red]Error: {e}[/red]", highlight=False)
            sys.exit(exit_code(e))
        except KeyboardInterrupt:
            error_console.print("\n[yellow]Operation cancelled by user[/yellow]")
            sys.exit(1)

    return wrapper


def load_config(ctx: click.Context) -> Config:
    config = Config.load(config_path=ctx.obj.get("config_path"))
    logger.debug(f"Effective configuration: {config.to_dict()}")
    return config


@click.group()
@click.version_option(version=__version__, prog_name="treedecomp")
@click.option(
    "--config", "-c",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Path to a YAML or JSON configuration file"
)
@click.option(
    "--debug", "-d",
    is_flag=True,
    help="Enable debug logging and full tracebacks"
)
@click.pass_context
def main(ctx: click.Context, config: Optional[Path], debug: bool):
    """
    treedecomp - Latent Tree Decomposition

    Recovers a tree of hidden binary variables from the pairwise
    correlations of observed binary variables.

    Examples:
        treedecomp decompose matrix.csv -o out/
        treedecomp simulate --n 12 --seed 7 --rows 10000 -o sim/
        treedecomp evaluate --model sim/model.json --tree out/tree.json
    """
    setup_logging(logging.DEBUG if debug else logging.WARNING)
    ctx.ensure_object(dict)
    ctx.obj["debug"] = debug
    ctx.obj["config_path"] = config


@main.command()
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--input-kind", type=click.Choice(["auto", "matrix", "samples"]), default="auto", show_default=True,
              help="Format of INPUT_PATH")
@click.option("--output-dir", "-o", type=click.Path(file_okay=False, path_type=Path),
              help="Directory for the output files (default: output.directory)")
@click.option("--error-mode", type=click.Choice(["max", "mean"]), help="Aggregation of pair/tree and tree/tree errors")
@click.option("--tie-policy", type=click.Choice(["precedence", "finest_quad", "lexicographic"]), help="How ties are broken")
@click.option("--epsilon-tie", type=float, help="Errors this close to the minimum are ties")
@click.option("--split-check/--no-split-check", default=None, help="Narrow ties by the split check")
@click.option("--rho-min", type=float, help="Smallest |rho| admitted to the Stage 2 system")
@click.option("--simplification", type=click.Choice(["suppress-degree-2", "flatten-all"]), help="Tree transform before Stage 2")
@click.option("--exclude-small/--strict-rows", default=None, help="Drop rows below rho-min instead of failing")
@click.option("--clamp/--no-clamp", default=None, help="Clip edge magnitudes above 1")
@click.option("--laplace", type=float, help="Pseudo-counts per cell when estimating from samples")
@click.option("--seed", type=int, help="Seed for the random fit starts")
@click.option("--workers", type=int, help="Threads for candidate scoring and node fits")
@click.option("--trace/--no-trace", default=None, help="Write the Stage 1 trace")
@click.option("--quiet", "-q", is_flag=True, help="Only write files")
@click.pass_context
@handle_errors
def decompose(
    ctx: click.Context,
    input_path: Path,
    input_kind: str,
    output_dir: Optional[Path],
    error_mode: Optional[str],
    tie_policy: Optional[str],
    epsilon_tie: Optional[float],
    split_check: Optional[bool],
    rho_min: Optional[float],
    simplification: Optional[str],
    exclude_small: Optional[bool],
    clamp: Optional[bool],
    laplace: Optional[float],
    seed: Optional[int],
    workers: Optional[int],
    trace: Optional[bool],
    quiet: bool,
):
    """Decompose a correlation matrix or sample file into a latent tree"""
    config = load_config(ctx)
    config.update("correlation", laplace=laplace)
    config.update("stage1", error_mode=error_mode, tie_policy=tie_policy, epsilon_tie=epsilon_tie,
                  split_check=split_check, workers=workers)
    config.update("stage2", rho_min=rho_min, simplification=simplification, exclude_small=exclude_small,
                  clamp=clamp, seed=seed, workers=workers)
    config.update("output", trace=trace, directory=str(output_dir) if output_dir else None)

    kind = detect_input_kind(input_path) if input_kind == "auto" else input_kind
    if kind == "matrix":
        matrix = load_matrix(input_path, unit_tolerance=config.correlation.unit_tolerance)
    else:
        matrix = compute_correlations(
            load_samples(input_path),
            laplace=config.correlation.laplace,
            unit_tolerance=config.correlation.unit_tolerance,
        )

    decomposer = TreeDecomposer(config.stage1)
    tree, stage1_trace = decomposer.decompose(matrix)
    result = estimate_parameters(tree, matrix, config.stage2)

    diagnostics: Dict[str, Any] = {
        "n": matrix.n,
        "input": {"path": str(input_path), "kind": kind},
        "max_quartet_error": quartet_topology_error(matrix, tree, "max"),
        **result.diagnostics(),
        "stage1": {
            "steps": decomposer.steps,
            "evaluations": decomposer.evaluations,
            "split_evaluations": decomposer.split_evaluations,
            "elapsed": decomposer.elapsed,
        },
        "stage2_elapsed": result.elapsed,
        "config": config.to_dict(),
    }

    target = Path(config.output.directory)
    written: List[Path] = [
        atomic_write_json(target / "tree.json", tree.to_dict()),
        atomic_write_text(target / "tree.dot", tree.to_dot()),
        atomic_write_json(target / "parameters.json", result.to_dict()),
        atomic_write_json(target / "diagnostics.json", diagnostics),
    ]
    if config.output.trace:
        written.append(atomic_write_json(target / "trace.json", stage1_trace.to_dict()))
    logger.info(f"Wrote {len(written)} files to {target}")

    if not quiet:
        reporter = ConsoleReporter(console)
        reporter.show_decomposition(tree, stage1_trace, decomposer.elapsed)
        reporter.show_parameters(result)
        reporter.show_diagnostics(diagnostics)
        reporter.show_written(written)


@main.command()
@click.option("--n", "n", type=int, required=True, help="Number of observed variables")
@click.option("--seed", type=int, default=0, show_default=True, help="Generator seed")
@click.option("--rows", type=int, help="Also draw this many samples")
@click.option("--eps", type=float, default=0.0, show_default=True, help="Uniform noise added to the matrix")
@click.option("--rho-low", type=float, help="Smallest edge magnitude")
@click.option("--rho-high", type=float, help="Largest edge magnitude")
@click.option("--negative-prob", type=float, help="Probability that an edge is negative")
@click.option("--family", type=click.Choice(["uniform", "composable"]), help="Topology family")
@click.option("--output-dir", "-o", type=click.Path(file_okay=False, path_type=Path),
              help="Directory for the output files (default: output.directory)")
@click.option("--quiet", "-q", is_flag=True, help="Only write files")
@click.pass_context
@handle_errors
def simulate(
    ctx: click.Context,
    n: int,
    seed: int,
    rows: Optional[int],
    eps: float,
    rho_low: Optional[float],
    rho_high: Optional[float],
    negative_prob: Optional[float],
    family: Optional[str],
    output_dir: Optional[Path],
    quiet: bool,
):
    """Generate a random tree model with its correlation matrix and samples"""
    config = load_config(ctx)
    config.update("synth", rho_low=rho_low, rho_high=rho_high, negative_prob=negative_prob, family=family)
    if eps < 0:
        raise ConfigError(f"--eps must be >= 0, got {eps}")
    if rows is not None and rows < 1:
        raise ConfigError(f"--rows must be >= 1, got {rows}")

    model = generate_model(n, seed, config.synth)
    matrix = perturb(exact_matrix(model), eps, [seed, 2])

    target = Path(output_dir) if output_dir else Path(config.output.directory)
    written = [
        atomic_write_json(target / "model.json", model.to_dict()),
        atomic_write_text(target / "matrix.csv", save_matrix(matrix)),
    ]
    if rows is not None:
        table = sample_data(model, rows, [seed, 1])
        written.append(atomic_write_text(target / "samples.csv", save_samples(table)))
    logger.info(f"Simulated n={n} seed={seed}; wrote {len(written)} files to {target}")

    if not quiet:
        reporter = ConsoleReporter(console)
        reporter.show_model(model, seed)
        reporter.show_written(written)


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True,
              help="Generator model JSON written by simulate")
@click.option("--tree", "tree_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True,
              help="Recovered tree JSON written by decompose")
@click.option("--parameters", "parameters_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Stage 2 parameters JSON written by decompose")
@click.option("--output", "-o", "output_path", type=click.Path(dir_okay=False, path_type=Path),
              help="Also write the report as JSON")
@click.pass_context
@handle_errors
def evaluate(
    ctx: click.Context,
    model_path: Path,
    tree_path: Path,
    parameters_path: Optional[Path],
    output_path: Optional[Path],
):
    """Compare a recovered tree and its parameters with the generator model"""
    load_config(ctx)
    model = GeneratorModel.from_dict(read_json(model_path))
    tree = DecompTree.from_dict(read_json(tree_path))

    edges = parameters = fitted_tree = None
    if parameters_path is not None:
        data = read_json(parameters_path)
        try:
            fitted_tree = DecompTree.from_dict(data["tree"])
            edges = EdgeSolution.from_dict(data["edges"])
            parameters = NodeParameters.from_dict(data["parameters"])
        except (KeyError, TypeError) as e:
            raise SchemaError(f"{parameters_path} is not a parameters document: {e}") from None

    report = compare_models(model, tree, edges, parameters, fitted_tree)
    if output_path is not None:
        atomic_write_json(output_path, report.to_dict())
    ConsoleReporter(console).show_evaluation(report)


def cli():
    """Entry point for setuptools console_scripts"""
    main(obj={})


if __name__ == "__main__":
    cli()
