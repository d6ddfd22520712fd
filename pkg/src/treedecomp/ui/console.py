"""
treedecomp - Console Reporting

Rich tables and panels summarizing decompositions, simulations and
evaluations. All human-facing output of the command line goes through
this module.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, TextIO

from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from ..core.evaluation import EvaluationReport
from ..core.models import Stage1Trace
from ..core.stage2 import Stage2Result
from ..core.synth import GeneratorModel
from ..core.tree import DecompTree
from ..utils.helpers import format_duration, format_number

logger = logging.getLogger(__name__)


class ConsoleReporter:
    """
    Prints run summaries

    Attributes:
        console: rich console receiving the output
    """

    def __init__(self, console: Optional[Console] = None, output_file: Optional[TextIO] = None):
        self.console = console or Console(file=output_file)

        self.primary_color = "bright_blue"
        self.success_color = "bright_green"
        self.warning_color = "bright_yellow"
        self.error_color = "bright_red"
        self.muted_color = "dim"

    def _stats_table(self) -> Table:
        table = Table(show_header=False, box=None, padding=(0, 2))
        table.add_column(style=self.success_color)
        table.add_column(style="white")
        return table

    def show_decomposition(self, tree: DecompTree, trace: Stage1Trace, elapsed: float):
        stats = self._stats_table()
        stats.add_row("Variables:", str(trace.n))
        stats.add_row("Hidden nodes:", str(len(tree.internal_nodes)))
        stats.add_row("Steps:", str(len(trace.steps)))
        stats.add_row("Quad evaluations:", format_number(trace.evaluations))
        stats.add_row("  of which joins:", format_number(trace.split_evaluations))
        stats.add_row("Time:", format_duration(elapsed))
        self.console.print(Panel(stats, title="Stage 1", border_style=self.primary_color))

        if trace.steps:
            steps = Table(title="Merge steps", show_header=True)
            steps.add_column("#", justify="right", style=self.muted_color)
            steps.add_column("Kind")
            steps.add_column("Nodes")
            steps.add_column("Trees")
            steps.add_column("Error", justify="right")
            for number, step in enumerate(trace.steps, start=1):
                candidate = step.candidate
                steps.add_row(
                    str(number),
                    candidate.kind.value,
                    ", ".join(f"x{i}" for i in candidate.nodes) or "-",
                    ", ".join(f"w{t}" for t in candidate.trees) or "-",
                    f"{candidate.error.value:.3g}",
                )
            self.console.print(steps)

    def show_parameters(self, result: Stage2Result):
        edges = Table(title="Edge correlations", show_header=True)
        edges.add_column("Parent")
        edges.add_column("Child")
        edges.add_column("rho", justify="right")
        tree = result.tree
        for (parent, child), value in result.edges.as_mapping().items():
            label = f"x{child}" if tree.is_leaf(child) else f"w{child}"
            edges.add_row(f"w{parent}", label, f"{value:+.4f}")
        self.console.print(edges)

        nodes = Table(title="Hidden nodes", show_header=True)
        nodes.add_column("Node")
        nodes.add_column("p(w)", justify="right")
        nodes.add_column("Residual", justify="right")
        nodes.add_column("Prior range")
        for node, fit in sorted(result.parameters.fits.items()):
            interval = f"[{fit.prior_interval[0]:.3f}, {fit.prior_interval[1]:.3f})" if fit.prior_interval else "-"
            color = self.success_color if fit.converged else self.warning_color
            nodes.add_row(f"w{node}", f"[{color}]{fit.prior:.4f}[/]", f"{fit.residual:.2e}", interval)
        self.console.print(nodes)

    def show_diagnostics(self, diagnostics: Dict[str, Any]):
        stats = self._stats_table()
        for key in ("max_quartet_error", "residual_norm", "max_reconstruction_error", "fit_residual", "sign_violations"):
            if key in diagnostics:
                value = diagnostics[key]
                stats.add_row(f"{key}:", f"{value:.3g}" if isinstance(value, float) else str(value))
        self.console.print(Panel(stats, title="Diagnostics", border_style=self.primary_color))

    def show_model(self, model: GeneratorModel, seed: Optional[int]):
        stats = self._stats_table()
        stats.add_row("Leaves:", str(model.n))
        stats.add_row("Hidden nodes:", str(len(model.topology.internal_nodes)))
        stats.add_row("Seed:", str(seed))
        stats.add_row("Negative edges:", str(sum(1 for value in model.edge_rho.values() if value < 0)))
        self.console.print(Panel(stats, title="Simulated model", border_style=self.primary_color))

    def show_evaluation(self, report: EvaluationReport):
        verdict = f"[{self.success_color}]match[/]" if report.match else f"[{self.error_color}]no match[/]"
        self.console.print(Panel(f"Topology: {verdict}", title="Evaluation", border_style=self.primary_color))

        if report.edges:
            table = Table(title="Edge recovery", show_header=True)
            table.add_column("Split")
            table.add_column("|rho| true", justify="right")
            table.add_column("|rho| recovered", justify="right")
            table.add_column("Error", justify="right")
            for row in report.edges:
                recovered = "-" if row.recovered is None else f"{abs(row.recovered):.4f}"
                error = "-" if row.error is None else f"{row.error:.2e}"
                table.add_row("{" + ",".join(str(i) for i in row.split) + "}", f"{abs(row.expected):.4f}", recovered, error)
            self.console.print(table)

        if report.priors:
            table = Table(title="Prior recovery", show_header=True)
            table.add_column("Node")
            table.add_column("p(w) true", justify="right")
            table.add_column("p(w) fitted", justify="right")
            for row in report.priors:
                fitted = "-" if row.recovered is None else f"{row.recovered:.4f}"
                table.add_row(f"w{row.node}", f"{row.expected:.4f}", fitted)
            self.console.print(table)

    def show_written(self, paths: Iterable[Path]):
        for path in paths:
            self.console.print(f"[{self.muted_color}]wrote {path}[/]")
