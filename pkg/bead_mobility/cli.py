from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import typer
from rich import print

from .bead_files import BeadFileError, read_beads, write_beads
from .config import CFG, CONFIG_ERROR
from .distributions import generate as generate_beads
from .evaluator import AccuracySetting, OverlapPreconditionError
from .logger import RUNS_LOG, log_audit_record
from .rollup import run_rollup
from .run import RunConfig, print_run_summary, run_benchmark
from .tree import TreeDepthError, audit_pair_coverage, build_tree, compute_interaction_lists

app = typer.Typer(add_completion=False)


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Log progress at INFO level.")):
    """Fast RPY mobility products with an adaptive FMM."""
    if CONFIG_ERROR:
        _fail(CONFIG_ERROR, "fix the BEAD_MOBILITY_* environment variables or .env")
    logging.basicConfig(
        level=logging.INFO if verbose else getattr(logging, CFG.log_level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _fail(message: str, hint: str | None = None) -> None:
    print(f"[red]Error[/red]: {message}")
    if hint:
        print(f"[yellow]Hint[/yellow]: {hint}")
    raise typer.Exit(code=1)


@app.command()
def run(
    nsources: int = typer.Option(10_000, "--nsources", "-n", help="Number of beads to generate."),
    distribution: str = typer.Option("cube", help="cube | sphere"),
    accuracy: int = typer.Option(3, help="Target digits: 3, 6 or 9."),
    threshold: Optional[int] = typer.Option(None, help="Max beads per leaf (default per accuracy)."),
    seed: int = typer.Option(42, help="Generator seed."),
    threads: int = typer.Option(CFG.threads, help="Worker threads."),
    verify_samples: int = typer.Option(CFG.verify_samples, help="Targets checked against the direct product (0 = skip)."),
    repeats: int = typer.Option(1, help="Evaluations to average timings over."),
    input: Optional[Path] = typer.Option(None, "--input", help="Bead file to read instead of generating."),
    output: Optional[Path] = typer.Option(None, "--output", help="Write beads and results here."),
    radius: Optional[float] = typer.Option(None, help="Bead radius a (default from N and threshold)."),
    boltzmann: Optional[float] = typer.Option(None, help="Boltzmann constant."),
    temperature: Optional[float] = typer.Option(None, help="Absolute temperature."),
    viscosity: Optional[float] = typer.Option(None, help="Solvent viscosity."),
    record: Optional[Path] = typer.Option(None, help="JSONL run record (default data/logs/runs.jsonl)."),
):
    """Evaluate D.F, verify at sampled targets and report timings."""
    config = RunConfig(
        nsources=nsources,
        distribution=distribution,
        digits=accuracy,
        threshold=threshold,
        seed=seed,
        threads=threads,
        verify_samples=verify_samples,
        repeats=repeats,
        radius=radius,
        boltzmann=boltzmann,
        temperature=temperature,
        viscosity=viscosity,
        input=input,
        output=output,
        record=record,
    )
    try:
        report = run_benchmark(config)
    except OverlapPreconditionError as e:
        _fail(str(e), "reduce --radius or --threshold")
    except (ValueError, FileNotFoundError) as e:
        _fail(str(e))
    print_run_summary(report)
    print(f"[green]Run recorded[/green] -> {record or RUNS_LOG}")


@app.command()
def generate(
    output: Path = typer.Argument(..., help="Bead file to write."),
    nsources: int = typer.Option(10_000, "--nsources", "-n"),
    distribution: str = typer.Option("cube", help="cube | sphere"),
    seed: int = typer.Option(42),
):
    """Write a test distribution to a bead file."""
    try:
        beads = generate_beads(distribution, nsources, seed)
    except ValueError as e:
        _fail(str(e))
    write_beads(output, beads)
    print(f"[green]Wrote[/green] {len(beads)} beads -> {output}")


@app.command()
def audit(
    nsources: int = typer.Option(2000, "--nsources", "-n"),
    distribution: str = typer.Option("cube", help="cube | sphere"),
    accuracy: int = typer.Option(3, help="Selects the default threshold."),
    threshold: Optional[int] = typer.Option(None),
    seed: int = typer.Option(7),
    input: Optional[Path] = typer.Option(None, "--input"),
):
    """Check that every leaf pair is covered by exactly one interaction pathway."""
    try:
        beads = read_beads(input) if input else generate_beads(distribution, nsources, seed)
        limit = threshold or AccuracySetting.from_digits(accuracy).threshold
        tree = build_tree(beads.positions, limit)
        counts = audit_pair_coverage(tree, compute_interaction_lists(tree))
    except (ValueError, FileNotFoundError, BeadFileError, TreeDepthError) as e:
        _fail(str(e))

    bad = int((counts != 1).sum())
    log_audit_record(
        nsources=len(beads),
        threshold=limit,
        leaves=len(tree.leaves),
        depth=tree.depth,
        bad_pairs=bad,
        source=str(input) if input else distribution,
    )
    if bad:
        print(f"[red]Pair audit failed[/red]: {bad} leaf pairs not covered exactly once")
        raise typer.Exit(code=1)
    print(f"[green]Pair audit passed[/green] leaves={len(tree.leaves)} depth={tree.depth}")


@app.command()
def rollup():
    """Aggregate run records into data/reports/runs_summary.csv."""
    summary = run_rollup()
    if summary.empty:
        print("[yellow]No runs found.[/yellow]")
        return
    print(f"[green]Rolled up[/green] {int(summary['runs'].sum())} runs into {len(summary)} configurations")


if __name__ == "__main__":
    app()
