from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from .bead_files import read_beads, write_beads
from .config import CFG, load_kernel_defaults
from .distributions import DISTRIBUTIONS, generate
from .evaluator import AccuracySetting, EvaluationReport, evaluate
from .logger import log_run_record
from .rpy import RPYParams, direct_rpy_matvec
from .tree import BeadSet

logger = logging.getLogger(__name__)

console = Console()


@dataclass(frozen=True)
class RunConfig:
    nsources: int = 10_000
    distribution: str = "cube"
    digits: int = 3
    threshold: Optional[int] = None
    seed: int = 42
    threads: int = field(default_factory=lambda: CFG.threads)
    verify_samples: int = field(default_factory=lambda: CFG.verify_samples)
    repeats: int = 1
    radius: Optional[float] = None
    boltzmann: Optional[float] = None
    temperature: Optional[float] = None
    viscosity: Optional[float] = None
    input: Optional[Path] = None
    output: Optional[Path] = None
    record: Optional[Path] = None

    def validate(self) -> None:
        if self.input is None and self.nsources < 1:
            raise ValueError("nsources must be >= 1")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"distribution must be one of {', '.join(DISTRIBUTIONS)}")
        AccuracySetting.from_digits(self.digits)
        if self.threshold is not None and self.threshold < 1:
            raise ValueError("threshold must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.verify_samples < 0:
            raise ValueError("verify-samples must be >= 0")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        for name in ("radius", "boltzmann", "temperature", "viscosity"):
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive")

    @property
    def accuracy(self) -> AccuracySetting:
        return AccuracySetting.from_digits(self.digits)


@dataclass
class RunReport:
    config: RunConfig
    params: RPYParams
    evaluation: EvaluationReport
    timings: Dict[str, float]
    error: Optional[float]
    samples: int
    results: np.ndarray
    record: Dict[str, Any]


def default_radius(n: int, threshold: int) -> float:
    """Radius with 2a = 0.1 (N/threshold)^(-1/3), well under the expected leaf side."""
    return 0.05 * (n / threshold) ** (-1.0 / 3.0)


def relative_l2_error(approx, exact) -> float:
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    num = float(np.sum((approx - exact) ** 2))
    den = float(np.sum(exact**2))
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return math.sqrt(num / den)


def sample_targets(n: int, samples: int, seed: int) -> np.ndarray:
    if samples >= n:
        return np.arange(n)
    rng = np.random.default_rng([seed, 1])
    return np.sort(rng.choice(n, size=samples, replace=False))


def load_beads(config: RunConfig) -> BeadSet:
    if config.input is not None:
        return read_beads(config.input)
    return generate(config.distribution, config.nsources, config.seed)


def build_params(config: RunConfig, n: int, threshold: int) -> RPYParams:
    defaults = load_kernel_defaults()
    return RPYParams(
        radius=config.radius if config.radius is not None else default_radius(n, threshold),
        boltzmann=config.boltzmann if config.boltzmann is not None else defaults.boltzmann,
        temperature=config.temperature if config.temperature is not None else defaults.temperature,
        viscosity=config.viscosity if config.viscosity is not None else defaults.viscosity,
    )


def run_benchmark(config: RunConfig) -> RunReport:
    """
    Evaluate D.F for the configured beads, verify against the direct product
    at sampled targets, write results and a run record.
    """
    config.validate()
    beads = load_beads(config)
    accuracy = config.accuracy
    threshold = config.threshold or accuracy.threshold
    params = build_params(config, len(beads), threshold)

    rows = []
    results: Optional[np.ndarray] = None
    first: Optional[EvaluationReport] = None
    for repeat in range(config.repeats):
        out, report = evaluate(beads, params, accuracy, threshold_override=threshold, threads=config.threads)
        rows.append(report.timings)
        if results is None:
            results, first = out, report
        logger.info("repeat %d/%d: %.3fs", repeat + 1, config.repeats, report.timings["total"])
    timings = pd.DataFrame(rows).mean().to_dict()

    error = None
    samples = 0
    if config.verify_samples > 0:
        targets = sample_targets(len(beads), config.verify_samples, config.seed)
        exact = direct_rpy_matvec(beads, params, targets=targets, threads=config.threads)
        error = relative_l2_error(results[targets], exact)
        samples = len(targets)

    if config.output is not None:
        write_beads(config.output, beads, results)

    record = log_run_record(
        config={
            "distribution": "file" if config.input else config.distribution,
            "input": str(config.input) if config.input else None,
            "output": str(config.output) if config.output else None,
            "digits": config.digits,
            "seed": config.seed,
            "repeats": config.repeats,
            "samples": samples,
            "radius": params.radius,
            "boltzmann": params.boltzmann,
            "temperature": params.temperature,
            "viscosity": params.viscosity,
        },
        timings=timings,
        tree=first.as_record(),
        error=error,
        path=config.record,
    )
    return RunReport(config, params, first, timings, error, samples, results, record)


def print_run_summary(report: RunReport) -> None:
    ev = report.evaluation
    t = Table(title="Run Summary", show_header=True, header_style="bold")
    t.add_column("Item")
    t.add_column("Value")
    t.add_row("Beads", str(ev.nsources))
    t.add_row("Source", str(report.config.input or report.config.distribution))
    t.add_row("Order p / threshold", f"{ev.order} / {ev.threshold}")
    t.add_row("Radius a", f"{report.params.radius:.6g}")
    t.add_row("Tree", f"{ev.nodes} nodes, {ev.leaves} leaves, depth {ev.depth}")
    t.add_row("Threads / repeats", f"{ev.threads} / {report.config.repeats}")
    for phase in ("tree", "upward", "interaction", "downward", "near_field", "total"):
        t.add_row(f"Time {phase}", f"{report.timings.get(phase, 0.0):.4f}s")
    if report.error is None:
        t.add_row("Error", "(not verified)")
    else:
        t.add_row("Error", f"{report.error:.4e} over {report.samples} targets")
    t.add_row("Output", str(report.config.output) if report.config.output else "(none)")
    console.print(t)
