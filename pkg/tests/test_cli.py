from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from typer.testing import CliRunner

import bead_mobility.logger as run_logger
import bead_mobility.rollup as rollup
from bead_mobility.bead_files import BeadFileError, read_beads, read_results, write_beads
from bead_mobility.cli import app
from bead_mobility.config import load_kernel_defaults, load_runtime_config
from bead_mobility.distributions import generate
from bead_mobility.evaluator import AccuracySetting, evaluate
from bead_mobility.rpy import RPYParams, direct_rpy_matvec
from bead_mobility.run import RunConfig, relative_l2_error, run_benchmark, sample_targets

FIXTURES = Path(__file__).resolve().parent / "fixtures"

runner = CliRunner()


@pytest.fixture
def logs(tmp_path, monkeypatch):
    """Point every default log and report path at tmp_path."""
    monkeypatch.setattr(run_logger, "RUNS_LOG", tmp_path / "logs" / "runs.jsonl")
    monkeypatch.setattr(run_logger, "AUDIT_LOG", tmp_path / "logs" / "pair_audits.jsonl")
    monkeypatch.setattr(rollup, "RUNS_LOG", tmp_path / "logs" / "runs.jsonl")
    monkeypatch.setattr(rollup, "OUT_DIR", tmp_path / "reports")
    return tmp_path


def _records(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


# ------------------------------------------------------------------
# distributions
# ------------------------------------------------------------------

def test_generate_is_deterministic():
    a, b = generate("cube", 500, 42), generate("cube", 500, 42)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.forces, b.forces)
    assert not np.array_equal(a.positions, generate("cube", 500, 43).positions)


def test_generated_configurations():
    cube = generate("cube", 20_000, 1)
    assert cube.positions.min() >= 0.0 and cube.positions.max() < 1.0
    assert np.abs(cube.forces.mean(axis=0)).max() <= 0.02
    assert np.abs(cube.forces).max() <= 1.0

    sphere = generate("sphere", 20_000, 1)
    assert np.allclose(np.linalg.norm(sphere.positions, axis=1), 1.0, atol=1e-12)
    assert np.abs(sphere.positions.mean(axis=0)).max() <= 0.02


def test_generate_rejects_bad_input():
    with pytest.raises(ValueError, match="nsources"):
        generate("cube", 0, 1)
    with pytest.raises(ValueError, match="distribution"):
        generate("torus", 10, 1)


# ------------------------------------------------------------------
# bead files
# ------------------------------------------------------------------

def test_bead_file_round_trip(tmp_path):
    beads = generate("sphere", 50, 3)
    results = np.random.default_rng(0).normal(size=(50, 3))
    path = write_beads(tmp_path / "out" / "results.txt", beads, results)
    back, values = read_results(path)
    assert np.array_equal(back.positions, beads.positions)
    assert np.array_equal(back.forces, beads.forces)
    assert np.array_equal(values, results)
    # a result file is also a valid bead input
    assert np.array_equal(read_beads(path).forces, beads.forces)


def test_bead_file_errors(tmp_path):
    bad_header = tmp_path / "header.txt"
    bad_header.write_text("x y z fx fy\n0 0 0 1 1\n", encoding="utf-8")
    with pytest.raises(BeadFileError, match=":1:"):
        read_beads(bad_header)

    bad_row = tmp_path / "row.txt"
    bad_row.write_text("x y z fx fy fz\n0 0 0 1 1 1\n0 0 oops 1 1 1\n", encoding="utf-8")
    with pytest.raises(BeadFileError, match=":3:"):
        read_beads(bad_row)

    short_row = tmp_path / "short.txt"
    short_row.write_text("x y z fx fy fz\n0 0 0 1 1\n", encoding="utf-8")
    with pytest.raises(BeadFileError, match="expected 6 columns"):
        read_beads(short_row)

    with pytest.raises(FileNotFoundError):
        read_beads(tmp_path / "missing.txt")

    with pytest.raises(BeadFileError):
        read_results(FIXTURES / "three_beads.txt")


def test_three_bead_fixture_matches_direct():
    beads = read_beads(FIXTURES / "three_beads.txt")
    assert len(beads) == 3
    params = RPYParams(radius=0.25)  # first two beads overlap
    result, _ = evaluate(beads, params, AccuracySetting.from_digits(9))
    assert np.array_equal(result, direct_rpy_matvec(beads, params))


# ------------------------------------------------------------------
# run harness
# ------------------------------------------------------------------

def test_relative_l2_error():
    exact = np.array([[3.0, 0.0, 4.0]])
    assert relative_l2_error(exact, exact) == 0.0
    assert relative_l2_error(exact * 1.01, exact) == pytest.approx(0.01)
    assert relative_l2_error(np.zeros(3), np.zeros(3)) == 0.0


def test_sample_targets():
    assert np.array_equal(sample_targets(10, 50, 1), np.arange(10))
    picks = sample_targets(1000, 40, 7)
    assert len(np.unique(picks)) == 40 and np.all(np.diff(picks) > 0)
    assert np.array_equal(picks, sample_targets(1000, 40, 7))


def test_run_benchmark_verifies_and_writes(logs):
    out = logs / "results.txt"
    config = RunConfig(nsources=600, digits=6, threshold=30, verify_samples=600, threads=1, output=out)
    report = run_benchmark(config)
    assert report.samples == 600
    assert report.error is not None and report.error <= 5e-7
    assert report.record["event"] == "RPY_RUN" and report.record["digits"] == 6

    beads, values = read_results(out)
    exact = direct_rpy_matvec(beads, report.params)
    assert relative_l2_error(values, exact) == pytest.approx(report.error, rel=0, abs=1e-15)
    assert _records(logs / "logs" / "runs.jsonl")[-1]["nsources"] == 600


def test_run_benchmark_without_verification(logs):
    report = run_benchmark(RunConfig(nsources=200, threshold=20, verify_samples=0, repeats=2, threads=1))
    assert report.error is None and report.samples == 0
    assert set(report.timings) >= {"tree", "upward", "interaction", "downward", "near_field", "total"}


def test_run_config_validation():
    with pytest.raises(ValueError, match="threads"):
        RunConfig(threads=0).validate()
    with pytest.raises(ValueError, match="accuracy"):
        RunConfig(digits=5).validate()
    with pytest.raises(ValueError, match="radius"):
        RunConfig(radius=-1.0).validate()
    with pytest.raises(ValueError, match="repeats"):
        RunConfig(repeats=0).validate()


# ------------------------------------------------------------------
# config
# ------------------------------------------------------------------

def test_runtime_config_from_env(monkeypatch, tmp_path):
    monkeypatch.setenv("BEAD_MOBILITY_DATA_DIR", str(tmp_path))
    monkeypatch.setenv("BEAD_MOBILITY_THREADS", "3")
    monkeypatch.setenv("BEAD_MOBILITY_VERIFY_SAMPLES", "25")
    monkeypatch.setenv("BEAD_MOBILITY_LOG_LEVEL", "info")
    cfg = load_runtime_config()
    assert cfg.data_dir == tmp_path and cfg.threads == 3 and cfg.verify_samples == 25
    assert cfg.log_level == "INFO"


def test_bad_env_values(monkeypatch):
    monkeypatch.setenv("BEAD_MOBILITY_THREADS", "many")
    with pytest.raises(RuntimeError, match="BEAD_MOBILITY_THREADS"):
        load_runtime_config()
    monkeypatch.setenv("BEAD_MOBILITY_THREADS", "0")
    with pytest.raises(RuntimeError):
        load_runtime_config()
    monkeypatch.setenv("BEAD_MOBILITY_ETA", "-2")
    with pytest.raises(RuntimeError, match="viscosity"):
        load_kernel_defaults()


def test_kernel_defaults_from_env(monkeypatch):
    monkeypatch.setenv("BEAD_MOBILITY_KB", "2")
    monkeypatch.setenv("BEAD_MOBILITY_T", "300")
    params = RPYParams.from_radius(0.01)
    assert params.kt == 600.0


# ------------------------------------------------------------------
# command line
# ------------------------------------------------------------------

def test_cli_run(logs):
    record = logs / "run.jsonl"
    result = runner.invoke(app, ["run", "-n", "500", "--threshold", "25", "--verify-samples", "40", "--record", str(record)])
    assert result.exit_code == 0, result.output
    assert "Run Summary" in result.output
    entry = _records(record)[-1]
    assert entry["nsources"] == 500 and entry["samples"] == 40 and entry["error"] < 5e-3


def test_cli_run_overlap_hint(logs):
    result = runner.invoke(app, ["run", "-n", "2000", "--threshold", "40", "--radius", "0.5", "--verify-samples", "0"])
    assert result.exit_code == 1
    assert "bead diameter exceeds leaf size" in result.output
    assert "reduce --radius or --threshold" in result.output


def test_cli_run_bad_file(logs, tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("a b c\n", encoding="utf-8")
    result = runner.invoke(app, ["run", "--input", str(bad)])
    assert result.exit_code == 1
    assert ":1:" in result.output


def test_cli_generate(tmp_path):
    out = tmp_path / "beads.txt"
    result = runner.invoke(app, ["generate", str(out), "-n", "64", "--distribution", "sphere", "--seed", "3"])
    assert result.exit_code == 0, result.output
    beads = read_beads(out)
    assert np.array_equal(beads.positions, generate("sphere", 64, 3).positions)
    assert runner.invoke(app, ["generate", str(out), "-n", "0"]).exit_code == 1


def test_cli_audit(logs):
    result = runner.invoke(app, ["audit", "--distribution", "sphere"])
    assert result.exit_code == 0, result.output
    assert "Pair audit passed" in result.output
    entry = _records(logs / "logs" / "pair_audits.jsonl")[-1]
    assert entry["event"] == "PAIR_AUDIT" and entry["bad_pairs"] == 0 and entry["nsources"] == 2000


def test_cli_rollup(logs):
    assert "No runs found" in runner.invoke(app, ["rollup"]).output
    for seed in (1, 2):
        run_benchmark(RunConfig(nsources=150, threshold=20, seed=seed, verify_samples=10, threads=1))
    result = runner.invoke(app, ["rollup"])
    assert result.exit_code == 0, result.output
    summary = pd.read_csv(logs / "reports" / "runs_summary.csv")
    assert len(summary) == 1 and int(summary["runs"].iloc[0]) == 2
    assert "time_total" in summary.columns and "error" in summary.columns


def test_cli_reports_bad_environment(logs, monkeypatch):
    import bead_mobility.cli as cli_module

    monkeypatch.setattr(cli_module, "CONFIG_ERROR", "BEAD_MOBILITY_THREADS must be a int, got 'x'")
    result = runner.invoke(app, ["generate", str(logs / "beads.txt"), "-n", "5"])
    assert result.exit_code == 1
    assert "BEAD_MOBILITY_THREADS" in result.output
    assert "environment variables" in result.output
    assert not (logs / "beads.txt").exists()
