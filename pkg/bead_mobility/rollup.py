from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import pandas as pd

from .logger import BASE_DATA_DIR, RUNS_LOG

OUT_DIR = BASE_DATA_DIR / "reports"
GROUP_KEYS = ["distribution", "nsources", "digits", "order", "threshold", "threads"]


def _read_jsonl(path: Path) -> pd.DataFrame:
    if not path.exists():
        return pd.DataFrame()
    rows = []
    with path.open("r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                rows.append(json.loads(line))
    return pd.DataFrame(rows)


def run_rollup(log_path: Optional[Path] = None, out_path: Optional[Path] = None) -> pd.DataFrame:
    """Mean timings and error per run configuration, written to runs_summary.csv."""
    runs = _read_jsonl(log_path or RUNS_LOG)
    if runs.empty or "event" not in runs.columns:
        return pd.DataFrame()
    runs = runs[runs["event"] == "RPY_RUN"].copy()
    if runs.empty:
        return pd.DataFrame()

    runs["error"] = pd.to_numeric(runs["error"], errors="coerce")
    metrics = [c for c in runs.columns if c.startswith("time_")] + ["error"]
    keys = [k for k in GROUP_KEYS if k in runs.columns]
    grouped = runs.groupby(keys, dropna=False)
    summary = grouped[metrics].mean().reset_index()
    summary["runs"] = grouped.size().values

    out_path = out_path or OUT_DIR / "runs_summary.csv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    summary.to_csv(out_path, index=False)
    return summary
