from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional

from .config import CFG

BASE_DATA_DIR = CFG.data_dir
LOG_DIR = BASE_DATA_DIR / "logs"
RUNS_LOG = LOG_DIR / "runs.jsonl"
AUDIT_LOG = LOG_DIR / "pair_audits.jsonl"


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_jsonl(path: Path, record: Dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as f:
        f.write(json.dumps(record, separators=(",", ":")) + "\n")


# ------------------------------------------------------------------
# RUN LOGGER (one flat record per benchmark run)
# ------------------------------------------------------------------

def log_run_record(
    *,
    config: Dict[str, Any],
    timings: Dict[str, float],
    tree: Dict[str, Any],
    error: Optional[float],
    path: Optional[Path] = None,
) -> Dict[str, Any]:
    """
    Logs one evaluation run. Keys from the three groups are merged into a
    flat record so the rollup can load it straight into a DataFrame.
    """
    record = {
        "event": "RPY_RUN",
        "ts": _utc_now(),
        **config,
        **{f"time_{name}": float(value) for name, value in timings.items()},
        **tree,
        "error": None if error is None else float(error),
    }
    _write_jsonl(path or RUNS_LOG, record)
    return record


# ------------------------------------------------------------------
# AUDIT LOGGER (pair-coverage check of a tree)
# ------------------------------------------------------------------

def log_audit_record(
    *,
    nsources: int,
    threshold: int,
    leaves: int,
    depth: int,
    bad_pairs: int,
    source: str,
    path: Optional[Path] = None,
) -> Dict[str, Any]:
    record = {
        "event": "PAIR_AUDIT",
        "ts": _utc_now(),
        "nsources": int(nsources),
        "threshold": int(threshold),
        "leaves": int(leaves),
        "depth": int(depth),
        "bad_pairs": int(bad_pairs),
        "source": source,
    }
    _write_jsonl(path or AUDIT_LOG, record)
    return record
