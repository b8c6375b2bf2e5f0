from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .tree import BeadSet

logger = logging.getLogger(__name__)

BEAD_COLUMNS = ("x", "y", "z", "fx", "fy", "fz")
RESULT_COLUMNS = BEAD_COLUMNS + ("ux", "uy", "uz")


class BeadFileError(ValueError):
    """Malformed bead or result file; the message names the offending line."""


def _parse(path: Path, columns: Tuple[str, ...], allow_results: bool) -> Tuple[np.ndarray, Tuple[str, ...]]:
    if not path.exists():
        raise FileNotFoundError(f"bead file not found: {path}")
    with path.open("r", encoding="utf-8") as f:
        lines = f.read().splitlines()

    header = tuple(lines[0].split()) if lines else ()
    accepted = {columns}
    if allow_results:
        accepted.add(RESULT_COLUMNS)
    if header not in accepted:
        raise BeadFileError(f"{path}:1: expected header '{' '.join(columns)}', got '{' '.join(header)}'")

    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != len(header):
            raise BeadFileError(f"{path}:{lineno}: expected {len(header)} columns, got {len(fields)}")
        try:
            row = [float(v) for v in fields]
        except ValueError as exc:
            raise BeadFileError(f"{path}:{lineno}: {exc}") from exc
        if not np.all(np.isfinite(row)):
            raise BeadFileError(f"{path}:{lineno}: non-finite value")
        rows.append(row)
    if not rows:
        raise BeadFileError(f"{path}:2: no beads")
    return np.array(rows, dtype=float), header


def read_beads(path: str | Path) -> BeadSet:
    """Read beads from a bead file or from the first six columns of a result file."""
    data, _ = _parse(Path(path), BEAD_COLUMNS, allow_results=True)
    logger.info("read %d beads from %s", len(data), path)
    return BeadSet(data[:, 0:3], data[:, 3:6])


def read_results(path: str | Path) -> Tuple[BeadSet, np.ndarray]:
    data, _ = _parse(Path(path), RESULT_COLUMNS, allow_results=False)
    return BeadSet(data[:, 0:3], data[:, 3:6]), data[:, 6:9]


def write_beads(path: str | Path, beads: BeadSet, results: Optional[np.ndarray] = None) -> Path:
    """Write beads (and optionally their results) with 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = BEAD_COLUMNS
    table = np.hstack([beads.positions, beads.forces])
    if results is not None:
        results = np.asarray(results, dtype=float).reshape(-1, 3)
        if len(results) != len(beads):
            raise ValueError(f"{len(results)} results for {len(beads)} beads")
        columns = RESULT_COLUMNS
        table = np.hstack([table, results])
    np.savetxt(path, table, fmt="%.17g", header=" ".join(columns), comments="")
    return path
