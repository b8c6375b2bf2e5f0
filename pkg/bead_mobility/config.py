from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass


@dataclass(frozen=True)
class RuntimeConfig:
    """Central runtime configuration loaded once from environment."""

    data_dir: Path = Path("data")
    threads: int = 1
    verify_samples: int = 400
    log_level: str = "WARNING"


@dataclass(frozen=True)
class KernelDefaults:
    """Physical constants used when a run does not set them."""

    boltzmann: float = 1.0
    temperature: float = 1.0
    viscosity: float = 1.0 / (6.0 * math.pi)


def _first_env(*names: str) -> str | None:
    for name in names:
        val = os.getenv(name)
        if val:
            return val
    return None


def _env_number(name: str, default, cast):
    raw = _first_env(name)
    if raw is None:
        return default
    try:
        return cast(raw.strip())
    except ValueError as exc:
        raise RuntimeError(f"{name} must be a {cast.__name__}, got {raw!r}") from exc


def _debug_enabled() -> bool:
    return os.getenv("BEAD_MOBILITY_DEBUG_CONFIG", "").strip().lower() in {"1", "true", "yes"}


def load_runtime_config() -> RuntimeConfig:
    threads = _env_number("BEAD_MOBILITY_THREADS", 1, int)
    verify_samples = _env_number("BEAD_MOBILITY_VERIFY_SAMPLES", 400, int)
    if threads < 1:
        raise RuntimeError("BEAD_MOBILITY_THREADS must be >= 1")
    if verify_samples < 0:
        raise RuntimeError("BEAD_MOBILITY_VERIFY_SAMPLES must be >= 0")

    cfg = RuntimeConfig(
        data_dir=Path(os.getenv("BEAD_MOBILITY_DATA_DIR", "data").strip() or "data"),
        threads=threads,
        verify_samples=verify_samples,
        log_level=(os.getenv("BEAD_MOBILITY_LOG_LEVEL", "WARNING").strip() or "WARNING").upper(),
    )
    if _debug_enabled():
        for name, value in cfg.__dict__.items():
            print(f"[CONFIG] {name}: {value}")
    return cfg


def load_kernel_defaults() -> KernelDefaults:
    defaults = KernelDefaults(
        boltzmann=_env_number("BEAD_MOBILITY_KB", 1.0, float),
        temperature=_env_number("BEAD_MOBILITY_T", 1.0, float),
        viscosity=_env_number("BEAD_MOBILITY_ETA", 1.0 / (6.0 * math.pi), float),
    )
    for name, value in defaults.__dict__.items():
        if not (math.isfinite(value) and value > 0):
            raise RuntimeError(f"kernel default {name} must be positive, got {value}")
    if _debug_enabled():
        for name, value in defaults.__dict__.items():
            print(f"[CONFIG] {name}: {value}")
    return defaults


try:
    CFG = load_runtime_config()
    CONFIG_ERROR: str | None = None
except RuntimeError as exc:
    # library imports keep working; the CLI reports the problem
    CFG = RuntimeConfig()
    CONFIG_ERROR = str(exc)
    logging.getLogger(__name__).warning("runtime config ignored: %s", exc)
