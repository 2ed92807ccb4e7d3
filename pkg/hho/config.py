"""
Runtime defaults read from the environment.

- Loads .env once on import (python-dotenv, no-op if missing)
- Every value has a default; malformed values are logged and ignored
"""

from __future__ import annotations

import logging
import os
from typing import Any, Dict

from dotenv import load_dotenv

load_dotenv()

logger = logging.getLogger(__name__)

DEFAULT_THREADS = 1
DEFAULT_QUAD_ELEVATION = 8
DEFAULT_SEED = 20211022
DEFAULT_OUTPUT_DIR = "outputs"


def _env_int(name: str, default: int, minimum: int | None = None) -> int:
    raw = os.getenv(name, "").strip()
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        logger.warning("ignoring %s=%r: not an integer", name, raw)
        return default
    if minimum is not None and value < minimum:
        logger.warning("ignoring %s=%d: must be >= %d", name, value, minimum)
        return default
    return value


def debug_enabled() -> bool:
    return os.getenv("HHO_DEBUG", "").strip().lower() not in ("", "0", "false", "no")


def load_run_defaults() -> Dict[str, Any]:
    """
    Returns a dict with threads, quad_elevation, seed, output_dir, debug.
    Env:
      - HHO_THREADS (int >= 1)
      - HHO_QUAD_ELEVATION (int >= 0)
      - HHO_SEED (int)
      - HHO_OUTPUT_DIR
      - HHO_DEBUG (truthy to dump the last condensed system)
    """
    return {
        "threads": _env_int("HHO_THREADS", DEFAULT_THREADS, minimum=1),
        "quad_elevation": _env_int("HHO_QUAD_ELEVATION", DEFAULT_QUAD_ELEVATION, minimum=0),
        "seed": _env_int("HHO_SEED", DEFAULT_SEED),
        "output_dir": os.getenv("HHO_OUTPUT_DIR", DEFAULT_OUTPUT_DIR).strip() or DEFAULT_OUTPUT_DIR,
        "debug": debug_enabled(),
    }
