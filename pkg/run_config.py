"""
Run Configuration for Index Lab

Holds the knobs every subcommand echoes into its report: tolerances,
quadrature orders, truncation caps, the worker-pool width and the seed.
Environment overrides: INDEXLAB_THREADS, INDEXLAB_SEED.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field

logger = logging.getLogger(__name__)

THREADS_ENV = "INDEXLAB_THREADS"
SEED_ENV = "INDEXLAB_SEED"


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        logger.warning("[Config] ignoring non-integer %s=%r", name, raw)
        return default


class RunConfig(BaseModel):
    """Immutable run settings."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    threads: int = Field(default=1, ge=1)
    seed: int = 0
    tolerance: float = Field(default=1e-8, gt=0)
    quadrature_order: int = Field(default=16, ge=2)
    truncation_cap: int = Field(default=8, ge=0)
    t_min: float = Field(default=1e-3, gt=0)
    t_max: float = Field(default=1e3, gt=0)
    grid_points: int = Field(default=12, ge=3)

    @classmethod
    def from_env(cls, **overrides) -> "RunConfig":
        values = {
            "threads": _env_int(THREADS_ENV, 1),
            "seed": _env_int(SEED_ENV, 0),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


# Global instance
_run_config: Optional[RunConfig] = None


def get_run_config() -> RunConfig:
    global _run_config
    if _run_config is None:
        _run_config = RunConfig.from_env()
    return _run_config


def set_run_config(config: RunConfig) -> RunConfig:
    """Install the configuration built by the CLI for the rest of the run."""
    global _run_config
    _run_config = config
    logger.debug("[Config] %s", config.model_dump())
    return config


def parallel_map(fn: Callable, items: Sequence, workers: Optional[int] = None) -> List:
    """Map over items on the configured pool; results keep input order."""
    workers = workers or get_run_config().threads
    if workers <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
