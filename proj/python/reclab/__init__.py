"""Python bindings for the reclab recommender gateway core."""

import json

from ._core import (
    Index,
    ReclabError,
    ctr,
    ctr_timeseries,
    normalize_title,
    tokenize,
    wilson_interval,
)
from . import _core

__all__ = [
    "Index",
    "ReclabError",
    "assign_engines",
    "ctr",
    "ctr_timeseries",
    "normalize_title",
    "run_simulation",
    "tokenize",
    "wilson_interval",
]


def assign_engines(weights, seed, n):
    """Draw n engine ids from {engine_id: weight} with a seeded generator."""
    return _core.assign_engines(list(weights.items()), seed, n)


def run_simulation(config=None):
    """Run a seeded simulation. config uses the keys of `reclab simulate --config`."""
    result = _core.run_simulation(json.dumps(config or {}))
    result["stats"] = json.loads(result.pop("stats_json"))
    return result
