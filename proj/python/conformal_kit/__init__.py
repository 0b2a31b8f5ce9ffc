"""Weighted conformal prediction with a Monte-Carlo experiment harness."""

import json

from ._core import (
    ConfigError,
    DomainError,
    Error,
    UnsupportedError,
    __version__,
    bandwidth_for_target_neff,
    effective_sample_size,
    generate_dgp,
    method_names,
    p_values,
    prediction_regions,
    weighted_p_value,
    weighted_quantile,
)
from . import _core

__all__ = [
    "ConfigError",
    "DomainError",
    "Error",
    "UnsupportedError",
    "__version__",
    "bandwidth_for_target_neff",
    "effective_sample_size",
    "generate_dgp",
    "method_names",
    "p_values",
    "prediction_regions",
    "run_coverage",
    "run_graph",
    "run_hier",
    "run_selection",
    "weighted_p_value",
    "weighted_quantile",
]


def _run(fn, config):
    return json.loads(fn(json.dumps(config or {})))


def run_coverage(config=None):
    """Coverage experiment; config uses the same keys as the CLI JSON config."""
    return _run(_core._run_coverage, config)


def run_graph(config=None):
    return _run(_core._run_graph, config)


def run_hier(config=None):
    return _run(_core._run_hier, config)


def run_selection(config=None):
    return _run(_core._run_selection, config)
