"""KPL zero-shot classification engine."""

import json

from ._core import (
    DataError,
    InternalError,
    KplError,
    NumericError,
    UsageError,
    __version__,
    classify,
    gen_fixture,
    gradient,
    learn,
    loss,
    read_embeddings,
    solve_ot,
    write_embeddings,
)
from ._core import _run_pipeline


def run_pipeline(mode, images, kb, *, include_timing=True, **options):
    """Runs one mode end to end and returns the report as a dict."""
    return json.loads(_run_pipeline(mode, images, kb, include_timing=include_timing, **options))


__all__ = [
    "DataError",
    "InternalError",
    "KplError",
    "NumericError",
    "UsageError",
    "__version__",
    "classify",
    "gen_fixture",
    "gradient",
    "learn",
    "loss",
    "read_embeddings",
    "run_pipeline",
    "solve_ot",
    "write_embeddings",
]
