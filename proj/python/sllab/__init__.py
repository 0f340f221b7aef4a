"""Python access to the sllab core library."""

import json as _json

from ._sllab import (
    AssistFn,
    LabError,
    Measure,
    Schedule,
    __version__,
    build_assist_fn,
    build_schedule,
    config_keys,
    dyadic_bound,
    ensemble_moments,
    generator_eigenvalues,
    make_measure,
    measure_keys,
    report_text,
    thin_shell,
    variance_identity,
)
from ._sllab import run as _run


def run(**config):
    """Run an experiment; keyword arguments are config keys. Returns the manifest dict."""
    return _json.loads(_run({k: str(v) for k, v in config.items()}))


__all__ = [
    "AssistFn", "LabError", "Measure", "Schedule", "__version__", "build_assist_fn",
    "build_schedule", "config_keys", "dyadic_bound", "ensemble_moments",
    "generator_eigenvalues", "make_measure", "measure_keys", "report_text", "run",
    "thin_shell", "variance_identity",
]
