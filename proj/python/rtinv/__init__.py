"""Radiative transfer inversion: transport solves, datasets and SGD runs."""

import json as _json

from ._rtinv import (  # noqa: F401
    ConfigError,
    Error,
    PhaseGrid,
    SolverError,
    delta_inflow,
    gradient,
    measure,
    two_bump_medium,
    profile_names,
    relative_error,
)
from . import _rtinv


def _config_text(config):
    if config is None:
        return "{}"
    if isinstance(config, str):
        return config
    return _json.dumps(config)


def resolve_config(config=None, profile=""):
    """Fully resolved run config as a dict."""
    return _json.loads(_rtinv.resolve_config(_config_text(config), profile))


def _wrap(fn):
    def run(out, config=None, profile=""):
        code, summary = fn(_config_text(config), str(out), profile)
        return code, _json.loads(summary)

    run.__name__ = fn.__name__
    run.__doc__ = f"Run the '{fn.__name__}' command; returns (exit_code, summary dict)."
    return run


generate_data = _wrap(_rtinv.generate_data)
invert = _wrap(_rtinv.invert)
assemble_linear = _wrap(_rtinv.assemble_linear)
spectral_report = _wrap(_rtinv.spectral_report)
cost_table = _wrap(_rtinv.cost_table)
