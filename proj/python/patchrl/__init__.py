"""Black-box adversarial patch toolkit.

Thin Python layer over the C++ core: patch geometry, the synthetic
benchmark, and the experiment driver. Heavy lifting happens in `_core`.
"""

import json as _json

from ._core import (  # noqa: F401
    compute_valid_region,
    default_config_json,
    generate_dataset,
    load_png,
    make_mask,
    paste,
    run_experiment_json,
    save_png,
    smooth_patch,
    step_grid,
    validate_config_json,
)

__all__ = [
    "compute_valid_region",
    "default_config",
    "generate_dataset",
    "load_png",
    "make_mask",
    "paste",
    "run_experiment",
    "save_png",
    "smooth_patch",
    "step_grid",
    "validate_config",
]


def default_config() -> dict:
    """Default run configuration as a plain dict."""
    return _json.loads(default_config_json())


def validate_config(config: dict) -> list:
    """Validation errors for a run configuration (empty when valid)."""
    return list(validate_config_json(_json.dumps(config)))


def run_experiment(config: dict) -> dict:
    """Run the configured benchmark; returns the summary with records."""
    return _json.loads(run_experiment_json(_json.dumps(config)))
