"""Run configuration: schema validation for the CLI commands.

A run config is a JSON object holding the model document plus optional
per-command parameter sections.  Unknown keys are rejected at every level,
so typos fail loudly with exit code 2 rather than silently using defaults.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .models import ModelDocumentError, _check_keys, load_model


class ConfigError(ValueError):
    pass


_DENSITY_DEFAULTS = {"points": 64, "span": 0.95}
_BROWN_DEFAULTS = {"points": 64, "span": 0.95}
_SIMULATE_DEFAULTS = {
    "n": 256,
    "seed": 1,
    "samples": 1,
    "field": "complex",
    "tau_star": 0.1,
    "eta_small": 0.05,
    "resolvent_zeta": [0.3, 0.0],
    "resolvent_eta": 1.0,
    "probes": 8,
}
_CHECK_DEFAULTS = {
    "taus": [0.2, 0.5, 0.8],
    "eta": 0.01,
    "seed": 0,
    "scaling_lambdas": [0.25, 4.0],
    "laplacian_h": 0.02,
    "laplacian_centers": [[0.3, 0.0], [0.0, 0.45]],
}
_CHECK_TOLERANCES = {
    "dyson_residual": 1e-8,
    "trace_identity": 1e-10,
    "identity_suite": 1e-7,
    "dual_path": 1e-5,
    "scaling_v": 1e-8,
    "scaling_sigma": 1e-6,
    "laplacian": 1e-2,
    "stability_selfadjoint": 1e-11,
    "stability_factorization": 1e-10,
}


def _merge_section(raw: dict | None, defaults: dict, where: str) -> dict:
    if raw is None:
        return dict(defaults)
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} section must be an object")
    _check_keys(raw, set(defaults), set(), where)
    merged = dict(defaults)
    merged.update(raw)
    return merged


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration with the model already constructed."""

    raw: dict
    model_doc: dict
    density: dict
    brown: dict
    simulate: dict
    check: dict
    check_tolerances: dict

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def build_model(self):
        return load_model(self.model_doc)


def parse_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    allowed = {"model", "dimension", "density", "brown", "simulate", "check",
               "check_tolerances"}
    try:
        _check_keys(doc, allowed, {"model", "dimension"}, "config")
        model_doc = {"model": doc["model"], "dimension": doc["dimension"]}
        load_model(model_doc)  # validate eagerly
    except ModelDocumentError as exc:
        raise ConfigError(str(exc)) from exc
    density = _merge_section(doc.get("density"), _DENSITY_DEFAULTS, "density")
    brown = _merge_section(doc.get("brown"), _BROWN_DEFAULTS, "brown")
    simulate = _merge_section(doc.get("simulate"), _SIMULATE_DEFAULTS, "simulate")
    check = _merge_section(doc.get("check"), _CHECK_DEFAULTS, "check")
    tols = _merge_section(doc.get("check_tolerances"), _CHECK_TOLERANCES,
                          "check_tolerances")
    return RunConfig(
        raw=doc, model_doc=model_doc, density=density, brown=brown,
        simulate=simulate, check=check, check_tolerances=tols,
    )


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(doc)
