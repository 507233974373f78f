"""Experiment configuration: strict schema, validation, stable hashing.

Unknown keys are rejected everywhere — a silent typo in an experiment
file would corrupt a scaling study.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import jsonschema

from chaoswalk.experiment import Experiment
from chaoswalk.kernel import make_kernel
from chaoswalk.maps import make_map

ESTIMATOR_NAMES = [
    "spectrum",
    "drift",
    "variance",
    "clt-annealed",
    "clt-quenched",
    "ldp",
    "encounters",
    "excursions",
    "crossings",
    "gambler",
    "ellipticity-check",
    "decorrelation",
    "path",
]

_number = {"type": "number"}
_int = {"type": "integer", "minimum": 1}
_int_list = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}

_ESTIMATOR_PARAM_SCHEMAS = {
    "spectrum": {"n_bins": _int},
    "drift": {"N": _int, "M": _int},
    "variance": {
        "N": _int,
        "M": _int,
        "burn_in": {"type": "integer", "minimum": 0},
        "lag_cutoff": _int,
    },
    "clt-annealed": {"N_grid": _int_list, "M": _int, "v": _number, "sigma2": _number},
    "clt-quenched": {
        "N_grid": _int_list,
        "theta_samples": _int,
        "walks_per_theta": _int,
        "v": _number,
        "sigma2": _number,
    },
    "ldp": {
        "a_values": {"type": "array", "items": _number, "minItems": 1},
        "m_grid": _int_list,
        "M": _int,
        "v": _number,
    },
    "encounters": {"N_grid": _int_list, "M": _int, "A": _number},
    "excursions": {
        "N_grid": _int_list,
        "M": _int,
        "A": _number,
        "sep_factor": _number,
    },
    "crossings": {"N": _int, "M": _int, "A": _number},
    "gambler": {
        "p": _number,
        "alpha1": {"type": "integer"},
        "alpha": {"type": "integer"},
        "alpha2": {"type": "integer"},
        "M": _int,
    },
    "ellipticity-check": {"sample_count": _int},
    "decorrelation": {
        "separations": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "M": _int,
        "N": _int,
    },
    "path": {"N": _int, "M": _int},
}


def _estimator_schema():
    return {
        "type": "object",
        "properties": {
            name: {
                "type": "object",
                "properties": props,
                "additionalProperties": False,
            }
            for name, props in _ESTIMATOR_PARAM_SCHEMAS.items()
        },
        "additionalProperties": False,
        "minProperties": 1,
    }


CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "map": {
            "oneOf": [
                {"type": "string"},
                {
                    "type": "object",
                    "properties": {
                        "name": {"type": "string"},
                        "branches": {
                            "type": "array",
                            "minItems": 1,
                            "items": {
                                "type": "object",
                                "properties": {
                                    "domain": {
                                        "type": "array",
                                        "items": _number,
                                        "minItems": 2,
                                        "maxItems": 2,
                                    },
                                    "slope": _number,
                                    "offset": _number,
                                },
                                "required": ["domain", "slope", "offset"],
                                "additionalProperties": False,
                            },
                        },
                    },
                    "required": ["branches"],
                    "additionalProperties": False,
                },
            ]
        },
        "dimension": {"type": "integer", "minimum": 1},
        "kernel": {
            "type": "object",
            "properties": {
                "support": {"type": "array", "minItems": 1},
                "base_weights": {"type": "array", "items": _number, "minItems": 1},
                "epsilon": _number,
                "potential": {
                    "type": "object",
                    "properties": {
                        "type": {"type": "string"},
                        "coefficients": {"type": "object"},
                    },
                    "additionalProperties": False,
                },
            },
            "required": ["support", "base_weights"],
            "additionalProperties": False,
        },
        "seed": {"type": "integer", "minimum": 0},
        "backend": {"enum": ["exact", "float"]},
        "sampler_bins": {"type": "integer", "minimum": 2},
        "output_dir": {"type": "string"},
        "estimators": _estimator_schema(),
    },
    "required": ["map", "kernel", "estimators"],
    "additionalProperties": False,
}


class ConfigError(ValueError):
    def __init__(self, violations: List[str]):
        super().__init__("invalid config:\n" + "\n".join(f"  - {v}" for v in violations))
        self.violations = violations


@dataclass
class ExperimentConfig:
    raw: dict
    experiment: Experiment
    estimators: Dict[str, dict]
    output_dir: str
    config_hash: str

    @property
    def seed(self) -> int:
        return self.experiment.seed


def config_hash(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def validate_config(raw: dict) -> List[str]:
    """Schema and semantic violations, empty when valid."""
    violations = []
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    for err in sorted(validator.iter_errors(raw), key=lambda e: list(e.path)):
        loc = "/".join(str(p) for p in err.path) or "<root>"
        violations.append(f"{loc}: {err.message}")
        if err.validator == "additionalProperties" and "estimators" in err.path:
            violations[-1] += f" (valid names: {', '.join(ESTIMATOR_NAMES)})"
    if violations:
        return violations
    kern = raw["kernel"]
    if kern.get("epsilon", 0.0) < 0:
        violations.append("kernel/epsilon: epsilon must be >= 0")
    bw = kern["base_weights"]
    if abs(sum(bw) - 1.0) > 1e-9:
        violations.append("kernel/base_weights: must sum to 1")
    if len(bw) != len(kern["support"]):
        violations.append("kernel: base_weights and support lengths differ")
    return violations


def parse_config(path) -> ExperimentConfig:
    """Load, validate and materialize a config file."""
    raw = json.loads(Path(path).read_text())
    return build_config(raw)


def build_config(raw: dict) -> ExperimentConfig:
    violations = validate_config(raw)
    if violations:
        raise ConfigError(violations)
    dimension = raw.get("dimension", 1)
    try:
        map_ = make_map(raw["map"])
        kernel = make_kernel(raw["kernel"], dimension)
        exp = Experiment(
            map=map_,
            kernel=kernel,
            dimension=dimension,
            seed=raw.get("seed", 0),
            backend=raw.get("backend", "exact"),
            sampler_bins=raw.get("sampler_bins", 4096),
        )
    except ValueError as e:
        raise ConfigError([str(e)]) from e
    return ExperimentConfig(
        raw=raw,
        experiment=exp,
        estimators=dict(raw["estimators"]),
        output_dir=raw.get("output_dir", "chaoswalk-out"),
        config_hash=config_hash(raw),
    )
