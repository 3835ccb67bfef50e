"""YAML run configurations for the command-line tools.

A run config is a mapping with up to four sections — scene, sampling,
propagation, fit — each a flat mapping of known keys. Unknown sections or
keys are rejected outright: silently ignoring a typo like `stepsize` would
change an experiment without warning.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml

from .learner import FitConfig
from .norms import ABS_SUM, ABS_SUM_STAR, TANH_C, TANH_GAMMA, NormScheme
from .propagation import (
    CSPN_3X3,
    NON_LOCAL,
    SPN_THREE_WAY,
    NeighborMode,
    PropagationConfig,
)
from .scenes import SamplingSpec, SceneSpec


class ConfigError(ValueError):
    """The run config is malformed (unknown key, bad value, missing section)."""


# CLI-facing spellings; hyphens and underscores are interchangeable.
SCHEME_NAMES = {
    "abs-sum": ABS_SUM,
    "abs-sum-star": ABS_SUM_STAR,
    "tanh-c": TANH_C,
    "tanh-gamma-abs-sum-star": TANH_GAMMA,
}

MODE_NAMES = {
    "cspn-3x3": CSPN_3X3,
    "spn-three-way": SPN_THREE_WAY,
    "non-local": NON_LOCAL,
}


def _canon(name: str) -> str:
    return str(name).strip().lower().replace("_", "-")


def parse_scheme_name(name: str) -> str:
    canon = _canon(name)
    if canon not in SCHEME_NAMES:
        raise ConfigError(
            f"unknown scheme {name!r}; expected one of {sorted(SCHEME_NAMES)}"
        )
    return SCHEME_NAMES[canon]


def parse_mode_name(name: str) -> str:
    canon = _canon(name)
    if canon not in MODE_NAMES:
        raise ConfigError(
            f"unknown neighbor mode {name!r}; expected one of {sorted(MODE_NAMES)}"
        )
    return MODE_NAMES[canon]


def build_scheme(name: str, gamma: Optional[float] = None, c: Optional[float] = None) -> NormScheme:
    variant = parse_scheme_name(name)
    if variant == TANH_C:
        if c is None:
            raise ConfigError("tanh-c needs the divisor c")
        return NormScheme(variant, c=float(c))
    if variant == TANH_GAMMA:
        if gamma is None:
            raise ConfigError("tanh-gamma-abs-sum-star needs gamma")
        return NormScheme(variant, gamma=float(gamma))
    return NormScheme(variant)


_SECTION_KEYS = {
    "scene": {"kind", "height", "width", "d_min", "d_max", "seed", "count"},
    "sampling": {
        "protocol", "count", "rows", "phase", "noise", "sigma", "radius", "rate", "seed",
    },
    "propagation": {
        "steps", "scheme", "gamma", "c", "use_confidence", "neighbor_mode",
        "direction", "replace_seeds",
    },
    "fit": {
        "iterations", "step_size", "optimizer", "beta", "beta1", "beta2", "eps",
        "learn_x0", "learn_offsets", "learn_affinities", "learn_confidence",
        "learn_gamma", "offset_init", "jitter_sigma", "affinity_init_sigma",
        "idw_power", "idw_lambda", "rho", "seed",
    },
}


@dataclass
class RunConfig:
    scene: Optional[SceneSpec]
    sampling: Optional[SamplingSpec]
    propagation: Optional[PropagationConfig]
    fit: Optional[FitConfig]


def _check_keys(section: str, data: Dict[str, Any]) -> Dict[str, Any]:
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    allowed = _SECTION_KEYS[section]
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key(s) {sorted(unknown)} in section {section!r}; "
            f"allowed: {sorted(allowed)}"
        )
    return data


def _build_propagation(data: Dict[str, Any]) -> PropagationConfig:
    data = _check_keys("propagation", data)
    try:
        scheme = build_scheme(
            data.get("scheme", "tanh-gamma-abs-sum-star"),
            gamma=data.get("gamma"),
            c=data.get("c"),
        )
        mode = NeighborMode(
            parse_mode_name(data.get("neighbor_mode", "cspn-3x3")),
            direction=data.get("direction", "top-down"),
        )
        return PropagationConfig(
            steps=int(data.get("steps", 18)),
            scheme=scheme,
            use_confidence=bool(data.get("use_confidence", True)),
            neighbor_mode=mode,
            replace_seeds=bool(data.get("replace_seeds", False)),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad propagation section: {exc}") from exc


def _build_dataclass(section: str, cls, data: Dict[str, Any]):
    data = _check_keys(section, data)
    try:
        return cls(**data)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad {section} section: {exc}") from exc


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Parse and fully validate a YAML run config."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping of sections")
    unknown = set(doc) - set(_SECTION_KEYS)
    if unknown:
        raise ConfigError(
            f"{path}: unknown section(s) {sorted(unknown)}; "
            f"allowed: {sorted(_SECTION_KEYS)}"
        )

    scene = None
    if "scene" in doc:
        scene = _build_dataclass("scene", SceneSpec, doc["scene"])
    sampling = None
    if "sampling" in doc:
        sampling = _build_dataclass("sampling", SamplingSpec, doc["sampling"])
    propagation = None
    if "propagation" in doc:
        propagation = _build_propagation(doc["propagation"])
    fit_cfg = None
    if "fit" in doc:
        fit_cfg = _build_dataclass("fit", FitConfig, doc["fit"])
    return RunConfig(scene=scene, sampling=sampling, propagation=propagation, fit=fit_cfg)


def require(config: RunConfig, *sections: str) -> None:
    """Fail fast when a command needs sections the config does not have."""
    missing = [s for s in sections if getattr(config, s) is None]
    if missing:
        raise ConfigError(f"config is missing required section(s): {missing}")
