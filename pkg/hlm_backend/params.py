"""Parameter utilities: defaults, validation rules and key-value config files."""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from .errors import ParameterValidationError
from .models import (
    DEFAULT_GIBBS_PARAMS,
    DEFAULT_PRIOR_PARAMS,
    DEFAULT_SIMULATION_PARAMS,
    GibbsConfig,
    HlmSpec,
    PriorConfig,
)
from .simulator import MAR, MNAR, SCENARIOS, MissingnessLaw

logger = logging.getLogger(__name__)

GIBBS_RULES: Dict[str, Dict[str, Any]] = {
    "BURN_IN": {
        "type": int,
        "min": 0,
        "message": "Burn-in must be a non-negative integer.",
    },
    "KEPT": {
        "type": int,
        "min": 1,
        "message": "Kept iterations must be a positive integer.",
    },
    "NUM_CHAINS": {
        "type": int,
        "min": 1,
        "message": "Number of chains must be a positive integer.",
    },
    "SEED": {
        "type": int,
        "min": 0,
        "max": 2**64 - 1,
        "message": "Seed must be a non-negative 64-bit integer.",
    },
    "WORKERS": {
        "type": int,
        "min": 1,
        "message": "Workers must be a positive integer.",
    },
    "RECORD_LATENT": {
        "type": bool,
        "message": "Record latent must be true or false.",
    },
    "PROGRESS_EVERY": {
        "type": int,
        "min": 0,
        "message": "Progress interval must be a non-negative integer.",
    },
}

PRIOR_RULES: Dict[str, Dict[str, Any]] = {
    "IG_SHAPE": {
        "type": float,
        "min": 0,
        "exclusive_min": True,
        "message": "Inverse-gamma shape must be positive.",
    },
    "IG_SCALE": {
        "type": float,
        "min": 0,
        "exclusive_min": True,
        "message": "Inverse-gamma scale must be positive.",
    },
    "IW_DOF": {
        "type": float,
        "min": 0,
        "exclusive_min": True,
        "required": False,
        "message": "Inverse-Wishart degrees of freedom must be positive.",
    },
    "IW_SCALE": {
        "type": list,
        "required": False,
        "message": "Inverse-Wishart scale must be a comma separated vech of numbers.",
    },
    "RIDGE_SCALE": {
        "type": float,
        "min": 0,
        "message": "Ridge scale must be non-negative.",
    },
}

MODEL_RULES: Dict[str, Dict[str, Any]] = {
    "INTERACTIONS_CC": {
        "type": str,
        "required": False,
        "message": "CC interactions must be a comma separated list of A:B pairs.",
    },
    "INTERACTIONS_XC": {
        "type": str,
        "required": False,
        "message": "XC interactions must be a comma separated list of C:X pairs.",
    },
    "LEVEL": {
        "type": float,
        "min": 0,
        "max": 1,
        "exclusive_min": True,
        "message": "Credible level must be between 0 and 1.",
    },
}

SIMULATION_RULES: Dict[str, Dict[str, Any]] = {
    "SCENARIO": {
        "type": str,
        "choices": SCENARIOS,
        "message": f"Scenario must be one of: {', '.join(SCENARIOS)}.",
    },
    "NUM_CLUSTERS": {
        "type": int,
        "min": 2,
        "message": "Number of clusters must be an integer of at least 2.",
    },
    "CLUSTER_SIZE": {
        "type": int,
        "min": 1,
        "message": "Cluster size must be a positive integer.",
    },
    "REPLICATIONS": {
        "type": int,
        "min": 1,
        "message": "Replications must be a positive integer.",
    },
    "TAU": {
        "type": float,
        "min": 0,
        "exclusive_min": True,
        "required": False,
        "message": "tau must be positive.",
    },
    "SIGMA2": {
        "type": float,
        "min": 0,
        "exclusive_min": True,
        "required": False,
        "message": "sigma2 must be positive.",
    },
    "BETA": {
        "type": list,
        "required": False,
        "message": "beta must be a comma separated list of numbers.",
    },
    "ALPHA": {
        "type": list,
        "required": False,
        "message": "alpha must be a comma separated list of numbers.",
    },
    "T": {
        "type": list,
        "required": False,
        "message": "T must be a comma separated vech (T11, T12, T22).",
    },
}

DEFAULT_MODEL_PARAMS: Dict[str, Any] = {"LEVEL": 0.95}

LAW_PREFIXES = {"MAR_": MAR, "MNAR_": MNAR}
TRUE_VALUES = {"1", "true", "yes", "on"}
FALSE_VALUES = {"0", "false", "no", "off"}


def _coerce_numeric(value: Any, expected_type: type) -> float:
    """Coerce config values into numeric types while rejecting invalid inputs."""

    if value is None:
        raise ValueError("Value is missing.")
    if isinstance(value, bool):
        raise ValueError("Boolean values are not permitted for numeric fields.")
    if isinstance(value, (list, tuple, dict)):
        raise TypeError("Sequences are not permitted for numeric fields.")

    if isinstance(value, (int, float, np.integer, np.floating)):
        if expected_type is int and isinstance(value, (int, np.integer)):
            return int(value)
        number = float(value)
    elif isinstance(value, str):
        stripped = value.strip()
        if stripped == "":
            raise ValueError("Value cannot be empty.")
        if expected_type is int and stripped.lstrip("+-").isdigit():
            return int(stripped)
        number = float(stripped)
    else:
        raise TypeError("Unsupported value type.")

    if not math.isfinite(number):
        raise ValueError("Value must be finite.")

    if expected_type is int:
        if not number.is_integer():
            raise ValueError("Value must be an integer.")
        return int(number)

    return float(number)


def _coerce_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in TRUE_VALUES | FALSE_VALUES:
        return value.strip().lower() in TRUE_VALUES
    raise ValueError("Value must be a boolean.")


def _coerce_list(value: Any) -> List[float]:
    if isinstance(value, str):
        items = [item for item in value.split(",") if item.strip()]
    elif isinstance(value, (list, tuple, np.ndarray)):
        items = list(value)
    else:
        raise TypeError("Value must be a list.")
    if not items:
        raise ValueError("List cannot be empty.")
    return [_coerce_numeric(item, float) for item in items]


def validate_params(
    raw_params: Optional[Mapping[str, Any]],
    rules: Mapping[str, Mapping[str, Any]],
    defaults: Optional[Mapping[str, Any]] = None,
) -> Dict[str, Any]:
    """Validate and coerce parameters against ``rules``.

    Keys are matched case-insensitively. Missing keys fall back to
    ``defaults``; optional keys without a value are left out. Raises
    ParameterValidationError listing every invalid field.
    """

    errors: Dict[str, str] = {}
    cleaned: Dict[str, Any] = {}
    raw = {str(key).upper(): value for key, value in (raw_params or {}).items()}
    defaults = defaults or {}

    for key, rule in rules.items():
        required = rule.get("required", True)
        if key in raw and raw[key] is not None:
            value = raw[key]
        elif defaults.get(key) is not None:
            value = defaults[key]
        elif not required:
            continue
        else:
            value = None

        try:
            expected_type = rule.get("type", float)
            if expected_type in (int, float):
                coerced = _coerce_numeric(value, expected_type)
            elif expected_type is bool:
                coerced = _coerce_bool(value)
            elif expected_type is list:
                coerced = _coerce_list(value)
            elif expected_type is str:
                if value is None or str(value).strip() == "":
                    raise ValueError("Value cannot be empty.")
                coerced = str(value).strip()
                choices = rule.get("choices")
                if choices is not None and coerced not in choices:
                    raise ValueError("Value is not one of the allowed choices.")
            else:
                raise TypeError(f"Unsupported validation type for {key}.")

            min_value = rule.get("min")
            max_value = rule.get("max")
            if min_value is not None:
                if rule.get("exclusive_min") and coerced <= min_value:
                    raise ValueError("Value must exceed the minimum.")
                if coerced < min_value:
                    raise ValueError("Value is below the minimum allowed.")
            if max_value is not None and coerced > max_value:
                raise ValueError("Value exceeds the maximum allowed.")

            cleaned[key] = coerced
        except (TypeError, ValueError) as exc:
            errors[key] = rule.get("message", f"Invalid value for {key}.")
            logger.debug("Validation failed for %s: %s", key, exc)

    extra_keys = [key for key in raw if key not in rules]
    if extra_keys:
        errors["__all__"] = f"Unsupported parameters provided: {', '.join(sorted(extra_keys))}."

    if errors:
        raise ParameterValidationError(errors)

    return cleaned


def read_config_file(path: Path) -> Dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment. Keys are upper-cased."""
    values: Dict[str, str] = {}
    errors: Dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for number, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            errors[f"line {number}"] = f"{path}:{number}: expected 'key = value', got {content!r}"
            continue
        key, value = (part.strip() for part in content.split("=", 1))
        key = key.upper()
        if not key:
            errors[f"line {number}"] = f"{path}:{number}: missing key"
        elif key in values:
            errors[key] = f"{path}:{number}: duplicate key {key}"
        else:
            values[key] = value
    if errors:
        raise ParameterValidationError(errors)
    return values


def reject_unknown(raw: Mapping[str, Any], *rule_sets: Mapping[str, Any]) -> None:
    """Raise for keys that none of ``rule_sets`` recognise."""
    known = set().union(*(rules.keys() for rules in rule_sets))
    extra = sorted(str(key).upper() for key in raw if str(key).upper() not in known)
    if extra:
        raise ParameterValidationError(
            {"__all__": f"Unsupported parameters provided: {', '.join(extra)}."}
        )


def merge_params(base: Mapping[str, Any], overrides: Optional[Mapping[str, Any]]) -> Dict[str, Any]:
    """Upper-cased copy of ``base`` updated with the non-None ``overrides``."""
    merged = {str(key).upper(): value for key, value in base.items()}
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[str(key).upper()] = value
    return merged


def _pick(raw: Mapping[str, Any], rules: Mapping[str, Any]) -> Dict[str, Any]:
    return {key: value for key, value in raw.items() if key in rules}


def gibbs_config_from(raw: Mapping[str, Any]) -> GibbsConfig:
    values = validate_params(_pick(raw, GIBBS_RULES), GIBBS_RULES, DEFAULT_GIBBS_PARAMS)
    return GibbsConfig(
        burn_in=values["BURN_IN"],
        kept=values["KEPT"],
        n_chains=values["NUM_CHAINS"],
        seed=values["SEED"],
        record_latent=values["RECORD_LATENT"],
        workers=values["WORKERS"],
        progress_every=values["PROGRESS_EVERY"],
    )


def vech_to_matrix(values: List[float], name: str) -> np.ndarray:
    """Symmetric matrix from its upper-triangle row-major vech."""
    p = int(round((math.sqrt(8 * len(values) + 1) - 1) / 2))
    if p * (p + 1) // 2 != len(values):
        raise ParameterValidationError({name: f"{name} needs p(p+1)/2 entries, got {len(values)}."})
    matrix = np.zeros((p, p))
    matrix[np.triu_indices(p)] = values
    return matrix + np.triu(matrix, 1).T


def prior_config_from(raw: Mapping[str, Any]) -> PriorConfig:
    values = validate_params(_pick(raw, PRIOR_RULES), PRIOR_RULES, DEFAULT_PRIOR_PARAMS)
    iw_scale = None
    if "IW_SCALE" in values:
        iw_scale = vech_to_matrix(values["IW_SCALE"], "IW_SCALE")
    try:
        return PriorConfig(
            ig_shape=values["IG_SHAPE"],
            ig_scale=values["IG_SCALE"],
            iw_dof=values.get("IW_DOF"),
            iw_scale=iw_scale,
            ridge_scale=values["RIDGE_SCALE"],
        )
    except ValueError as exc:
        raise ParameterValidationError({"IW_SCALE": str(exc)}) from exc


def _pairs(text: Optional[str], key: str) -> List[Tuple[str, str]]:
    if not text:
        return []
    pairs = []
    for item in text.split(","):
        parts = [part.strip() for part in item.split(":")]
        if len(parts) != 2 or not all(parts):
            raise ParameterValidationError({key: f"{key} entry {item.strip()!r} must look like A:B."})
        pairs.append((parts[0], parts[1]))
    return pairs


def model_spec_from(
    raw: Mapping[str, Any], c_names: Tuple[str, ...], x1_names: Tuple[str, ...], x2_names: Tuple[str, ...]
) -> Tuple[HlmSpec, float]:
    """HlmSpec and credible level from a model file naming interactions by column."""
    values = validate_params(_pick(raw, MODEL_RULES), MODEL_RULES, DEFAULT_MODEL_PARAMS)
    x_names = list(x1_names) + list(x2_names)
    errors: Dict[str, str] = {}
    cc, xc = [], []
    for a, b in _pairs(values.get("INTERACTIONS_CC"), "INTERACTIONS_CC"):
        if a not in c_names or b not in c_names or a == b:
            errors["INTERACTIONS_CC"] = f"CC interaction {a}:{b} must name two distinct cluster covariates."
            continue
        s, t = sorted((c_names.index(a), c_names.index(b)))
        cc.append((s, t))
    for a, b in _pairs(values.get("INTERACTIONS_XC"), "INTERACTIONS_XC"):
        if a not in c_names or b not in x_names:
            errors["INTERACTIONS_XC"] = f"XC interaction {a}:{b} must name a cluster covariate and a known covariate."
            continue
        xc.append((c_names.index(a), x_names.index(b)))
    if errors:
        raise ParameterValidationError(errors)
    spec = HlmSpec(p=len(c_names), q1=len(x1_names), q2=len(x2_names), active_xc=tuple(xc), active_cc=tuple(cc))
    return spec, values["LEVEL"]


def _law_entries(raw: Mapping[str, Any]) -> Tuple[Dict[str, Any], List[MissingnessLaw]]:
    rest: Dict[str, Any] = {}
    laws: List[MissingnessLaw] = []
    errors: Dict[str, str] = {}
    for key, value in raw.items():
        prefix = next((p for p in LAW_PREFIXES if key.startswith(p)), None)
        if prefix is None:
            rest[key] = value
            continue
        variable = key[len(prefix):]
        kind = LAW_PREFIXES[prefix]
        try:
            coefficients = _coerce_list(value)
            # MAR laws are driven by the level-2 covariate X, MNAR laws by C1.
            driver = "X" if kind == MAR else "C1"
            laws.append(MissingnessLaw(variable, kind, tuple(coefficients), driver))
        except (TypeError, ValueError) as exc:
            errors[key] = f"{key}: {exc}"
    if errors:
        raise ParameterValidationError(errors)
    return rest, laws


def simulation_settings_from(raw: Mapping[str, Any]) -> Dict[str, Any]:
    """Validated simulation settings, including design overrides and missingness laws."""
    raw = merge_params({}, raw)
    rest, laws = _law_entries(raw)
    gibbs_keys = {key: rest.pop(key) for key in list(rest) if key in GIBBS_RULES}
    prior_keys = {key: rest.pop(key) for key in list(rest) if key in PRIOR_RULES}
    values = validate_params(rest, SIMULATION_RULES, DEFAULT_SIMULATION_PARAMS)
    overrides: Dict[str, Any] = {}
    for key, name in (("TAU", "tau"), ("SIGMA2", "sigma2"), ("BETA", "beta"), ("ALPHA", "alpha")):
        if key in values:
            overrides[name] = values[key]
    if "T" in values:
        overrides["T"] = vech_to_matrix(values["T"], "T")
    if laws:
        overrides["laws"] = laws
    return {
        "scenario": values["SCENARIO"],
        "n_clusters": values["NUM_CLUSTERS"],
        "cluster_size": values["CLUSTER_SIZE"],
        "replications": values["REPLICATIONS"],
        "overrides": overrides,
        "gibbs": gibbs_config_from(gibbs_keys),
        "priors": prior_config_from(prior_keys),
    }


__all__ = [
    "GIBBS_RULES",
    "MODEL_RULES",
    "PRIOR_RULES",
    "SIMULATION_RULES",
    "merge_params",
    "reject_unknown",
    "gibbs_config_from",
    "model_spec_from",
    "prior_config_from",
    "read_config_file",
    "simulation_settings_from",
    "validate_params",
    "vech_to_matrix",
]
