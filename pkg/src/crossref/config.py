"""JSON run configuration: schema, defaults and loading.

Relative config paths that do not exist in the working directory are looked up
in ``$CROSSREF_CONFIG_DIR``.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

import jsonschema

from .capacity import CapacityParams
from .crypto import SchemeId
from .netsim import FailureSchedule, SimConfig
from .tamper_mc import FailureMode, McConfig

SCHEMA_VERSION = 1
CONFIG_DIR_ENV = "CROSSREF_CONFIG_DIR"

_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG_INT = {"type": "integer", "minimum": 0}
_POS_NUM = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "m": _POS_INT,
        "nodes_per_domain": _POS_INT,
        "l": _NONNEG_INT,
        "t": _NONNEG_INT,
        "difficulty_bits": {"type": "integer", "minimum": 0, "maximum": 24},
        "seed": _NONNEG_INT,
        "tx_per_block": _NONNEG_INT,
        "initiator": _NONNEG_INT,
        "scheme": {"enum": ["mock", "external"]},
        "failure_schedule": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["domain", "at_round"],
                "properties": {"domain": _NONNEG_INT, "at_round": _NONNEG_INT},
            },
        },
        "capacity": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "c_txs": _POS_NUM,
                "tau": _POS_NUM,
                "tau_fork": {"type": "number", "minimum": 0},
                "block_size_mb": _POS_NUM,
            },
        },
        "monte_carlo": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N": _POS_INT,
                "m_values": {"type": "array", "items": _POS_INT, "minItems": 1},
                "alpha_values": {"type": "array", "items": _POS_NUM, "minItems": 1},
                "x_values": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 100},
                    "minItems": 1,
                },
                "trials": _POS_INT,
                "bin_width": _POS_NUM,
                "failure_mode": {"enum": [m.value for m in FailureMode]},
                "failure_m_values": {"type": "array", "items": _POS_INT, "minItems": 1},
                "f_values": {"type": "array", "items": _NONNEG_INT, "minItems": 1},
                "failure_alpha": _POS_NUM,
                "workers": _POS_INT,
                "raw_samples": {"type": "boolean"},
            },
        },
    },
}

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "m": 5,
    "nodes_per_domain": 2,
    "l": 6,
    "t": 0,
    "difficulty_bits": 8,
    "seed": 0,
    "tx_per_block": 100,
    "initiator": 0,
    "scheme": "mock",
    "failure_schedule": [],
    "capacity": {"c_txs": 4286.0, "tau": 600.0, "tau_fork": 12.0, "block_size_mb": 1.0},
    "monte_carlo": {
        "N": 10_000,
        "m_values": [10, 100, 1000],
        "alpha_values": [2.0, 3.0],
        "x_values": [10.0, 30.0],
        "trials": 1_000,
        "bin_width": 0.1,
        "failure_mode": FailureMode.EXCLUDE_FROM_BOTH.value,
        "failure_m_values": [10, 100],
        "f_values": [1, 3, 5],
        "failure_alpha": 2.0,
        "workers": 1,
        "raw_samples": False,
    },
}


class ConfigFileError(ValueError):
    pass


def resolve_path(path: str | os.PathLike) -> Path:
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    base = os.environ.get(CONFIG_DIR_ENV)
    if base and (Path(base) / p).exists():
        return Path(base) / p
    return p


def validate(doc: dict) -> dict:
    """Validate against the schema and fill defaults. Returns a new dict."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigFileError(f"{where}: {exc.message}") from None
    merged = copy.deepcopy(DEFAULTS)
    for key, value in doc.items():
        if isinstance(value, dict):
            merged[key].update(value)
        else:
            merged[key] = value
    return merged


def load(path: str | os.PathLike | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    p = resolve_path(path)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigFileError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigFileError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigFileError("config must be a JSON object")
    return validate(doc)


def sim_config(cfg: dict) -> SimConfig:
    return SimConfig(
        m=cfg["m"],
        nodes_per_domain=cfg["nodes_per_domain"],
        l=cfg["l"],
        t=cfg["t"],
        difficulty_bits=cfg["difficulty_bits"],
        seed=cfg["seed"],
        tx_per_block=cfg["tx_per_block"],
        initiator=cfg["initiator"],
        failure_schedule=FailureSchedule(tuple((e["domain"], e["at_round"]) for e in cfg["failure_schedule"])),
        scheme=SchemeId[cfg["scheme"].upper()],
    )


def capacity_params(cfg: dict) -> CapacityParams:
    c = cfg["capacity"]
    return CapacityParams(tau=c["tau"], tau_fork=c["tau_fork"], c_txs=c["c_txs"], block_size_mb=c["block_size_mb"])


def mc_config(cfg: dict, m: int, alpha: float, x: float, f: int = 0) -> McConfig:
    mc = cfg["monte_carlo"]
    return McConfig(
        N=mc["N"],
        m=m,
        alpha=float(alpha),
        top_x_percent=float(x),
        trials=mc["trials"],
        failed_domains=f,
        failure_mode=FailureMode(mc["failure_mode"]),
        seed=cfg["seed"],
        bin_width=mc["bin_width"],
    )
