"""Serialization helpers: RFC-4180 CSV with 17 significant digits and JSON
documents stamped with the hash of the resolved configuration."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

__all__ = ["config_hash", "format_value", "write_csv", "write_json", "load_schema",
           "validate_config", "to_jsonable"]


def to_jsonable(obj):
    """Recursively convert numpy scalars and arrays into plain Python."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON form of ``config`` (first 16 hex digits)."""
    text = json.dumps(to_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows, chash: str) -> Path:
    """Write ``rows`` under ``header`` plus a trailing ``config_hash`` column."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(list(header) + ["config_hash"])
        for row in rows:
            w.writerow([format_value(v) for v in row] + [chash])
    return path


def write_json(path, payload: dict, config: dict, chash: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"config_hash": chash, "config": to_jsonable(config), **to_jsonable(payload)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_schema() -> dict:
    text = resources.files("harmonic_ness").joinpath("config_schema.json").read_text()
    return json.loads(text)


def validate_config(config: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if ``config`` breaks the schema."""
    jsonschema.validate(config, load_schema())
