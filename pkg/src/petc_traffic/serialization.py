"""Byte-stable JSON helpers shared by every exporter."""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

SIG_DIGITS = 12


def round_sig(x: float, digits: int = SIG_DIGITS) -> float:
    if x == 0 or not math.isfinite(x):
        return float(x)
    return float(f"{x:.{digits}g}")


def normalize(obj):
    """Recursively convert numpy data to plain Python with floats at 12 significant digits."""
    if isinstance(obj, dict):
        return {str(k): normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [normalize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return normalize(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return None
        return round_sig(x)
    return obj


def dumps(obj) -> str:
    return json.dumps(normalize(obj), sort_keys=True, indent=1) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical JSON form of a configuration mapping."""
    canon = json.dumps(normalize(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
