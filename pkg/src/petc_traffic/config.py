"""Run configuration: parsing, validation and the configuration hash."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import serialization as ser
from .bounds import BoundsConfig
from .model import DimensionError, PetcSystem
from .partition import Partition, build_partition


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, msg: str):
        super().__init__(f"{field}: {msg}")
        self.field = field


DEFAULTS = {
    "system": {"controller": {}},
    "partition": {"q1": 8, "q2": 6, "radii": "auto", "W_first": 0.5, "W_last": 8.0,
                  "W_trunc": None, "arc_segments": 8},
    "solver": {"margin": 1e-8, "max_iters": 100, "psi_mode": "free", "psi_scale": 1.0,
               "k_cap": 20000},
    "simulation": {"T": 10.0, "n_traces": 1000, "seed": 0, "substeps": 100,
                   "r_min": 0.05, "r_max": None,
                   "disturbances": [{"kind": "zero"}]},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _matrix(d: dict, key: str, field: str, required: bool = True):
    if key not in d or d[key] is None:
        if required:
            raise ConfigError(field, "missing")
        return None
    try:
        M = np.array(d[key], dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(field, "not a numeric matrix") from None
    if M.ndim == 1:
        M = M.reshape(-1, 1) if key in ("B_p", "E", "B_c") else M.reshape(1, -1)
    if M.ndim != 2:
        raise ConfigError(field, f"expected a 2-D row-major matrix, got {M.ndim} dimensions")
    return M


@dataclass
class RunConfig:
    data: dict

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        cfg = cls(_merge(DEFAULTS, d))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            d = ser.read_json(path)
        except ValueError as exc:
            raise ConfigError(str(path), f"invalid JSON: {exc}") from None
        return cls.from_dict(d)

    def with_seed(self, seed: int) -> "RunConfig":
        d = copy.deepcopy(self.data)
        d["simulation"]["seed"] = int(seed)
        return RunConfig.from_dict(d)

    def to_dict(self) -> dict:
        return ser.normalize(self.data)

    @property
    def hash(self) -> str:
        return ser.config_hash(self.data)

    def validate(self) -> None:
        d = self.data
        for key in ("sigma", "h", "W"):
            if key not in d:
                raise ConfigError(key, "missing")
            if not isinstance(d[key], (int, float)) or isinstance(d[key], bool):
                raise ConfigError(key, "must be a number")
        try:
            self.system()
        except DimensionError as exc:
            raise ConfigError(f"system.{exc.pair[0]}/{exc.pair[1]}", str(exc)) from None
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError("system", str(exc)) from None
        part = d["partition"]
        for key in ("q1", "q2", "arc_segments"):
            if not isinstance(part[key], int) or part[key] < 1:
                raise ConfigError(f"partition.{key}", "must be a positive integer")
        try:
            self.partition()
        except ValueError as exc:
            raise ConfigError("partition", str(exc)) from None
        try:
            self.bounds_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError("solver", str(exc)) from None
        sim = d["simulation"]
        T, h = float(sim["T"]), float(d["h"])
        if T < 0 or abs(round(T / h) * h - T) > 1e-9 * max(1.0, T):
            raise ConfigError("simulation.T", f"must be a nonnegative multiple of h={h}")
        if not isinstance(sim["n_traces"], int) or sim["n_traces"] < 1:
            raise ConfigError("simulation.n_traces", "must be a positive integer")
        if not sim["disturbances"]:
            raise ConfigError("simulation.disturbances", "need at least one disturbance")
        for i, w in enumerate(sim["disturbances"]):
            amp = w.get("amplitude", d["W"])
            if amp > d["W"] * (1 + 1e-12):
                raise ConfigError(f"simulation.disturbances[{i}].amplitude",
                                  f"{amp} exceeds the disturbance bound W={d['W']}")

    def system(self) -> PetcSystem:
        d, s = self.data, self.data["system"]
        ctrl = s.get("controller", {})
        kw = {}
        if "K" in ctrl:
            kw["K"] = _matrix(ctrl, "K", "system.controller.K")
        else:
            for key in ("A_c", "B_c", "C_c", "D_c"):
                M = _matrix(ctrl, key, f"system.controller.{key}", required=False)
                if M is not None:
                    kw[key] = M
            if "D_c" not in kw:
                raise ConfigError("system.controller", "need K or the matrices A_c, B_c, C_c, D_c")
        C_p = _matrix(s, "C_p", "system.C_p", required=False)
        A_p = _matrix(s, "A_p", "system.A_p")
        if C_p is None:
            C_p = np.eye(A_p.shape[0])
        return PetcSystem.from_matrices(
            A_p, _matrix(s, "B_p", "system.B_p"), _matrix(s, "E", "system.E"), C_p,
            sigma=float(d["sigma"]), h=float(d["h"]), W=float(d["W"]), **kw)

    def partition(self) -> Partition:
        p = self.data["partition"]
        n_x = self._n_x()
        return build_partition(n_x, p["q1"], p["q2"], p["radii"], W_first=p["W_first"],
                               W_last=p["W_last"], W_trunc=p["W_trunc"])

    def _n_x(self) -> int:
        s = self.data["system"]
        n_p = len(s["A_p"])
        ctrl = s.get("controller", {})
        n_c = 0 if "K" in ctrl or ctrl.get("A_c") is None else len(ctrl["A_c"])
        return n_p + n_c

    def bounds_config(self) -> BoundsConfig:
        s = self.data["solver"]
        return BoundsConfig(margin=float(s["margin"]), k_cap=int(s["k_cap"]),
                            psi_mode=s["psi_mode"], psi_scale=float(s["psi_scale"]),
                            max_iters=int(s["max_iters"]))

    @property
    def simulation(self) -> dict:
        return self.data["simulation"]

    @property
    def arc_segments(self) -> int:
        return int(self.data["partition"]["arc_segments"])


def example_config_path() -> Path:
    return Path(str(resources.files("petc_traffic") / "data" / "example.json"))


def example_config() -> RunConfig:
    return RunConfig.load(example_config_path())
