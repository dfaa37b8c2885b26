"""Finite quotient system: one state per region, step-interval outputs, edges from reachability."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from . import serialization as ser
from .bounds import BoundsTable
from .partition import Partition


class AbstractionError(ValueError):
    pass


@dataclass
class Abstraction:
    """Regions with output intervals ``[lo, hi]`` in samples and the transition relation.

    ``epsilon`` is ``h * max(hi - lo)`` in seconds.  Every region is initial and
    the system has no inputs.
    """

    h: float
    intervals: dict  # (s1, s2) -> (lo, hi)
    transitions: dict  # (s1, s2) -> sorted list of successor ids
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.intervals = {tuple(k): (int(v[0]), int(v[1])) for k, v in self.intervals.items()}
        self.transitions = {tuple(k): sorted(tuple(d) for d in v)
                            for k, v in self.transitions.items()}

    @property
    def regions(self) -> list[tuple[int, int]]:
        return sorted(self.intervals)

    @property
    def epsilon(self) -> float:
        return precision(self)

    def edges(self) -> list[tuple[tuple[int, int], tuple[int, int]]]:
        return [(s, d) for s in sorted(self.transitions) for d in self.transitions[s]]

    def has_edge(self, src, dst) -> bool:
        return tuple(dst) in self.transitions.get(tuple(src), ())

    def validate(self) -> None:
        l_bar = self.meta.get("l_bar")
        for rid, (lo, hi) in self.intervals.items():
            if not 1 <= lo <= hi:
                raise AbstractionError(f"region {rid}: empty output interval [{lo}, {hi}]")
            if l_bar is not None and hi > l_bar:
                raise AbstractionError(f"region {rid}: upper bound {hi} exceeds l_bar {l_bar}")
        if set(self.transitions) - set(self.intervals):
            raise AbstractionError("transition source outside the state set")
        for rid in self.intervals:
            succ = self.transitions.get(rid, [])
            if not succ:
                raise AbstractionError(f"region {rid} has no outgoing transition")
            for d in succ:
                if d not in self.intervals:
                    raise AbstractionError(f"edge {rid} -> {d} leaves the state set")

    def without_edge(self, src, dst) -> "Abstraction":
        """Copy with one edge removed (used for mutation tests)."""
        trans = {k: [d for d in v if not (k == tuple(src) and d == tuple(dst))]
                 for k, v in self.transitions.items()}
        return Abstraction(self.h, dict(self.intervals), trans, dict(self.meta))

    def to_dict(self) -> dict:
        states = []
        for rid in self.regions:
            lo, hi = self.intervals[rid]
            states.append({"id": list(rid), "k_lo": lo, "k_hi": hi,
                           "t_lo_s": lo * self.h, "t_hi_s": hi * self.h, "maei_s": hi * self.h})
        return {"meta": {**self.meta, "h": self.h},
                "states": states,
                "edges": [[list(a), list(b)] for a, b in self.edges()],
                "epsilon_s": self.epsilon,
                "config_hash": self.meta.get("config_hash", "")}

    @classmethod
    def from_dict(cls, d: dict) -> "Abstraction":
        meta = dict(d["meta"])
        h = meta.pop("h")
        intervals = {tuple(s["id"]): (s["k_lo"], s["k_hi"]) for s in d["states"]}
        trans = {rid: [] for rid in intervals}
        for a, b in d["edges"]:
            trans.setdefault(tuple(a), []).append(tuple(b))
        return cls(h, intervals, trans, meta)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Abstraction):
            return NotImplemented
        return ser.normalize(self.to_dict()) == ser.normalize(other.to_dict())


def assemble(partition: Partition, table: BoundsTable, transitions: dict,
             meta: dict | None = None) -> Abstraction:
    """Outputs ``[k_lo + 1, k_hi]`` per region, with the perturbed lower bound.

    With ``W = 0`` the perturbed bound coincides with the disturbance-free one.
    """
    ids = set(partition.ids)
    if set(table.regions) != ids:
        raise AbstractionError("bounds table and partition have different regions")
    if set(transitions) != ids:
        raise AbstractionError("transition relation and partition have different regions")
    intervals = {rid: table.interval(rid) for rid in partition.ids}
    m = {"sigma": None, "W": table.W, "l_bar": table.l_bar, "partition": partition.config(),
         "config_hash": table.config_hash}
    m.update(meta or {})
    margins = {f"{a},{b}": [rb.margin_lower, rb.margin_upper]
               for (a, b), rb in sorted(table.regions.items())}
    m.setdefault("solver_margins", margins)
    abs_ = Abstraction(table.h, intervals, transitions, m)
    abs_.validate()
    return abs_


def precision(abs_: Abstraction) -> float:
    """``h * max(hi - lo)`` over all regions, in seconds."""
    return abs_.h * max(hi - lo for lo, hi in abs_.intervals.values())


def to_dot(abs_: Abstraction) -> str:
    lines = ["digraph petc_traffic {"]
    name = {rid: f"r{rid[0]}_{rid[1]}" for rid in abs_.regions}
    for rid in abs_.regions:
        lo, hi = abs_.intervals[rid]
        lines.append(f'  {name[rid]} [label="({rid[0]},{rid[1]}):[{lo},{hi}]"];')
    for a, b in abs_.edges():
        lines.append(f"  {name[a]} -> {name[b]};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export(abs_: Abstraction, path, format: str = "json") -> Path:
    """Write the abstraction as structured JSON or as a DOT graph."""
    abs_.validate()
    path = Path(path)
    if format == "json":
        return ser.write_json(path, abs_.to_dict())
    if format == "dot":
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(to_dot(abs_), encoding="utf-8")
        return path
    raise ValueError(f"unknown export format {format!r}")


def load(path) -> Abstraction:
    return Abstraction.from_dict(ser.read_json(path))
