"""Closed-loop PETC simulation and run-containment checks.

The plant is integrated exactly between samples for the held input; the
disturbance convolution over one sampling interval is integrated exactly for
signals that are constant on the sampling grid and with composite
Gauss-Legendre quadrature otherwise.  Since it does not depend on the state,
it is computed once per signal and shared by every trace that uses it.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .dynamics import exp_integral, lifted
from .model import PetcSystem
from .partition import Partition

log = logging.getLogger(__name__)

QUADRATIC = "quadratic"
MAEI = "maei"

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(3)


class DisturbanceError(ValueError):
    pass


class ConfigMismatch(ValueError):
    pass


@dataclass(frozen=True)
class DisturbanceSignal:
    """Disturbance ``w(t)`` of dimension ``n_w``.

    kinds:
      ``zero``;
      ``sinusoid``: ``amplitude * sin(frequency * t)`` on ``window`` (else 0);
      ``step``: ``amplitude`` for ``t >= t_step`` (within ``window`` if given);
      ``random``: piecewise constant on intervals of ``hold`` seconds with
      ``|w| <= amplitude``; ``bang_bang`` draws only ``+-amplitude``.
    Vector disturbances use ``direction`` (unit-normalized) for the
    deterministic kinds.
    """

    kind: str = "zero"
    amplitude: float = 0.0
    frequency: float = np.pi
    window: tuple[float, float] | None = None
    t_step: float = 0.0
    hold: float = 0.0
    bang_bang: bool = False
    seed: int = 0
    n_w: int = 1
    direction: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "sinusoid", "step", "random"):
            raise DisturbanceError(f"unknown disturbance kind {self.kind!r}")
        if self.amplitude < 0:
            raise DisturbanceError("amplitude must be nonnegative")
        if self.kind == "random" and not self.hold > 0:
            raise DisturbanceError("random disturbances need a positive hold time")

    @classmethod
    def from_dict(cls, d: dict, n_w: int = 1) -> "DisturbanceSignal":
        d = dict(d)
        if "window" in d and d["window"] is not None:
            d["window"] = tuple(float(v) for v in d["window"])
        if "direction" in d and d["direction"] is not None:
            d["direction"] = tuple(float(v) for v in d["direction"])
        d.setdefault("n_w", n_w)
        return cls(**d)

    def _dir(self) -> np.ndarray:
        v = np.ones(self.n_w) if self.direction is None else np.asarray(self.direction, float)
        if v.shape != (self.n_w,):
            raise DisturbanceError(f"direction must have length {self.n_w}")
        return v / np.linalg.norm(v)

    def _in_window(self, t):
        if self.window is None:
            return np.ones_like(t, dtype=bool)
        return (t >= self.window[0]) & (t <= self.window[1])

    def _random_values(self, n_intervals: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        U = rng.uniform(-1.0, 1.0, size=(n_intervals, self.n_w))
        if self.bang_bang:
            U = np.sign(U)
            U[U == 0] = 1.0
            U /= np.sqrt(self.n_w)
        else:
            nrm = np.linalg.norm(U, axis=1)
            U /= np.maximum(1.0, nrm)[:, None]
        return self.amplitude * U

    def __call__(self, t) -> np.ndarray:
        """Values at times ``t`` as an array of shape ``(len(t), n_w)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.kind == "zero" or self.amplitude == 0.0:
            return np.zeros((len(t), self.n_w))
        if self.kind == "sinusoid":
            s = self.amplitude * np.sin(self.frequency * t) * self._in_window(t)
            return s[:, None] * self._dir()
        if self.kind == "step":
            s = self.amplitude * ((t >= self.t_step) & self._in_window(t))
            return s[:, None] * self._dir()
        idx = np.floor(t / self.hold + 1e-9).astype(int)
        vals = self._random_values(int(idx.max()) + 1)
        return vals[idx]

    def grid_constant(self, h: float) -> bool:
        """True when the signal is constant on every sampling interval."""
        def aligned(x):
            return abs(x / h - round(x / h)) < 1e-9
        if self.kind == "zero" or self.amplitude == 0.0:
            return True
        if self.kind == "step":
            return aligned(self.t_step) and (self.window is None or all(map(aligned, self.window)))
        if self.kind == "random":
            return aligned(self.hold)
        return False

    def sup_norm_bound(self) -> float:
        return float(self.amplitude)


def _quad_nodes(h: float, substeps: int):
    """Nodes in ``[0, h)`` and weights of composite 3-point Gauss-Legendre."""
    edges = np.linspace(0.0, h, substeps + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * _GL_NODES[None]).ravel()
    weights = (half[:, None] * _GL_WEIGHTS[None]).ravel()
    return nodes, weights


def disturbance_increments(sys: PetcSystem, w: DisturbanceSignal, n_steps: int,
                           substeps: int = 100) -> np.ndarray:
    """``int_{t_k}^{t_k + h} expm(A_p (t_k + h - s)) E w(s) ds`` for ``k < n_steps``.

    Raises :class:`DisturbanceError` if ``|w|`` exceeds the system's bound at
    any quadrature node or grid point.
    """
    p, h = sys.plant, sys.h
    n_p = p.n_p
    if w.n_w != p.n_w:
        raise DisturbanceError(f"disturbance dimension {w.n_w} != plant n_w {p.n_w}")
    if w.sup_norm_bound() > sys.W * (1 + 1e-12):
        raise DisturbanceError(f"disturbance amplitude {w.amplitude} exceeds bound W={sys.W}")
    if w.kind == "zero" or w.amplitude == 0.0 or not np.any(p.E):
        return np.zeros((n_steps, n_p))
    t_grid = h * np.arange(n_steps)
    if w.grid_constant(h):
        vals = w(t_grid + 0.5 * h)
        _check_bound(vals, sys.W)
        _, Jh = exp_integral(p.A_p, h)
        return vals @ (Jh @ p.E).T
    nodes, weights = _quad_nodes(h, substeps)
    kernels = np.stack([exp_integral(p.A_p, h - s)[0] @ p.E for s in nodes])  # (q, n_p, n_w)
    out = np.empty((n_steps, n_p))
    chunk = max(1, 200000 // len(nodes))
    for a in range(0, n_steps, chunk):
        tk = t_grid[a:a + chunk]
        T = (tk[:, None] + nodes[None]).ravel()
        vals = w(T).reshape(len(tk), len(nodes), -1)
        _check_bound(vals.reshape(-1, vals.shape[-1]), sys.W)
        out[a:a + chunk] = np.einsum("q,qij,kqj->ki", weights, kernels, vals)
    return out


def _check_bound(vals, W):
    nrm = np.linalg.norm(vals, axis=-1)
    if nrm.size and nrm.max() > W * (1 + 1e-12):
        raise DisturbanceError(f"|w| reaches {nrm.max():g} > W={W}")


def richardson_error(sys: PetcSystem, w: DisturbanceSignal, n_steps: int,
                     substeps: int = 100) -> float:
    """Max relative change of the increments when the substep count is doubled."""
    a = disturbance_increments(sys, w, n_steps, substeps)
    b = disturbance_increments(sys, w, n_steps, 2 * substeps)
    scale = max(float(np.abs(b).max()), 1e-300)
    return float(np.abs(a - b).max()) / scale


@dataclass
class EventRecord:
    k_b: int  # sample index of the event that starts the interval
    steps: int
    reason: str
    src: tuple[int, int]
    dst: tuple[int, int]
    x_src: np.ndarray
    x_dst: np.ndarray


@dataclass
class Trace:
    h: float
    states: np.ndarray | None  # (n_samples + 1, n_x) or None when not stored
    event_samples: list[int]
    events: list[EventRecord]
    seed: int | None = None
    disturbance: DisturbanceSignal | None = None
    config_hash: str = ""

    @property
    def event_times(self) -> np.ndarray:
        return self.h * np.asarray(self.event_samples)

    def to_csv(self, partition: Partition) -> str:
        if self.states is None:
            raise ValueError("trace was simulated without storing states")
        buf = io.StringIO()
        buf.write(f"# seed={self.seed} config_hash={self.config_hash}\n")
        w = csv.writer(buf, lineterminator="\n")
        n = self.states.shape[1]
        w.writerow(["t"] + [f"x{i}" for i in range(n)] + ["event", "s1", "s2", "reason"])
        reasons = {e.k_b + e.steps: e.reason for e in self.events}
        ev = set(self.event_samples)
        ids = partition.classify_many(self.states)
        for k, x in enumerate(self.states):
            w.writerow([f"{k * self.h:.12g}"] + [f"{v:.12g}" for v in x]
                       + [int(k in ev), ids[k, 0], ids[k, 1], reasons.get(k, "")])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"seed": self.seed, "h": self.h, "config_hash": self.config_hash,
                "event_samples": self.event_samples,
                "events": [{"k_b": e.k_b, "steps": e.steps, "reason": e.reason,
                            "src": list(e.src), "dst": list(e.dst)} for e in self.events]}


def simulate_batch(sys: PetcSystem, partition: Partition, maei_table: dict, X0,
                   signals, T: float, substeps: int = 100, store_states: bool = False,
                   seeds=None, config_hash: str = "") -> list[Trace]:
    """Simulate ``len(X0)`` traces in lockstep.

    ``signals`` is one :class:`DisturbanceSignal` shared by all traces or a
    list with one per trace.  ``maei_table`` maps cone index to MAEI steps.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    N, n = X0.shape
    if n != sys.n_x:
        raise ValueError(f"initial states have dimension {n}, expected {sys.n_x}")
    h = sys.h
    K = int(round(T / h))
    if K < 0 or abs(K * h - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not a multiple of h={h}")
    if isinstance(signals, DisturbanceSignal):
        signals = [signals] * N
    if len(signals) != N:
        raise ValueError("need one disturbance signal per initial state")
    cache, D = {}, np.empty((N, K, sys.plant.n_p))
    for i, s in enumerate(signals):
        if s not in cache:
            cache[s] = disturbance_increments(sys, s, K, substeps)
        D[i] = cache[s]
    maei = np.array([maei_table[c.s1] for c in partition.cones])

    p, c = sys.plant, sys.ctrl
    n_p = p.n_p
    Ah, Jh = exp_integral(p.A_p, h)
    Ad_T, JB_T = Ah.T, (Jh @ p.B_p).T
    Q, CE = sys.Q.Q, sys.C_E

    X = X0.copy()
    X_last = X.copy()
    ids = partition.classify_many(X)
    src = ids.copy()
    k_since = np.zeros(N, dtype=int)
    limit = maei[src[:, 0] - 1]
    evs = [[] for _ in range(N)]
    ev_samples = [[0] for _ in range(N)]
    states = np.empty((K + 1, N, n)) if store_states else None
    if store_states:
        states[0] = X

    def held(Xl):
        y_hat = Xl[:, :n_p] @ p.C_p.T
        v_hat = Xl[:, n_p:] @ c.C_c.T + y_hat @ c.D_c.T
        return y_hat, v_hat

    y_hat, v_hat = held(X)
    for k in range(K):
        Xp = X[:, :n_p] @ Ad_T + v_hat @ JB_T + D[:, k]
        Xc = X[:, n_p:] @ c.A_c.T + y_hat @ c.B_c.T
        X = np.hstack([Xp, Xc])
        k_since += 1
        if store_states:
            states[k + 1] = X
        Z = np.hstack([X, X_last @ CE.T])
        gamma = np.einsum("ij,jk,ik->i", Z, Q, Z)
        quad = gamma > 0
        fire = quad | (k_since >= limit)
        if fire.any():
            idx = np.flatnonzero(fire)
            new_ids = partition.classify_many(X[idx])
            for j, i in enumerate(idx):
                evs[i].append(EventRecord(k + 1 - int(k_since[i]), int(k_since[i]),
                                          QUADRATIC if quad[i] else MAEI,
                                          (int(src[i, 0]), int(src[i, 1])),
                                          (int(new_ids[j, 0]), int(new_ids[j, 1])),
                                          X_last[i].copy(), X[i].copy()))
                ev_samples[i].append(k + 1)
            X_last[idx] = X[idx]
            src[idx] = new_ids
            k_since[idx] = 0
            limit[idx] = maei[new_ids[:, 0] - 1]
            y_hat[idx], v_hat[idx] = held(X[idx])
    out = []
    for i in range(N):
        st = states[:, i, :] if store_states else None
        out.append(Trace(h, st, ev_samples[i], evs[i],
                         None if seeds is None else seeds[i], signals[i], config_hash))
    return out


def simulate(sys: PetcSystem, partition: Partition, maei_table: dict, x0,
             w: DisturbanceSignal, T: float, substeps: int = 100) -> Trace:
    """Single trace with sampled states stored."""
    return simulate_batch(sys, partition, maei_table, np.reshape(x0, (1, -1)), [w], T,
                          substeps, store_states=True)[0]


def exact_event_steps_w0(sys: PetcSystem, x, k_cap: int) -> np.ndarray | int:
    """Smallest ``k in 1..k_cap`` with a positive trigger form under ``w = 0``; ``k_cap`` otherwise.

    ``x`` may be one state or a batch of states (rows).
    """
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    dyn = lifted(sys)
    Q, CE = sys.Q.Q, sys.C_E
    Yc = X @ CE.T
    res = np.full(len(X), k_cap, dtype=int)
    pending = np.ones(len(X), dtype=bool)
    for k in range(1, k_cap + 1):
        if not pending.any():
            break
        Z = np.hstack([X[pending] @ dyn.M(k).T, Yc[pending]])
        pos = np.einsum("ij,jk,ik->i", Z, Q, Z) > 0
        where = np.flatnonzero(pending)[pos]
        res[where] = k
        pending[where] = False
    return int(res[0]) if single else res


def random_states(partition: Partition, N: int, rng: np.random.Generator,
                  r_min: float = 0.05, r_max: float | None = None) -> np.ndarray:
    """Uniform directions with log-uniform radii in ``[r_min, r_max]``."""
    if r_max is None:
        r_max = 0.9 * partition.W_trunc
    U = rng.standard_normal((N, partition.n_x))
    U /= np.linalg.norm(U, axis=1)[:, None]
    r = np.exp(rng.uniform(np.log(r_min), np.log(r_max), N))
    return U * r[:, None]


def disturbance_mix(spec: list[dict], N: int, W: float, seed_seq: np.random.SeedSequence,
                    n_w: int = 1) -> tuple[list[DisturbanceSignal], list[int]]:
    """Cycle through ``spec`` entries; random kinds get an independent seed per trace."""
    children = seed_seq.spawn(N)
    signals, seeds = [], []
    for i in range(N):
        d = dict(spec[i % len(spec)])
        seed = int(children[i].generate_state(1, np.uint64)[0])
        if d.get("kind") == "random":
            d["seed"] = seed
        d.setdefault("amplitude", W)
        signals.append(DisturbanceSignal.from_dict(d, n_w))
        seeds.append(seed)
    return signals, seeds


@dataclass
class VerifyReport:
    events: int = 0
    interval_violations: list = field(default_factory=list)
    edge_violations: list = field(default_factory=list)
    pipe_violations: list = field(default_factory=list)
    maei_violations: list = field(default_factory=list)
    excursions: int = 0

    @property
    def passed(self) -> bool:
        return not (self.interval_violations or self.edge_violations
                    or self.pipe_violations or self.maei_violations)

    def summary(self) -> dict:
        return {"events": self.events, "passed": self.passed, "excursions": self.excursions,
                "interval_violations": len(self.interval_violations),
                "edge_violations": len(self.edge_violations),
                "pipe_violations": len(self.pipe_violations),
                "maei_violations": len(self.maei_violations)}


def verify(traces, abstraction, reach=None, partition: Partition | None = None) -> VerifyReport:
    """Check every event of every trace against the abstraction and the flow pipes.

    Raises :class:`ConfigMismatch` if the artifacts carry different
    configuration hashes.
    """
    hashes = {abstraction.meta.get("config_hash", "")}
    if reach is not None:
        hashes.add(getattr(reach, "config_hash", ""))
    hashes |= {t.config_hash for t in traces}
    hashes.discard("")
    if len(hashes) > 1:
        raise ConfigMismatch(f"artifacts come from different configurations: {sorted(hashes)}")
    W_trunc = partition.W_trunc if partition is not None else np.inf
    rep = VerifyReport()
    for ti, tr in enumerate(traces):
        for e in tr.events:
            rep.events += 1
            where = (ti, e.k_b)
            lo, hi = abstraction.intervals[e.src]
            if not lo <= e.steps <= hi:
                rep.interval_violations.append((where, e.src, e.steps, (lo, hi)))
            if e.reason == MAEI and e.steps > hi:
                rep.maei_violations.append((where, e.src, e.steps))
            if not abstraction.has_edge(e.src, e.dst):
                rep.edge_violations.append((where, e.src, e.dst))
            if reach is None:
                continue
            if np.linalg.norm(e.x_src) > W_trunc:
                rep.excursions += 1
                continue
            pipe = reach.pipes[e.src]
            try:
                ok = pipe.contains(e.x_dst, e.steps)
            except KeyError:
                ok = False
            if not ok:
                rep.pipe_violations.append((where, e.src, e.steps))
    return rep
