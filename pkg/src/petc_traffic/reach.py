"""Flow pipes and the transition relation of the quotient system.

Regions are symmetric under ``x -> -x`` and so are the dynamics and the
disturbance ball, so every pipe is built from the canonical half of its
source region (first coordinate pair with the ``+`` sign).  A state ``x``
lies in the pipe when ``x`` or ``-x`` lies in the canonical pipe.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from cvxopt import matrix, solvers

from .bounds import BoundsTable, RegionBounds
from .dynamics import lifted
from .model import PetcSystem
from .partition import Partition, Region
from .polytope import (InflatedPolytope, Polytope, clip_polygon, map_polytope,
                       norm_range_halfspaces, norm_range_polygon)

log = logging.getLogger(__name__)

# Relative slack on norm comparisons in intersection tests; errs toward "intersects".
_NORM_SLACK = 1e-9


def overapprox_region(region: Region, W_trunc: float | None = None, m: int = 8,
                      n_dirs: int = 64) -> Polytope:
    """Polytope containing the canonical half of ``region``.

    In 2D the outer arc is replaced by ``m`` tangent segments and the inner
    arc by its chord.  In higher dimensions the polytope is
    ``{x : d' x <= W_hi |proj_C(d)|}`` over ``n_dirs`` deterministic unit
    directions plus the coordinate axes, where ``proj_C`` is the projection
    onto the closest cone piece; this is the support function of the
    truncated canonical half, so the bound holds for degenerate pieces too.
    The inner radius is ignored.
    """
    W_lo, W_hi = region.shell.inner, region.shell.outer
    if np.isinf(W_hi):
        if W_trunc is None:
            raise ValueError(f"region {region.id} is unbounded; a truncation radius is required")
        W_hi = float(W_trunc)
    if W_hi <= W_lo:
        raise ValueError(f"truncation radius {W_hi} must exceed the inner radius {W_lo}")
    n = region.cone.n_x
    if n == 1:
        return Polytope.from_vertices([[W_lo], [W_hi]])
    if n == 2:
        lo, hi = region.cone.intervals[0]
        if m < 1:
            raise ValueError("m must be >= 1")
        span = hi - lo
        step = span / m
        R = W_hi / np.cos(0.5 * step)
        ang = lo + step * np.arange(m + 1)
        pts = [R * np.column_stack([np.cos(ang), np.sin(ang)])]
        if W_lo > 0:
            pts.append(W_lo * np.array([[np.cos(lo), np.sin(lo)], [np.cos(hi), np.sin(hi)]]))
        else:
            pts.append(np.zeros((1, 2)))
        return Polytope.from_vertices(np.vstack(pts))
    rng = np.random.default_rng(12345)
    D = rng.standard_normal((n_dirs, n))
    D = np.vstack([D / np.linalg.norm(D, axis=1)[:, None], np.eye(n), -np.eye(n)])
    pieces = region.cone.pieces()
    b = np.array([W_hi * max(np.linalg.norm(cone_projection(G, d)) for G in pieces)
                  for d in D])
    return Polytope.from_halfspaces(D, b * (1 + 1e-9) + 1e-12)


def cone_projection(G: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Euclidean projection of ``d`` onto the cone ``{y : G y >= 0}``."""
    if G.size == 0 or np.all(G @ d >= 0):
        return d
    n = len(d)
    sol = solvers.qp(matrix(np.eye(n)), matrix(-d), matrix(-G), matrix(np.zeros(len(G))),
                     options={"show_progress": False, "abstol": 1e-12, "reltol": 1e-12,
                              "feastol": 1e-12})
    return np.array(sol["x"]).ravel()


@dataclass
class ReachSlice:
    k: int
    polytope: Polytope  # M(k) applied to the source polytope
    ball_radius: float

    @property
    def set(self) -> InflatedPolytope:
        return InflatedPolytope(self.polytope, self.ball_radius)

    def contains(self, X, tol: float = 1e-9) -> np.ndarray:
        """Symmetric membership: ``x`` or ``-x`` in the inflated polytope."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        S = self.set
        return S.contains(X, tol) | S.contains(-X, tol)


@dataclass
class FlowPipe:
    region_id: tuple[int, int]
    source: Polytope
    slices: list[ReachSlice]

    def slice(self, k: int) -> ReachSlice:
        k0 = self.slices[0].k
        if not k0 <= k <= self.slices[-1].k:
            raise KeyError(f"step {k} outside pipe range [{k0}, {self.slices[-1].k}]")
        return self.slices[k - k0]

    def contains(self, x, k: int | None = None, tol: float = 1e-9) -> bool:
        if k is not None:
            return bool(self.slice(k).contains(x, tol)[0])
        return any(bool(s.contains(x, tol)[0]) for s in self.slices)

    def dump(self) -> dict:
        return {"id": list(self.region_id),
                "source": self.source.vertices,
                "slices": [{"k": s.k, "vertices": s.polytope.vertices,
                            "ball_radius": s.ball_radius} for s in self.slices]}


def build_flow_pipe(sys: PetcSystem, region: Region, bounds: RegionBounds,
                    W_trunc: float | None = None, m: int = 8) -> FlowPipe:
    """One slice per ``k`` from ``k_lower_perturbed`` to ``k_upper_w0``."""
    dyn = lifted(sys)
    X0 = overapprox_region(region, W_trunc, m)
    slices = [ReachSlice(k, map_polytope(dyn.M(k), X0), dyn.theta_radius(k))
              for k in range(bounds.k_lower_perturbed, bounds.k_upper_w0 + 1)]
    return FlowPipe(region.id, X0, slices)


def _target_pieces(region: Region) -> list[np.ndarray]:
    pieces = region.cone.pieces()
    return pieces + [-G for G in pieces if G.size]


def _norm_range(S: InflatedPolytope, G: np.ndarray) -> tuple[float, float]:
    """Norm range over the outer polytope of ``S`` clipped to ``{G x >= 0}``."""
    if S.polytope.n == 2:
        return norm_range_polygon(clip_polygon(S.outer_vertices(), G))
    A, b = S.outer_halfspaces()
    return norm_range_halfspaces(np.vstack([A, -G]), np.r_[b, np.zeros(len(G))])


def _shell_hits(lo: float, hi: float, partition: Partition) -> list[int]:
    if hi < lo:
        return []
    out = []
    for sh in partition.shells:
        slack = _NORM_SLACK * max(1.0, hi)
        if hi >= sh.inner - slack and lo <= sh.outer + slack:
            out.append(sh.s2)
    return out


def intersects(pipe_or_slice, target: Region) -> bool:
    """Conservative test of ``target`` meeting the slice or any slice of the pipe."""
    slices = pipe_or_slice.slices if isinstance(pipe_or_slice, FlowPipe) else [pipe_or_slice]
    W_lo, W_hi = target.shell.inner, target.shell.outer
    for s in slices:
        for G in _target_pieces(target):
            lo, hi = _norm_range(s.set, G)
            slack = _NORM_SLACK * max(1.0, hi)
            if hi >= lo and hi >= W_lo - slack and lo <= W_hi + slack:
                return True
    return False


def successors(pipe: FlowPipe, partition: Partition) -> list[tuple[int, int]]:
    """Target region ids met by the pipe, sorted."""
    hits = set()
    cone_pieces = [(c.s1, _target_pieces(Region((c.s1, 1), c, partition.shells[0])))
                   for c in partition.cones]
    for s in pipe.slices:
        S = s.set
        for s1, pieces in cone_pieces:
            for G in pieces:
                lo, hi = _norm_range(S, G)
                for s2 in _shell_hits(lo, hi, partition):
                    hits.add((s1, s2))
    return sorted(hits)


def _pipe_task(args):
    sys, partition, rb, m = args
    region = partition[rb.id]
    pipe = build_flow_pipe(sys, region, rb, partition.W_trunc, m)
    return rb.id, pipe, successors(pipe, partition)


@dataclass
class ReachResult:
    pipes: dict  # region id -> FlowPipe
    transitions: dict  # region id -> sorted list of successor ids
    config_hash: str = ""

    def edges(self) -> list[tuple[tuple[int, int], tuple[int, int]]]:
        return [(src, dst) for src in sorted(self.transitions) for dst in self.transitions[src]]

    def dump(self) -> dict:
        return {"config_hash": self.config_hash,
                "pipes": [self.pipes[rid].dump() for rid in sorted(self.pipes)],
                "edges": [[list(a), list(b)] for a, b in self.edges()]}


def compute_reach(sys: PetcSystem, partition: Partition, table: BoundsTable, m: int = 8,
                  jobs: int = 1, config_hash: str = "") -> ReachResult:
    """Flow pipes and successors of every region; merged by region id."""
    tasks = [(sys, partition, table[rid], m) for rid in partition.ids]
    if jobs <= 1:
        results = [_pipe_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_pipe_task, tasks))
    pipes, trans = {}, {}
    for rid, pipe, succ in results:
        pipes[rid] = pipe
        trans[rid] = succ
        if not succ:
            log.warning("region %s has no successor", rid)
    return ReachResult(pipes, trans, config_hash)
