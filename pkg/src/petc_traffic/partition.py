"""State-space partition: polyhedral double cones crossed with norm shells.

A cone is described, for every consecutive coordinate pair ``(i, i+1)``, by
an angle interval ``[lo, hi]`` inside ``[-pi/2, pi/2]``; the projection of
``x`` on that pair must lie in the double cone spanned by the interval.  The
quadratic ``p' Xi p >= 0`` describing the double cone factors as
``(a' p)(b' p) >= 0`` and membership is decided on the two linear factors,
with a relative slack of 1e-12, so a boundary ray belongs to both adjacent
cones and classification picks the smaller index.

Region ids are ``(s1, s2)`` with 1-based cone index ``s1`` and shell index
``s2``; ``x`` and ``-x`` always share a region.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

HALF_PI = 0.5 * np.pi
# Relative slack on the linear factors; absorbs rounding (e.g. fused multiply-add) on boundary rays.
_FACTOR_TOL = 1e-12


def _in_double_cone(P: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    fa, fb = P @ a, P @ b
    tol = _FACTOR_TOL * np.linalg.norm(P, axis=1)
    return ((fa >= -tol) & (fb >= -tol)) | ((fa <= tol) & (fb <= tol))


def cone_matrix_2d(theta_lo: float, theta_hi: float) -> np.ndarray:
    """2x2 matrix whose quadratic form is nonnegative exactly on the double cone."""
    if not (-HALF_PI - 1e-12 <= theta_lo <= theta_hi <= HALF_PI + 1e-12):
        raise ValueError(f"need -pi/2 <= theta_lo <= theta_hi <= pi/2, got [{theta_lo}, {theta_hi}]")
    sl, sh = np.sin(theta_lo), np.sin(theta_hi)
    cl, ch = np.cos(theta_lo), np.cos(theta_hi)
    off = 0.5 * np.sin(theta_lo + theta_hi)
    return np.array([[-sl * sh, off], [off, -cl * ch]])


def cone_factors_2d(theta_lo: float, theta_hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Normals ``a, b`` with ``p' Xi p = (a' p)(b' p)``.

    ``a' p >= 0`` is the side counter-clockwise of the ray at ``theta_lo`` and
    ``b' p >= 0`` the side clockwise of the ray at ``theta_hi``.
    """
    a = np.array([-np.sin(theta_lo), np.cos(theta_lo)])
    b = np.array([np.sin(theta_hi), -np.cos(theta_hi)])
    return a, b


def lift_pair_matrix(core: np.ndarray, n: int, i: int) -> np.ndarray:
    """Embed a 2x2 matrix on the ``(i, i+1)`` principal block of an ``n x n`` zero matrix."""
    out = np.zeros((n, n))
    out[i:i + 2, i:i + 2] = core
    return out


@dataclass(frozen=True)
class ConeSpec:
    s1: int
    intervals: tuple[tuple[float, float], ...]
    n_x: int

    @property
    def matrices(self) -> list[np.ndarray]:
        """Lifted ``Xi_{s1,(i,i+1)}`` for each coordinate pair."""
        return [lift_pair_matrix(cone_matrix_2d(lo, hi), self.n_x, i)
                for i, (lo, hi) in enumerate(self.intervals)]

    def factors(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [cone_factors_2d(lo, hi) for lo, hi in self.intervals]

    def contains(self, X) -> np.ndarray:
        """Closed double-cone membership for rows of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        ok = np.ones(X.shape[0], dtype=bool)
        for i, (a, b) in enumerate(self.factors()):
            ok &= _in_double_cone(X[:, i:i + 2], a, b)
        return ok

    def pieces(self) -> list[np.ndarray]:
        """Convex polyhedral pieces ``{x : G x >= 0}`` covering the cone up to ``x -> -x``.

        The sign of the first pair is fixed to ``+``, so ``2**(n_x-2)`` pieces
        are returned (one for ``n_x = 2``).
        """
        n = self.n_x
        out = []
        facs = self.factors()
        if not facs:
            return [np.zeros((0, n))]
        for signs in itertools.product((1.0, -1.0), repeat=len(facs) - 1):
            G = np.zeros((2 * len(facs), n))
            for i, ((a, b), s) in enumerate(zip(facs, (1.0,) + signs)):
                G[2 * i, i:i + 2] = s * a
                G[2 * i + 1, i:i + 2] = s * b
            out.append(G)
        return out


@dataclass(frozen=True)
class ShellSpec:
    s2: int
    inner: float
    outer: float  # np.inf for the outermost shell

    def contains(self, X) -> np.ndarray:
        r = np.linalg.norm(np.atleast_2d(X), axis=1)
        return (r >= self.inner) & (r < self.outer)


@dataclass(frozen=True)
class Region:
    id: tuple[int, int]
    cone: ConeSpec
    shell: ShellSpec

    def contains(self, X) -> np.ndarray:
        return self.cone.contains(X) & self.shell.contains(X)


class Partition:
    """Regions ``(s1, s2)`` in lexicographic order; iterable and indexable by id."""

    def __init__(self, n_x: int, q1: int, radii: Sequence[float], W_trunc: float | None = None):
        if n_x < 1:
            raise ValueError("n_x must be >= 1")
        if q1 < 1:
            raise ValueError("q1 must be >= 1")
        radii = [float(r) for r in radii]
        if any(r <= 0 for r in radii) or any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError(f"shell radii must be positive and strictly increasing, got {radii}")
        self.n_x = n_x
        self.q1 = q1
        self.radii = tuple(radii)
        self.q2 = len(radii) + 1
        if W_trunc is None:
            W_trunc = 10.0 * radii[-1] if radii else 10.0
        if radii and W_trunc <= radii[-1]:
            raise ValueError("truncation radius must exceed the last shell radius")
        self.W_trunc = float(W_trunc)
        edges = np.linspace(-HALF_PI, HALF_PI, q1 + 1)
        pair_intervals = [(float(edges[j]), float(edges[j + 1])) for j in range(q1)]
        n_pairs = max(n_x - 1, 0)
        self.cones = []
        for s1, combo in enumerate(itertools.product(range(q1), repeat=n_pairs), start=1):
            self.cones.append(ConeSpec(s1, tuple(pair_intervals[j] for j in combo), n_x))
        bounds = (0.0,) + self.radii + (np.inf,)
        self.shells = [ShellSpec(s2, bounds[s2 - 1], bounds[s2]) for s2 in range(1, self.q2 + 1)]
        self.regions = [Region((c.s1, s.s2), c, s) for c in self.cones for s in self.shells]
        self._by_id = {r.id: r for r in self.regions}
        self._pair_intervals = pair_intervals

    def __len__(self) -> int:
        return len(self.regions)

    def __iter__(self) -> Iterator[Region]:
        return iter(self.regions)

    def __getitem__(self, rid) -> Region:
        return self._by_id[tuple(rid)]

    @property
    def ids(self) -> list[tuple[int, int]]:
        return [r.id for r in self.regions]

    def cone(self, s1: int) -> ConeSpec:
        return self.cones[s1 - 1]

    def shell(self, s2: int) -> ShellSpec:
        return self.shells[s2 - 1]

    def outer_radius(self, s2: int) -> float:
        """Outer shell radius with the outermost shell cut at ``W_trunc``."""
        outer = self.shells[s2 - 1].outer
        return self.W_trunc if np.isinf(outer) else outer

    def classify_cones(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        N = X.shape[0]
        if self.n_x == 1:
            return np.ones(N, dtype=int)
        digits = np.empty((N, self.n_x - 1), dtype=int)
        for i in range(self.n_x - 1):
            P = X[:, i:i + 2]
            idx = np.full(N, -1)
            for j, (lo, hi) in enumerate(self._pair_intervals):
                a, b = cone_factors_2d(lo, hi)
                hit = _in_double_cone(P, a, b) & (idx < 0)
                idx[hit] = j
            missing = idx < 0
            if missing.any():
                # Rounding gap between two boundary normals: fall back to the angle.
                ang = np.arctan2(P[missing, 1], P[missing, 0])
                ang = np.where(ang >= HALF_PI, ang - np.pi, np.where(ang < -HALF_PI, ang + np.pi, ang))
                j = np.floor((ang + HALF_PI) / (np.pi / self.q1)).astype(int)
                idx[missing] = np.clip(j, 0, self.q1 - 1)
            digits[:, i] = idx
        weights = self.q1 ** np.arange(self.n_x - 2, -1, -1)
        return digits @ weights + 1

    def classify_shells(self, X) -> np.ndarray:
        r = np.linalg.norm(np.atleast_2d(np.asarray(X, dtype=float)), axis=1)
        return np.searchsorted(np.asarray(self.radii), r, side="right") + 1

    def classify_many(self, X) -> np.ndarray:
        """Region ids of the rows of ``X`` as an ``(N, 2)`` integer array."""
        return np.column_stack([self.classify_cones(X), self.classify_shells(X)])

    def classify(self, x) -> tuple[int, int]:
        s1, s2 = self.classify_many(np.asarray(x, dtype=float).reshape(1, -1))[0]
        return int(s1), int(s2)

    def config(self) -> dict:
        return {"n_x": self.n_x, "q1": self.q1, "q2": self.q2,
                "radii": list(self.radii), "W_trunc": self.W_trunc}

    def dump(self) -> dict:
        """Plain-data description of every region for plotting or debugging."""
        regions = []
        for r in self.regions:
            regions.append({
                "id": list(r.id),
                "angles": [list(iv) for iv in r.cone.intervals],
                "radii": [r.shell.inner, None if np.isinf(r.shell.outer) else r.shell.outer],
                "xi": [m.tolist() for m in r.cone.matrices],
            })
        return {**self.config(), "regions": regions}


def geometric_radii(q2: int, W_first: float, W_last: float) -> list[float]:
    """``q2 - 1`` radii spaced geometrically from ``W_first`` to ``W_last``."""
    n = q2 - 1
    if n <= 0:
        return []
    if n == 1:
        return [float(W_first)]
    if not 0 < W_first < W_last:
        raise ValueError(f"need 0 < W_first < W_last, got {W_first}, {W_last}")
    return [float(r) for r in np.geomspace(W_first, W_last, n)]


def build_partition(n_x: int, q1: int = 8, q2: int = 6, shell_radii="auto", *,
                    W_first: float = 0.5, W_last: float = 8.0,
                    W_trunc: float | None = None) -> Partition:
    """Equal-angle cones per coordinate pair crossed with ``q2`` shells.

    ``shell_radii`` is either ``"auto"`` (geometric between ``W_first`` and
    ``W_last``) or the explicit list ``W_1 < ... < W_{q2-1}``.
    """
    if q2 < 1:
        raise ValueError("q2 must be >= 1")
    if isinstance(shell_radii, str):
        if shell_radii != "auto":
            raise ValueError(f"unknown shell_radii mode {shell_radii!r}")
        radii = geometric_radii(q2, W_first, W_last)
    else:
        radii = list(shell_radii)
        if len(radii) != q2 - 1:
            raise ValueError(f"expected {q2 - 1} shell radii, got {len(radii)}")
    return Partition(n_x, q1, radii, W_trunc)
