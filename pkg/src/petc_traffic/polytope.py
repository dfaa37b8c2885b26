"""Bounded convex polytopes with both vertex and halfspace representations.

Hull and halfspace-intersection computations are delegated to Qhull through
scipy.spatial; 2D clipping and distance queries are done directly since they
run in the inner loop of the transition relation.
"""
from __future__ import annotations

import numpy as np
from cvxopt import matrix, solvers
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

_TOL = 1e-9


def _normalize_rows(A, b):
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    nrm = np.linalg.norm(A, axis=1)
    keep = nrm > 0
    if np.any(~keep & (b < 0)):
        raise ValueError("halfspace 0'x <= b with b < 0 is empty")
    return A[keep] / nrm[keep, None], b[keep] / nrm[keep]


class Polytope:
    """Convex hull of ``vertices`` equal to ``{x : A x <= b}`` with unit-norm rows of ``A``.

    In 2D the vertices are stored counter-clockwise.
    """

    def __init__(self, vertices, A, b, check: bool = True):
        self.vertices = np.asarray(vertices, dtype=float)
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        if check:
            scale = max(1.0, float(np.abs(self.vertices).max()))
            viol = (self.vertices @ self.A.T - self.b).max()
            if viol > 1e-7 * scale:
                raise ValueError(f"vertex and halfspace representations disagree by {viol:g}")

    @property
    def n(self) -> int:
        return self.vertices.shape[1]

    @classmethod
    def from_vertices(cls, points) -> "Polytope":
        P = np.atleast_2d(np.asarray(points, dtype=float))
        if not np.all(np.isfinite(P)):
            raise ValueError("polytope vertices must be finite")
        n = P.shape[1]
        if n == 1:
            lo, hi = P.min(), P.max()
            return cls(np.array([[lo], [hi]]), np.array([[1.0], [-1.0]]), np.array([hi, -lo]))
        try:
            hull = ConvexHull(P)
        except QhullError as exc:
            raise ValueError(f"degenerate point set, no full-dimensional hull: {exc}") from None
        V = P[hull.vertices]
        eq = hull.equations
        A, b = _normalize_rows(eq[:, :-1], -eq[:, -1])
        if n == 2:
            A, b = _edge_order_2d(V, A, b)
        return cls(V, A, b)

    @classmethod
    def from_halfspaces(cls, A, b) -> "Polytope":
        A, b = _normalize_rows(A, b)
        n = A.shape[1]
        center, radius = chebyshev_center(A, b)
        if center is None or radius <= _TOL:
            raise ValueError("halfspace set is empty or not full-dimensional")
        if n == 1:
            hi = min(b[i] / A[i, 0] for i in range(len(b)) if A[i, 0] > 0)
            lo = max(b[i] / A[i, 0] for i in range(len(b)) if A[i, 0] < 0)
            return cls.from_vertices([[lo], [hi]])
        hs = HalfspaceIntersection(np.column_stack([A, -b]), center)
        return cls.from_vertices(hs.intersections)

    def contains(self, X, tol: float = _TOL) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.all(X @ self.A.T <= self.b + tol * np.maximum(1.0, np.abs(self.b)), axis=1)

    def distance(self, X) -> np.ndarray:
        """Euclidean distance from each row of ``X`` to the polytope."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.n == 1:
            lo, hi = self.vertices[0, 0], self.vertices[1, 0]
            return np.maximum(0.0, np.maximum(lo - X[:, 0], X[:, 0] - hi))
        if self.n == 2:
            return _polygon_distance(self.vertices, X)
        return np.array([_hull_distance(self.vertices, x) for x in X])

    def offset(self, r: float) -> tuple[np.ndarray, np.ndarray]:
        """Halfspaces of the outer polytope ``{A x <= b + r}`` containing the ``r``-inflation."""
        return self.A, self.b + r

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polytope) or other.n != self.n:
            return NotImplemented
        return (len(self.vertices) == len(other.vertices)
                and bool(np.all(other.contains(self.vertices, 1e-9)))
                and bool(np.all(self.contains(other.vertices, 1e-9))))

    __hash__ = None

    def __repr__(self) -> str:
        return f"Polytope(n={self.n}, vertices={len(self.vertices)}, facets={len(self.b)})"


def _edge_order_2d(V, A, b):
    """Reorder 2D facets so facet ``i`` is the edge from ``V[i]`` to ``V[i+1]``."""
    E = np.roll(V, -1, axis=0) - V
    normals = np.column_stack([E[:, 1], -E[:, 0]])
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    return normals, np.einsum("ij,ij->i", normals, V)


def chebyshev_center(A, b):
    """Center and radius of the largest ball inside ``{A x <= b}`` (unit rows); ``(None, -inf)`` if empty."""
    m, n = A.shape
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.column_stack([A, np.ones(m)])
    res = linprog(c, A_ub=A_ub, b_ub=b, bounds=[(None, None)] * n + [(None, 1e12)],
                  method="highs")
    if res.status != 0:
        return None, -np.inf
    return res.x[:n], float(res.x[-1])


def _polygon_distance(V, X):
    """Distance from points to a convex CCW polygon, zero inside."""
    Vn = np.roll(V, -1, axis=0)
    E = Vn - V
    L2 = np.einsum("ij,ij->i", E, E)
    D = X[:, None, :] - V[None, :, :]
    t = np.clip(np.einsum("pij,ij->pi", D, E) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
    closest = V[None] + t[..., None] * E[None]
    d = np.linalg.norm(X[:, None, :] - closest, axis=2).min(axis=1)
    cross = E[None, :, 0] * D[..., 1] - E[None, :, 1] * D[..., 0]
    inside = np.all(cross >= 0, axis=1)
    return np.where(inside, 0.0, d)


def _hull_distance(V, x):
    """Distance from ``x`` to ``conv(V)`` by a small QP over convex weights."""
    m = len(V)
    D = V - x
    P = matrix(D @ D.T + 1e-14 * np.eye(m))
    q = matrix(np.zeros(m))
    G = matrix(-np.eye(m))
    h = matrix(np.zeros(m))
    Aeq = matrix(np.ones((1, m)))
    beq = matrix(np.ones(1))
    sol = solvers.qp(P, q, G, h, Aeq, beq, options={"show_progress": False})
    lam = np.clip(np.array(sol["x"]).ravel(), 0.0, None)
    lam /= lam.sum()
    return float(np.linalg.norm(lam @ V - x))


def map_polytope(M, P: Polytope) -> Polytope:
    """Image ``M P`` through the vertices; halfspaces are recomputed."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != (P.n, P.n):
        raise ValueError(f"map of shape {M.shape} does not act on R^{P.n}")
    return Polytope.from_vertices(P.vertices @ M.T)


class InflatedPolytope:
    """Minkowski sum ``P + ball(0, r)`` in the Euclidean norm.

    Membership is exact (distance to ``P`` at most ``r``).  Geometric
    intersection tests use the outer polytope with every facet moved out by
    ``r``, which contains the sum and is exact along facet normals.
    """

    def __init__(self, polytope: Polytope, radius: float):
        if radius < 0:
            raise ValueError(f"ball radius must be nonnegative, got {radius}")
        self.polytope = polytope
        self.radius = float(radius)

    def contains(self, X, tol: float = 1e-9) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        scale = np.maximum(1.0, np.linalg.norm(X, axis=1))
        return self.polytope.distance(X) <= self.radius + tol * scale

    def outer_halfspaces(self):
        return self.polytope.offset(self.radius)

    def outer_vertices(self) -> np.ndarray:
        """Vertices of the outer polytope (2D by the offset-vertex formula)."""
        P, r = self.polytope, self.radius
        if r == 0.0:
            return P.vertices
        if P.n == 2:
            N = P.A
            Np = np.roll(N, 1, axis=0)  # facet ending at each vertex
            s = Np + N
            denom = 1.0 + np.einsum("ij,ij->i", Np, N)
            return P.vertices + r * s / denom[:, None]
        return Polytope.from_halfspaces(*self.outer_halfspaces()).vertices


def minkowski_ball(P: Polytope, r: float) -> InflatedPolytope:
    return InflatedPolytope(P, r)


def clip_polygon(V: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Clip a convex CCW polygon to ``{x : G x >= 0}`` (Sutherland-Hodgman)."""
    for g in G:
        if len(V) == 0:
            break
        s = V @ g
        if np.all(s >= 0):
            continue
        if np.all(s < 0):
            return V[:0]
        out = []
        nv = len(V)
        for i in range(nv):
            j = (i + 1) % nv
            if s[i] >= 0:
                out.append(V[i])
            if (s[i] >= 0) != (s[j] >= 0):
                t = s[i] / (s[i] - s[j])
                out.append(V[i] + t * (V[j] - V[i]))
        V = np.array(out).reshape(-1, V.shape[1])
    return V


def norm_range_polygon(V: np.ndarray) -> tuple[float, float]:
    """Min and max Euclidean norm over a convex CCW polygon (possibly degenerate)."""
    if len(V) == 0:
        return np.inf, -np.inf
    hi = float(np.linalg.norm(V, axis=1).max())
    if len(V) >= 3:
        lo = float(_polygon_distance(V, np.zeros((1, 2)))[0])
    elif len(V) == 2:
        lo = _segment_distance(V[0], V[1])
    else:
        lo = hi
    return lo, hi


def _segment_distance(p, q) -> float:
    e = q - p
    L2 = float(e @ e)
    t = 0.0 if L2 == 0 else float(np.clip(-(p @ e) / L2, 0.0, 1.0))
    return float(np.linalg.norm(p + t * e))


def norm_range_halfspaces(A, b) -> tuple[float, float]:
    """Min and max norm over ``{A x <= b}``; ``(inf, -inf)`` when empty.

    Lower-dimensional nonempty sets fall back to a box bound for the maximum
    and to zero for the minimum, which only widens the range.
    """
    A, b = _normalize_rows(A, b)
    n = A.shape[1]
    center, radius = chebyshev_center(A, b)
    if center is None or radius < -1e-12:
        return np.inf, -np.inf
    if radius > 1e-9:
        V = HalfspaceIntersection(np.column_stack([A, -b]), center).intersections
        hi = float(np.linalg.norm(V, axis=1).max())
        lo = 0.0 if np.all(A @ np.zeros(n) <= b) else _hull_distance(V, np.zeros(n))
        return lo, hi
    box = 0.0
    for i in range(n):
        for sgn in (1.0, -1.0):
            c = np.zeros(n)
            c[i] = -sgn
            res = linprog(c, A_ub=A, b_ub=b + 1e-9, bounds=[(None, None)] * n, method="highs")
            if res.status == 0:
                box = max(box, abs(res.x[i]))
    return 0.0, float(np.sqrt(n) * box)
