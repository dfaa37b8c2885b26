"""Small LMI feasibility problems affine in a few scalar multipliers.

A problem is ``F(e) = F0 + sum_i e_i F_i`` with box bounds on every ``e_i``
and a sense, either ``F(e) <= 0`` (``"nsd"``) or ``F(e) > 0`` (``"pd"``).
The multipliers are found with an interior-point SDP (cvxopt) that optimizes
the extreme eigenvalue; the verdict is then taken from an independent
eigenvalue check of ``F`` at the returned multipliers, so solver inaccuracy
can only make the answer more conservative.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from cvxopt import matrix, solvers

log = logging.getLogger(__name__)

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
UNKNOWN = "unknown"

# Relative slack accepted on the non-strict side of "nsd" (eigenvalue rounding).
NSD_TOL = 1e-12
DEFAULT_MARGIN = 1e-8
DEFAULT_CAP = 1e6


@dataclass
class FeasibilityProblem:
    constant: np.ndarray
    matrices: Sequence[np.ndarray] = ()
    sense: str = "nsd"
    lower: Sequence[float] | None = None
    upper: Sequence[float] | None = None
    margin: float = DEFAULT_MARGIN

    def __post_init__(self):
        if self.sense not in ("nsd", "pd"):
            raise ValueError(f"sense must be 'nsd' or 'pd', got {self.sense!r}")
        F0 = np.asarray(self.constant, dtype=float)
        if F0.ndim != 2 or F0.shape[0] != F0.shape[1]:
            raise ValueError("constant block must be square")
        self.constant = 0.5 * (F0 + F0.T)
        mats = [np.asarray(F, dtype=float) for F in self.matrices]
        for F in mats:
            if F.shape != F0.shape:
                raise ValueError(f"multiplier matrix shape {F.shape} != {F0.shape}")
        self.matrices = [0.5 * (F + F.T) for F in mats]
        m = len(mats)
        self.lower = list(self.lower) if self.lower is not None else [0.0] * m
        self.upper = list(self.upper) if self.upper is not None else [DEFAULT_CAP] * m

    def evaluate(self, e) -> np.ndarray:
        F = self.constant.copy()
        for ei, Fi in zip(e, self.matrices):
            F += ei * Fi
        return F


@dataclass
class FeasibilityResult:
    status: str
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # lambda_max(F) for "nsd", lambda_min(F) for "pd", at the multipliers
    margin: float = float("nan")
    solver_status: str = ""

    def __bool__(self) -> bool:
        return self.status == FEASIBLE


def _verdict(prob: FeasibilityProblem, e: np.ndarray) -> tuple[bool, float]:
    eig = np.linalg.eigvalsh(prob.evaluate(e))
    scale = max(1.0, float(np.abs(eig).max()))
    if prob.sense == "nsd":
        return eig[-1] <= NSD_TOL * scale, float(eig[-1])
    return eig[0] >= prob.margin * scale, float(eig[0])


def sdp_feasible(prob: FeasibilityProblem, max_iters: int = 100) -> FeasibilityResult:
    """Decide feasibility of ``prob`` and return the certificate.

    Solver breakdowns or non-converged runs whose multipliers do not pass the
    eigenvalue check are reported as ``"unknown"``.
    """
    m = len(prob.matrices)
    if m == 0:
        ok, marg = _verdict(prob, np.zeros(0))
        return FeasibilityResult(FEASIBLE if ok else INFEASIBLE, np.zeros(0), marg, "closed-form")

    n = prob.constant.shape[0]
    sign = 1.0 if prob.sense == "nsd" else -1.0
    # Rescale so every block has unit norm; verdict uses the original data.
    s0 = max(1.0, float(np.linalg.norm(prob.constant, 2)))
    col_scale = np.array([max(float(np.linalg.norm(F, 2)), 1e-300) for F in prob.matrices])
    F0 = sign * prob.constant / s0
    # z_i = e_i c_i / s0, so e_i F_i / s0 = z_i F_i / c_i
    Fs = [sign * F / c for F, c in zip(prob.matrices, col_scale)]
    lo = np.asarray(prob.lower, dtype=float) * col_scale / s0
    hi = np.asarray(prob.upper, dtype=float) * col_scale / s0

    # variables z = (t, e'), minimize t subject to sign * F(e) - t I <= 0
    c = matrix(np.r_[1.0, np.zeros(m)])
    Gs = [matrix(np.column_stack([-np.eye(n).ravel(order="F")]
                                 + [F.ravel(order="F") for F in Fs]))]
    hs = [matrix(-F0)]
    rows, rhs = [], []
    for i in range(m):
        r = np.zeros(m + 1)
        r[i + 1] = -1.0
        rows.append(r)
        rhs.append(-lo[i])
        if np.isfinite(hi[i]):
            r = np.zeros(m + 1)
            r[i + 1] = 1.0
            rows.append(r)
            rhs.append(hi[i])
    Gl, hl = matrix(np.array(rows)), matrix(np.array(rhs))
    try:
        sol = solvers.sdp(c, Gl=Gl, hl=hl, Gs=Gs, hs=hs,
                          options={"show_progress": False, "maxiters": max_iters})
    except (ArithmeticError, ValueError) as exc:
        log.debug("sdp solver failure: %s", exc)
        return FeasibilityResult(UNKNOWN, np.full(m, np.nan), float("nan"), "exception")
    if sol["x"] is None:
        return FeasibilityResult(UNKNOWN, np.full(m, np.nan), float("nan"), sol["status"])
    z = np.array(sol["x"]).ravel()
    e = np.clip(z[1:], lo, hi) * s0 / col_scale
    ok, marg = _verdict(prob, e)
    if ok:
        return FeasibilityResult(FEASIBLE, e, marg, sol["status"])
    if sol["status"] != "optimal":
        return FeasibilityResult(UNKNOWN, e, marg, sol["status"])
    return FeasibilityResult(INFEASIBLE, e, marg, sol["status"])
