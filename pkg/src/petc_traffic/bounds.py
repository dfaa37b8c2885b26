"""Regional inter-event-time bounds from LMI feasibility.

Per cone ``s1`` (disturbance free) a lower bound ``k_lo`` and an upper bound
``k_hi`` are found such that every state of the cone triggers after between
``k_lo + 1`` and ``k_hi`` samples; ``k_hi * h`` is the cone's maximum
allowable event interval (MAEI).  Per region ``(s1, s2)`` a second lower bound
accounts for disturbances with ``|w| <= W``.  The disturbance enters through
the norm ratio ``W / W_{s2-1}``, so the innermost shell only gets the trivial
bound of one sample.
"""
from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import choose_psi_mu, lifted, SpectralData
from .lmi import FeasibilityProblem, FeasibilityResult, sdp_feasible, UNKNOWN
from .model import PetcSystem
from .partition import ConeSpec, Partition, Region

log = logging.getLogger(__name__)


class BoundsError(RuntimeError):
    pass


@dataclass(frozen=True)
class BoundsConfig:
    """Solver settings.

    ``psi_mode="free"`` lets the SDP choose the scalar ``psi`` of
    ``Psi = psi I`` (with ``mu = lambda_max((Q1)_pp) + psi``) separately for
    every region and step; ``"fixed"`` uses ``psi_scale`` throughout.
    """

    margin: float = 1e-8
    k_cap: int = 20000
    psi_mode: str = "free"
    psi_scale: float = 1.0
    max_iters: int = 100

    def __post_init__(self):
        if self.psi_mode not in ("free", "fixed"):
            raise ValueError(f"psi_mode must be 'free' or 'fixed', got {self.psi_mode!r}")
        if not self.margin > 0:
            raise ValueError("margin must be positive")


@dataclass
class RegionBounds:
    id: tuple[int, int]
    k_lower_perturbed: int
    k_lower_w0: int
    k_upper_w0: int
    l_bar: int
    margin_lower: float = float("nan")
    margin_upper: float = float("nan")
    unknown_solves: int = 0

    @property
    def k_lower(self) -> int:
        return self.k_lower_perturbed

    def check(self) -> None:
        if not (1 <= self.k_lower_perturbed + 1 <= self.k_lower_w0 + 1
                <= self.k_upper_w0 <= self.l_bar):
            raise BoundsError(f"inconsistent bounds for region {self.id}: {self}")


def _solve(prob: FeasibilityProblem, cfg: BoundsConfig) -> FeasibilityResult:
    return sdp_feasible(prob, max_iters=cfg.max_iters)


def global_upper_bound(sys: PetcSystem, k_cap: int = 20000, margin: float = 1e-8) -> int:
    """Smallest ``l >= 1`` with ``Phi1(l)`` positive definite (line search)."""
    dyn = lifted(sys)
    for k in range(1, k_cap + 1):
        eig = np.linalg.eigvalsh(dyn.phi1(k))
        if eig[0] >= margin * max(1.0, float(np.abs(eig).max())):
            return k
    raise BoundsError(
        f"Phi1(k) not positive definite for any k <= {k_cap}; raise k_cap, or the "
        "inter-event times of this loop may be unbounded")


def _w0_lower_problem(sys, cone: ConeSpec, k: int, cfg: BoundsConfig) -> FeasibilityProblem:
    return FeasibilityProblem(lifted(sys).phi1(k), cone.matrices, "nsd", margin=cfg.margin)


def _w0_upper_problem(sys, cone: ConeSpec, k: int, cfg: BoundsConfig) -> FeasibilityProblem:
    return FeasibilityProblem(lifted(sys).phi1(k), [-X for X in cone.matrices], "pd",
                              margin=cfg.margin)


def _as_cone(region_or_cone) -> ConeSpec:
    return region_or_cone.cone if isinstance(region_or_cone, Region) else region_or_cone


def _incremental_search(make, k_max: int, cfg: BoundsConfig, label) -> tuple[int, float, int]:
    """Largest ``k <= k_max`` with ``make(j)`` feasible for every ``j = 0..k``."""
    res = _solve(make(0), cfg)
    if not res:
        log.warning("%s: LMI infeasible at k=0", label)
        return 0, res.margin, int(res.status == UNKNOWN)
    unknown, margin, k = 0, res.margin, 0
    while k < k_max:
        res = _solve(make(k + 1), cfg)
        unknown += res.status == UNKNOWN
        if not res:
            break
        k += 1
        margin = res.margin
    return k, margin, unknown


def lower_search_w0(sys, cone: ConeSpec, k_max: int, cfg: BoundsConfig = BoundsConfig()):
    """Disturbance-free lower bound with its certificate margin and unknown-outcome count."""
    return _incremental_search(lambda k: _w0_lower_problem(sys, cone, k, cfg), k_max, cfg,
                               f"cone {cone.s1}")


def upper_search_w0(sys, cone: ConeSpec, l_bar: int, k_lower: int = 0,
                    cfg: BoundsConfig = BoundsConfig()):
    """Descend from ``l_bar`` while the strict LMI holds, never below ``k_lower + 1``."""
    unknown = 0
    k_hi = l_bar
    margin = float("nan")
    for k in range(l_bar, k_lower, -1):
        res = _solve(_w0_upper_problem(sys, cone, k, cfg), cfg)
        unknown += res.status == UNKNOWN
        if not res:
            break
        k_hi, margin = k, res.margin
    return k_hi, margin, unknown


def regional_lower_bound_w0(sys: PetcSystem, region_cone, k_max: int | None = None,
                            cfg: BoundsConfig = BoundsConfig()) -> int:
    """Largest ``k_lo`` with the cone LMI feasible at every ``k = 0..k_lo``.

    ``k_max`` defaults to ``l_bar - 1``.
    """
    if k_max is None:
        k_max = global_upper_bound(sys, cfg.k_cap, cfg.margin) - 1
    return lower_search_w0(sys, _as_cone(region_cone), k_max, cfg)[0]


def regional_upper_bound_w0(sys: PetcSystem, region_cone, l_bar: int, k_lower: int = 0,
                            cfg: BoundsConfig = BoundsConfig()) -> int:
    """Smallest ``k_hi`` with the strict cone LMI feasible for every ``k = k_hi..l_bar``.

    Returns ``l_bar`` when even ``k = l_bar`` cannot be certified.
    """
    return upper_search_w0(sys, _as_cone(region_cone), l_bar, k_lower, cfg)[0]


def _disturbance_free(sys: PetcSystem) -> bool:
    return sys.W == 0.0 or not np.any(sys.plant.E)


def theorem_problem(sys: PetcSystem, region: Region, k: int, spec: SpectralData | None,
                    cfg: BoundsConfig) -> FeasibilityProblem:
    """Block LMI ``[[H, Phi2], [Phi2', -Psi]] <= 0`` for region ``region`` at step ``k``.

    With ``spec=None`` the scalar ``psi`` is an extra decision variable.
    """
    dyn = lifted(sys)
    n = sys.n_x
    P1, P2 = dyn.phi1(k), dyn.phi2(k)
    ratio = 0.0 if sys.W == 0.0 else (sys.W / region.shell.inner) ** 2
    Z = np.zeros((n, n))
    lifted_cone = [np.block([[X, Z], [Z, Z]]) for X in region.cone.matrices]
    if spec is not None:
        phi3 = spec.mu * dyn.phi3_per_mu(k, spec.lamE)
        F0 = np.block([[P1 + phi3 * ratio * np.eye(n), P2], [P2.T, -spec.Psi]])
        return FeasibilityProblem(F0, lifted_cone, "nsd", margin=cfg.margin)
    base = choose_psi_mu(sys, 1.0)
    lam_q = base.mu - 1.0  # lambda_max of the plant block of Q1
    c3 = dyn.phi3_per_mu(k, base.lamE) * ratio
    F0 = np.block([[P1 + c3 * lam_q * np.eye(n), P2], [P2.T, Z]])
    F_psi = np.block([[c3 * np.eye(n), Z], [Z, -np.eye(n)]])
    lower = [0.0] * len(lifted_cone) + [max(1e-9, -lam_q)]
    upper = [1e6] * len(lifted_cone) + [1e8]
    return FeasibilityProblem(F0, lifted_cone + [F_psi], "nsd", lower, upper, cfg.margin)


def lower_search(sys: PetcSystem, spec: SpectralData | None, region: Region, k_max: int,
                 cfg: BoundsConfig = BoundsConfig()) -> tuple[int, float, int]:
    """Perturbed lower bound with its certificate margin and unknown-outcome count."""
    if _disturbance_free(sys):
        return lower_search_w0(sys, region.cone, k_max, cfg)
    if region.shell.inner == 0.0:
        return 0, float("nan"), 0
    return _incremental_search(lambda k: theorem_problem(sys, region, k, spec, cfg), k_max, cfg,
                               f"region {region.id}")


def regional_lower_bound(sys: PetcSystem, spec: SpectralData | None, region: Region,
                         k_max: int, cfg: BoundsConfig = BoundsConfig()) -> int:
    """Lower bound ``k_lo`` (inter-event time ``>= (k_lo + 1) h``) under disturbances.

    ``spec`` fixes ``Psi`` and ``mu``; ``None`` makes ``psi`` a decision
    variable.  Without disturbance (``W = 0`` or ``E = 0``) the disturbance
    coupling vanishes and the cone LMI is used on every shell.  Otherwise the
    innermost shell returns 0.
    """
    return lower_search(sys, spec, region, k_max, cfg)[0]


@dataclass
class BoundsTable:
    """All bounds of one configuration, keyed by region id."""

    h: float
    W: float
    l_bar: int
    regions: dict = field(default_factory=dict)  # (s1, s2) -> RegionBounds
    config_hash: str = ""

    def __getitem__(self, rid) -> RegionBounds:
        return self.regions[tuple(rid)]

    def maei_steps(self) -> dict[int, int]:
        """Cone index -> MAEI in samples."""
        return {rid[0]: rb.k_upper_w0 for rid, rb in sorted(self.regions.items())}

    def interval(self, rid) -> tuple[int, int]:
        """Inter-event step interval ``[k_lo + 1, k_hi]`` of a region."""
        rb = self.regions[tuple(rid)]
        return rb.k_lower_perturbed + 1, rb.k_upper_w0

    def to_dict(self) -> dict:
        rows = []
        for rid in sorted(self.regions):
            rb = self.regions[rid]
            d = asdict(rb)
            d["id"] = list(rid)
            d["maei_s"] = rb.k_upper_w0 * self.h
            rows.append(d)
        return {"config_hash": self.config_hash, "h": self.h, "W": self.W,
                "l_bar": self.l_bar, "regions": rows}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundsTable":
        regions = {}
        for row in d["regions"]:
            row = dict(row)
            row.pop("maei_s", None)
            rid = tuple(row.pop("id"))
            row = {k: (float("nan") if v is None else v) for k, v in row.items()}
            regions[rid] = RegionBounds(id=rid, **row)
        return cls(d["h"], d["W"], d["l_bar"], regions, d.get("config_hash", ""))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s1", "s2", "k_lower_perturbed", "k_lower_w0", "k_upper_w0",
                    "maei_s", "l_bar", "margin_lower", "margin_upper"])
        for rid in sorted(self.regions):
            rb = self.regions[rid]
            w.writerow([rid[0], rid[1], rb.k_lower_perturbed, rb.k_lower_w0, rb.k_upper_w0,
                        f"{rb.k_upper_w0 * self.h:.12g}", rb.l_bar,
                        f"{rb.margin_lower:.12g}", f"{rb.margin_upper:.12g}"])
        return buf.getvalue()


def _cone_task(args):
    sys, cone, l_bar, cfg = args
    k_lo, m_lo, u1 = lower_search_w0(sys, cone, l_bar - 1, cfg)
    k_hi, m_hi, u2 = upper_search_w0(sys, cone, l_bar, k_lo, cfg)
    return cone.s1, (k_lo, m_lo, k_hi, m_hi, u1 + u2)


def _region_task(args):
    sys, region, k_max, cfg = args
    spec = choose_psi_mu(sys, cfg.psi_scale) if cfg.psi_mode == "fixed" else None
    return region.id, lower_search(sys, spec, region, k_max, cfg)


def default_jobs() -> int:
    return max(1, int(os.environ.get("PETC_TRAFFIC_JOBS", "1")))


def _run(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def compute_bounds(sys: PetcSystem, partition: Partition, cfg: BoundsConfig = BoundsConfig(),
                   jobs: int | None = None) -> BoundsTable:
    """Every bound for every region; results are merged by id, independent of ``jobs``."""
    jobs = default_jobs() if jobs is None else jobs
    l_bar = global_upper_bound(sys, cfg.k_cap, cfg.margin)
    cone_res = dict(_run(_cone_task, [(sys, c, l_bar, cfg) for c in partition.cones], jobs))

    table = BoundsTable(sys.h, sys.W, l_bar)
    if _disturbance_free(sys):
        reg_res = {r.id: (cone_res[r.id[0]][0], cone_res[r.id[0]][1], 0) for r in partition}
    else:
        tasks = [(sys, r, cone_res[r.id[0]][0], cfg) for r in partition]
        reg_res = dict(_run(_region_task, tasks, jobs))
    for r in partition:
        k_lo, m_lo, k_hi, m_hi, unk = cone_res[r.id[0]]
        kp, mp, unk_p = reg_res[r.id]
        rb = RegionBounds(r.id, min(kp, k_lo), k_lo, k_hi, l_bar,
                          margin_lower=mp, margin_upper=m_hi, unknown_solves=unk + unk_p)
        rb.check()
        table.regions[r.id] = rb
    return table
