"""Closed-loop PETC data: plant, controller, trigger parameters.

The lifted state is ``x = [xi_p; xi_c]`` (plant state, controller state) and
the full implementation state is ``xi = [xi_p; xi_c; y_hat; v_hat]``.  The
triggering rule is the quadratic form ``xi' Q xi > 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class DimensionError(ValueError):
    """Raised when two matrices of a model have incompatible shapes.

    Attributes
    ----------
    pair : tuple of str
        Names of the two offending matrices.
    """

    def __init__(self, first: str, second: str, detail: str):
        self.pair = (first, second)
        super().__init__(f"dimension mismatch between {first} and {second}: {detail}")


def _as_matrix(value, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        # Treat a flat list as a column when the row count is known, else a row.
        arr = arr.reshape(-1, 1) if rows is not None and arr.size == rows else arr.reshape(1, -1)
    if arr.size == 0:
        arr = np.zeros((rows or 0, cols or 0))
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class PlantModel:
    """Continuous-time LTI plant ``dxi_p = A_p xi_p + B_p v_hat + E w``, ``y = C_p xi_p``."""

    A_p: np.ndarray
    B_p: np.ndarray
    E: np.ndarray
    C_p: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A_p)
        n = A.shape[0]
        object.__setattr__(self, "A_p", A)
        object.__setattr__(self, "B_p", _as_matrix(self.B_p, rows=n))
        object.__setattr__(self, "E", _as_matrix(self.E, rows=n))
        object.__setattr__(self, "C_p", _as_matrix(self.C_p, cols=n))
        if A.shape[0] != A.shape[1] or n < 1:
            raise DimensionError("A_p", "A_p", f"A_p must be square and nonempty, got {A.shape}")
        if self.B_p.shape[0] != n:
            raise DimensionError("A_p", "B_p", f"B_p has {self.B_p.shape[0]} rows, expected {n}")
        if self.E.shape[0] != n:
            raise DimensionError("A_p", "E", f"E has {self.E.shape[0]} rows, expected {n}")
        if self.C_p.shape[1] != n:
            raise DimensionError("A_p", "C_p", f"C_p has {self.C_p.shape[1]} columns, expected {n}")

    @property
    def n_p(self) -> int:
        return self.A_p.shape[0]

    @property
    def n_v(self) -> int:
        return self.B_p.shape[1]

    @property
    def n_w(self) -> int:
        return self.E.shape[1]

    @property
    def n_y(self) -> int:
        return self.C_p.shape[0]


@dataclass(frozen=True)
class ControllerModel:
    """Discrete-time controller; ``n_c = 0`` means static feedback ``v = D_c y_hat``."""

    A_c: np.ndarray
    B_c: np.ndarray
    C_c: np.ndarray
    D_c: np.ndarray

    def __post_init__(self):
        D = _as_matrix(self.D_c)
        n_v, n_y = D.shape
        A = np.array(self.A_c, dtype=float)
        n_c = 0 if A.size == 0 else A.shape[0]
        if A.size and (A.ndim != 2 or A.shape[0] != A.shape[1]):
            raise DimensionError("A_c", "A_c", f"A_c must be square, got {A.shape}")
        B = np.array(self.B_c, dtype=float)
        C = np.array(self.C_c, dtype=float)
        if B.size != n_c * n_y or (B.ndim == 2 and B.size and B.shape != (n_c, n_y)):
            raise DimensionError("A_c", "B_c", f"B_c has shape {B.shape}, expected {(n_c, n_y)}")
        if C.size != n_v * n_c or (C.ndim == 2 and C.size and C.shape != (n_v, n_c)):
            raise DimensionError("A_c", "C_c", f"C_c has shape {C.shape}, expected {(n_v, n_c)}")
        object.__setattr__(self, "D_c", D)
        object.__setattr__(self, "A_c", A.reshape(n_c, n_c))
        object.__setattr__(self, "B_c", B.reshape(n_c, n_y))
        object.__setattr__(self, "C_c", C.reshape(n_v, n_c))

    @classmethod
    def static(cls, K) -> "ControllerModel":
        K = _as_matrix(K)
        n_v, n_y = K.shape
        return cls(np.zeros((0, 0)), np.zeros((0, n_y)), np.zeros((n_v, 0)), K)

    @property
    def n_c(self) -> int:
        return self.A_c.shape[0]


@dataclass(frozen=True)
class TriggerParams:
    sigma: float
    h: float
    w_inf_bound: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")
        if not (np.isfinite(self.w_inf_bound) and self.w_inf_bound >= 0):
            raise ValueError(f"w_inf_bound must be finite and >= 0, got {self.w_inf_bound}")


@dataclass(frozen=True)
class TriggerMatrix:
    """Symmetric trigger matrix ``Q = [[Q1, Q2], [Q2', Q4]]``."""

    Q1: np.ndarray
    Q2: np.ndarray
    Q4: np.ndarray

    @property
    def Q3(self) -> np.ndarray:
        return self.Q2.T

    @cached_property
    def Q(self) -> np.ndarray:
        return np.block([[self.Q1, self.Q2], [self.Q3, self.Q4]])


def check_dimensions(plant: PlantModel, ctrl: ControllerModel) -> None:
    if ctrl.D_c.shape != (plant.n_v, plant.n_y):
        raise DimensionError("B_p", "D_c", f"D_c is {ctrl.D_c.shape}, expected {(plant.n_v, plant.n_y)}")
    if ctrl.B_c.shape[1] != plant.n_y:
        raise DimensionError("C_p", "B_c", f"B_c has {ctrl.B_c.shape[1]} columns, expected {plant.n_y}")
    if ctrl.C_c.shape[0] != plant.n_v:
        raise DimensionError("B_p", "C_c", f"C_c has {ctrl.C_c.shape[0]} rows, expected {plant.n_v}")


def build_trigger_matrix(plant: PlantModel, ctrl: ControllerModel, sigma: float) -> TriggerMatrix:
    """Assemble the blocks of ``Q`` for the rule ``|u - u_hat|^2 > sigma |u|^2``."""
    check_dimensions(plant, ctrl)
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    Cp, Cc, Dc = plant.C_p, ctrl.C_c, ctrl.D_c
    n_p, n_c, n_y, n_v = plant.n_p, ctrl.n_c, plant.n_y, plant.n_v
    a = 1.0 - sigma
    Q1 = np.block([
        [a * Cp.T @ Cp, np.zeros((n_p, n_c))],
        [np.zeros((n_c, n_p)), a * Cc.T @ Cc],
    ])
    Q2 = np.block([
        [-Cp.T, np.zeros((n_p, n_v))],
        [a * Cc.T @ Dc, -Cc.T],
    ])
    Q4 = np.block([
        [np.eye(n_y) + a * Dc.T @ Dc, -Dc.T],
        [-Dc, np.eye(n_v)],
    ])
    # Symmetrize against rounding in the products above.
    return TriggerMatrix(0.5 * (Q1 + Q1.T), Q2, 0.5 * (Q4 + Q4.T))


def build_output_map(plant: PlantModel, ctrl: ControllerModel) -> np.ndarray:
    """``C_E`` with ``u_hat = C_E x`` right after an update."""
    check_dimensions(plant, ctrl)
    return np.block([
        [plant.C_p, np.zeros((plant.n_y, ctrl.n_c))],
        [ctrl.D_c @ plant.C_p, ctrl.C_c],
    ])


def trigger_value(Q: TriggerMatrix, C_E: np.ndarray, x, u_hat_source) -> np.ndarray | float:
    """Quadratic trigger form of ``xi = [x; C_E u_hat_source]``.

    ``x`` and ``u_hat_source`` may be stacked row-wise (shape ``(N, n_x)``) to
    evaluate many states at once.  A positive value means an event.
    """
    x = np.asarray(x, dtype=float)
    src = np.asarray(u_hat_source, dtype=float)
    if x.shape[-1] != C_E.shape[1] or src.shape[-1] != C_E.shape[1]:
        raise DimensionError("x", "C_E", f"state has {x.shape[-1]} entries, expected {C_E.shape[1]}")
    u_hat = src @ C_E.T
    return (np.einsum("...i,ij,...j->...", x, Q.Q1, x)
            + 2.0 * np.einsum("...i,ij,...j->...", x, Q.Q2, u_hat)
            + np.einsum("...i,ij,...j->...", u_hat, Q.Q4, u_hat))


@dataclass(frozen=True, eq=False)
class PetcSystem:
    """Plant, controller and trigger parameters with the derived ``Q`` and ``C_E``."""

    plant: PlantModel
    ctrl: ControllerModel
    trigger: TriggerParams
    Q: TriggerMatrix = field(init=False, repr=False)
    C_E: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "Q", build_trigger_matrix(self.plant, self.ctrl, self.trigger.sigma))
        object.__setattr__(self, "C_E", build_output_map(self.plant, self.ctrl))

    @property
    def n_x(self) -> int:
        return self.plant.n_p + self.ctrl.n_c

    @property
    def h(self) -> float:
        return self.trigger.h

    @property
    def sigma(self) -> float:
        return self.trigger.sigma

    @property
    def W(self) -> float:
        return self.trigger.w_inf_bound

    def with_disturbance_bound(self, W: float) -> "PetcSystem":
        trig = TriggerParams(self.trigger.sigma, self.trigger.h, W)
        return PetcSystem(self.plant, self.ctrl, trig)

    def trigger_value(self, x, u_hat_source):
        return trigger_value(self.Q, self.C_E, x, u_hat_source)

    @classmethod
    def from_matrices(cls, A_p, B_p, E, C_p, *, sigma, h, W=0.0,
                      A_c=None, B_c=None, C_c=None, D_c=None, K=None) -> "PetcSystem":
        plant = PlantModel(A_p, B_p, E, C_p)
        if K is not None:
            ctrl = ControllerModel.static(K)
        else:
            ctrl = ControllerModel(
                A_c if A_c is not None else np.zeros((0, 0)),
                B_c if B_c is not None else np.zeros((0, plant.n_y)),
                C_c if C_c is not None else np.zeros((plant.n_v, 0)),
                D_c,
            )
        return cls(plant, ctrl, TriggerParams(sigma, h, W))


def example_system(W: float = 2.0) -> PetcSystem:
    """The 2-state unstable plant with static gain ``K = [1, -4]``, sigma 0.1, h 5 ms."""
    return PetcSystem.from_matrices(
        [[0.0, 1.0], [-2.0, 3.0]], [[0.0], [1.0]], [[1.0], [0.0]], np.eye(2),
        sigma=0.1, h=0.005, W=W, K=[[1.0, -4.0]],
    )
