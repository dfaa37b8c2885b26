"""Lifted dynamics between two consecutive events.

With ``x`` the lifted state at the last event and the input held, the state
``k`` samples later is ``M(k) x + Theta(k)`` where ``Theta`` collects the
disturbance.  Everything the inter-event LMIs need (``M``, ``Phi1``, ``Phi2``,
``Phi3`` and the disturbance ball radius) is computed here.
"""
from __future__ import annotations

import threading
import weakref
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .model import PetcSystem

# Below this magnitude lambda_max(A_p + A_p') is treated as zero.
_LAMBDA_ZERO = 1e-12


def exp_integral(A, T: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(expm(A T), int_0^T expm(A s) ds)`` from one augmented exponential."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if T < 0:
        raise ValueError(f"T must be nonnegative, got {T}")
    n = A.shape[0]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = A
    aug[:n, n:] = np.eye(n)
    F = la.expm(aug * T)
    return F[:n, :n], F[:n, n:]


def _growth_integral(rate: float, T: float) -> float:
    """``int_0^T exp(rate (T - s)) ds`` in closed form."""
    if abs(rate) < _LAMBDA_ZERO:
        return T
    return float(np.expm1(rate * T) / rate)


@dataclass(frozen=True)
class SpectralData:
    """Scalars and the slack matrix used to bound the disturbance term.

    ``lam`` is ``lambda_max(A_p + A_p')``, ``lamE`` is ``lambda_max(E'E)`` and
    ``(Q1 + Psi)_1 <= mu I`` holds on the plant block.
    """

    lam: float
    lamE: float
    mu: float
    Psi: np.ndarray


def choose_psi_mu(sys: PetcSystem, psi_scale: float = 1.0) -> SpectralData:
    """``Psi = psi_scale I`` and the smallest ``mu`` with ``(Q1 + Psi)_1 <= mu I``."""
    if not psi_scale > 0:
        raise ValueError(f"psi_scale must be positive, got {psi_scale}")
    n_p = sys.plant.n_p
    Q1p = sys.Q.Q1[:n_p, :n_p]
    mu = max(0.0, float(np.linalg.eigvalsh(Q1p)[-1]) + psi_scale)
    return SpectralData(
        lam=spectral_rate(sys),
        lamE=float(np.linalg.eigvalsh(sys.plant.E.T @ sys.plant.E)[-1]) if sys.plant.n_w else 0.0,
        mu=mu,
        Psi=psi_scale * np.eye(sys.n_x),
    )


def spectral_rate(sys: PetcSystem) -> float:
    A = sys.plant.A_p
    return float(np.linalg.eigvalsh(A + A.T)[-1])


class LiftedDynamics:
    """Per-step cache of ``M(k)`` built by the semigroup property.

    The cache grows on demand; growth is guarded by a lock so concurrent
    readers see either the old or the extended lists, never a partial one.
    """

    def __init__(self, sys: PetcSystem):
        self.sys = sys
        p, c = sys.plant, sys.ctrl
        n_p, n_c = p.n_p, c.n_c
        self._Ah, self._Jh = exp_integral(p.A_p, sys.h)
        sel_p = np.hstack([np.eye(n_p), np.zeros((n_p, n_c))])
        sel_c = np.hstack([np.zeros((n_c, n_p)), np.eye(n_c)])
        # M1(k) = sel_p + J(k) @ drift
        self._drift = p.A_p @ sel_p + p.B_p @ np.hstack([c.D_c @ p.C_p, c.C_c])
        self._sel_p = sel_p
        self._ctrl_in = c.B_c @ np.hstack([p.C_p, np.zeros((p.n_y, n_c))])
        self._expAkh = [np.eye(n_p)]
        self._J = [np.zeros((n_p, n_p))]
        self._M2 = [sel_c]
        self._M = [np.eye(sys.n_x)]
        self._lock = threading.Lock()
        self.lam = spectral_rate(sys)
        self.E_norm = float(np.linalg.norm(p.E, 2)) if p.n_w else 0.0

    def _extend(self, k: int) -> None:
        with self._lock:
            A_c = self.sys.ctrl.A_c
            while len(self._M) <= k:
                j = len(self._M) - 1
                J = self._J[j] + self._expAkh[j] @ self._Jh
                self._J.append(J)
                self._expAkh.append(self._Ah @ self._expAkh[j])
                M2 = A_c @ self._M2[j] + self._ctrl_in
                self._M2.append(M2)
                self._M.append(np.vstack([self._sel_p + J @ self._drift, M2]))

    def M(self, k: int) -> np.ndarray:
        if k < 0:
            raise ValueError(f"k must be nonnegative, got {k}")
        if k >= len(self._M):
            self._extend(k)
        return self._M[k]

    def J(self, k: int) -> np.ndarray:
        self.M(k)
        return self._J[k]

    def d_Ap(self, k: int) -> float:
        return _growth_integral(self.lam, k * self.sys.h)

    def theta_radius(self, k: int) -> float:
        """Euclidean radius bounding ``|Theta(k)|`` for every ``|w| <= W``."""
        if k < 0:
            raise ValueError(f"k must be nonnegative, got {k}")
        W = self.sys.W
        if W == 0.0 or self.E_norm == 0.0:
            return 0.0
        return _growth_integral(0.5 * self.lam, k * self.sys.h) * self.E_norm * W

    def phi1(self, k: int) -> np.ndarray:
        Q, CE, M = self.sys.Q, self.sys.C_E, self.M(k)
        cross = M.T @ Q.Q2 @ CE
        P = M.T @ Q.Q1 @ M + cross + cross.T + CE.T @ Q.Q4 @ CE
        return 0.5 * (P + P.T)

    def phi2(self, k: int) -> np.ndarray:
        Q, CE = self.sys.Q, self.sys.C_E
        return self.M(k).T @ Q.Q1 + CE.T @ Q.Q3

    def phi3_per_mu(self, k: int, lamE: float) -> float:
        """``Phi3(k) / mu``; ``Phi3`` is affine in ``mu`` with this slope."""
        return k * self.sys.h * lamE * self.d_Ap(k)

    def phi_matrices(self, k: int, spec: SpectralData) -> tuple[np.ndarray, np.ndarray, float]:
        return self.phi1(k), self.phi2(k), spec.mu * self.phi3_per_mu(k, spec.lamE)


_cache: "weakref.WeakKeyDictionary[PetcSystem, LiftedDynamics]" = weakref.WeakKeyDictionary()
_cache_lock = threading.Lock()


def lifted(sys: PetcSystem) -> LiftedDynamics:
    """Shared :class:`LiftedDynamics` for ``sys``."""
    with _cache_lock:
        dyn = _cache.get(sys)
        if dyn is None:
            dyn = _cache[sys] = LiftedDynamics(sys)
        return dyn


def transition_matrix(sys: PetcSystem, k: int) -> np.ndarray:
    return lifted(sys).M(k)


def d_Ap(sys: PetcSystem, k: int) -> float:
    """``int_0^{kh} exp((kh - s) lambda_max(A_p + A_p')) ds``."""
    if k < 0:
        raise ValueError(f"k must be nonnegative, got {k}")
    return lifted(sys).d_Ap(k)


def phi_matrices(sys: PetcSystem, spec: SpectralData, k: int):
    return lifted(sys).phi_matrices(k, spec)


def theta_radius(sys: PetcSystem, k: int) -> float:
    return lifted(sys).theta_radius(k)

