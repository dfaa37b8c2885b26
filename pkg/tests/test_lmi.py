import numpy as np
import pytest

from petc_traffic.lmi import (FEASIBLE, INFEASIBLE, FeasibilityProblem, sdp_feasible)


def test_constant_negative_identity_feasible():
    res = sdp_feasible(FeasibilityProblem(-np.eye(3)))
    assert res and res.status == FEASIBLE
    assert res.margin == pytest.approx(-1.0)


def test_identity_with_psd_multipliers_infeasible():
    rng = np.random.default_rng(0)
    mats = []
    for _ in range(3):
        R = rng.standard_normal((3, 3))
        mats.append(R @ R.T)
    res = sdp_feasible(FeasibilityProblem(np.eye(3), mats))
    assert not res and res.status == INFEASIBLE


def test_hand_solvable_one_multiplier():
    # [[-1 + e, 0], [0, -2 - e]] <= 0 exactly for e in [0, 1].
    F0, F1 = np.diag([-1.0, -2.0]), np.diag([1.0, -1.0])
    assert sdp_feasible(FeasibilityProblem(F0, [F1]))
    assert sdp_feasible(FeasibilityProblem(F0 + 0.9 * np.diag([1.0, 0.0]), [F1]))
    # shifting the first entry by +1.5 needs e <= -0.5, outside e >= 0
    assert not sdp_feasible(FeasibilityProblem(F0 + np.diag([1.5, 0.0]), [F1]))
    # e forced above 1 by the box
    assert not sdp_feasible(FeasibilityProblem(F0, [F1], lower=[1.2]))


def test_multiplier_needed():
    # Feasible only with e between 1 and 3.
    F0 = np.diag([1.0, -3.0])
    F1 = np.diag([-1.0, 1.0])
    res = sdp_feasible(FeasibilityProblem(F0, [F1]))
    assert res
    assert 1.0 - 1e-7 <= res.multipliers[0] <= 3.0 + 1e-7
    assert np.linalg.eigvalsh(F0 + res.multipliers[0] * F1)[-1] <= 1e-12


def test_strict_positive_definite_sense():
    F0 = np.diag([2.0, -1.0])
    F1 = np.diag([-1.0, 1.0])
    res = sdp_feasible(FeasibilityProblem(F0, [F1], sense="pd"))
    assert res and res.margin > 0
    # a constant PSD but singular matrix is not strictly positive definite
    assert not sdp_feasible(FeasibilityProblem(np.diag([1.0, 0.0]), sense="pd"))
    # margin delta scales with the matrix norm
    assert not sdp_feasible(FeasibilityProblem(np.diag([1.0, 1e-10]), sense="pd", margin=1e-8))
    assert sdp_feasible(FeasibilityProblem(np.diag([1.0, 1e-7]), sense="pd", margin=1e-8))


def test_certificate_is_checked_independently():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = 4
        F0 = rng.standard_normal((n, n))
        F0 = F0 + F0.T
        mats = [(lambda R: R + R.T)(rng.standard_normal((n, n))) for _ in range(2)]
        prob = FeasibilityProblem(F0, mats)
        res = sdp_feasible(prob)
        if res:
            assert np.all(res.multipliers >= -1e-12)
            assert np.linalg.eigvalsh(prob.evaluate(res.multipliers))[-1] <= 1e-9


def test_malformed_problems():
    with pytest.raises(ValueError):
        FeasibilityProblem(np.ones((2, 3)))
    with pytest.raises(ValueError):
        FeasibilityProblem(np.eye(2), [np.eye(3)])
    with pytest.raises(ValueError):
        FeasibilityProblem(np.eye(2), sense="psd")
