import numpy as np
import pytest

from petc_traffic import serialization as ser
from petc_traffic.bounds import (BoundsConfig, BoundsError, BoundsTable, compute_bounds,
                                 global_upper_bound, regional_lower_bound,
                                 regional_lower_bound_w0, regional_upper_bound_w0,
                                 theorem_problem)
from petc_traffic.dynamics import choose_psi_mu, lifted
from petc_traffic.lmi import sdp_feasible
from petc_traffic.model import PetcSystem, example_system
from petc_traffic.partition import build_partition

# Exact first-trigger steps over 4001 rays per cone (direct exponentials and the
# |u - u_hat|^2 - sigma |u|^2 rule): min - 1 and max per cone.  The cone
# S-procedure in the plane is lossless, so the LMI bounds must match exactly.
ORACLE_K_LOWER_W0 = [91, 113, 141, 58, 36, 38, 57, 74]
ORACLE_K_UPPER_W0 = [114, 161, 283, 142, 59, 58, 75, 92]


def test_l_bar_example(ex_sys):
    assert global_upper_bound(ex_sys) == 283
    assert global_upper_bound(ex_sys) == max(ORACLE_K_UPPER_W0)


def test_l_bar_immediate_trigger():
    sys = PetcSystem.from_matrices([[0.0, 1.0], [-2.0, 3.0]], [[0.0], [1.0]], [[1.0], [0.0]],
                                   np.eye(2), sigma=1e-6, h=0.05, K=[[1.0, -4.0]])
    assert np.linalg.eigvalsh(lifted(sys).phi1(1))[0] > 0
    assert global_upper_bound(sys) == 1


def test_l_bar_cap_reports_unboundedness():
    # Constant state: u = u_hat forever, the trigger never fires.
    sys = PetcSystem.from_matrices(np.zeros((2, 2)), np.zeros((2, 1)), np.zeros((2, 1)),
                                   np.eye(2), sigma=0.1, h=0.01, K=[[1.0, 1.0]])
    with pytest.raises(BoundsError, match="k_cap"):
        global_upper_bound(sys, k_cap=50)


def test_w0_bounds_match_ray_oracle(ex_bounds):
    assert [ex_bounds[(s1, 1)].k_lower_w0 for s1 in range(1, 9)] == ORACLE_K_LOWER_W0
    assert [ex_bounds[(s1, 1)].k_upper_w0 for s1 in range(1, 9)] == ORACLE_K_UPPER_W0
    assert ex_bounds.maei_steps() == dict(zip(range(1, 9), ORACLE_K_UPPER_W0))


def test_single_cone_functions(ex_sys, ex_partition):
    cone = ex_partition.cone(5)
    assert regional_lower_bound_w0(ex_sys, cone) == ORACLE_K_LOWER_W0[4]
    assert regional_lower_bound_w0(ex_sys, ex_partition[(5, 3)]) == ORACLE_K_LOWER_W0[4]
    assert regional_upper_bound_w0(ex_sys, cone, 283) == ORACLE_K_UPPER_W0[4]


def test_full_space_cone_matches_global_minimum(ex_sys):
    P = build_partition(2, 1, 1)
    k_lo = regional_lower_bound_w0(ex_sys, P.cone(1))
    assert k_lo + 1 == min(o + 1 for o in ORACLE_K_LOWER_W0)
    assert regional_upper_bound_w0(ex_sys, P.cone(1), 283, k_lo) == 283


def test_region_bounds_invariants(ex_bounds):
    for rid, rb in ex_bounds.regions.items():
        assert 1 <= rb.k_lower_perturbed + 1 <= rb.k_lower_w0 + 1 <= rb.k_upper_w0 <= rb.l_bar
        if rid[1] == 1:
            assert rb.k_lower_perturbed == 0
        assert rb.unknown_solves == 0


def test_shell_monotonicity(ex_bounds):
    for s1 in range(1, 9):
        ks = [ex_bounds[(s1, s2)].k_lower_perturbed for s2 in range(1, 7)]
        assert ks == sorted(ks)
        assert ks[-1] > 0


def test_disturbance_monotonicity(ex_sys, ex_partition, ex_bounds):
    smaller = ex_sys.with_disturbance_bound(1.0)
    for rid in [(1, 3), (5, 2), (8, 6)]:
        k = regional_lower_bound(smaller, None, ex_partition[rid], 300)
        assert k >= ex_bounds[rid].k_lower_perturbed


def test_zero_disturbance_reduces_to_cone_bound(ex_sys_w0, ex_partition):
    for rid in [(1, 1), (3, 2), (6, 5)]:
        region = ex_partition[rid]
        assert regional_lower_bound(ex_sys_w0, None, region, 300) == ORACLE_K_LOWER_W0[rid[0] - 1]
        spec = choose_psi_mu(ex_sys_w0)
        assert regional_lower_bound(ex_sys_w0, spec, region, 300) == ORACLE_K_LOWER_W0[rid[0] - 1]


def test_theorem_lmi_feasible_at_zero(ex_sys, ex_partition):
    for region in ex_partition:
        if region.shell.inner == 0:
            continue
        assert sdp_feasible(theorem_problem(ex_sys, region, 0, None, BoundsConfig()))
        assert sdp_feasible(theorem_problem(ex_sys, region, 0, choose_psi_mu(ex_sys),
                                            BoundsConfig()))


def test_fixed_psi_is_sound_and_not_better(ex_sys, ex_partition, ex_bounds):
    spec = choose_psi_mu(ex_sys, 1.0)
    for rid in [(2, 4), (7, 6)]:
        k_fixed = regional_lower_bound(ex_sys, spec, ex_partition[rid], 300)
        assert k_fixed <= ex_bounds[rid].k_lower_perturbed


def test_table_round_trip(ex_bounds):
    back = BoundsTable.from_dict(ex_bounds.to_dict())
    assert back.l_bar == ex_bounds.l_bar
    for rid, rb in ex_bounds.regions.items():
        assert back[rid].k_lower_perturbed == rb.k_lower_perturbed
        assert back[rid].k_upper_w0 == rb.k_upper_w0
    csv_text = ex_bounds.to_csv()
    assert csv_text.splitlines()[0].startswith("s1,s2,k_lower_perturbed")
    assert len(csv_text.splitlines()) == 49


def test_parallel_matches_serial():
    sys = example_system(W=2.0)
    P = build_partition(2, 2, 3, [1.0, 4.0])
    a = compute_bounds(sys, P, jobs=1)
    b = compute_bounds(sys, P, jobs=2)
    assert ser.dumps(a.to_dict()) == ser.dumps(b.to_dict())


def test_bounds_config_validation():
    with pytest.raises(ValueError):
        BoundsConfig(psi_mode="auto")
    with pytest.raises(ValueError):
        BoundsConfig(margin=0.0)
