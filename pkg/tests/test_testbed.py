import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acmpc.core import ContractError
from acmpc.testbed import (TestbedParams, brute_force_feasible_set, default_grid, invariant_polytope, make_testbed,
                           successor_candidate)

TB = make_testbed()

# Frozen from a stage-wise clarabel feasibility LP (states and controls as
# variables) on the 9-point grid; the package route condenses onto controls
# and uses HiGHS.
BASIN_COUNTS_9 = {2: 9, 3: 45, 4: 99, 5: 171, 6: 261, 7: 351, 8: 441}

# Frozen from a plain Riccati fixed-point iteration (5000 sweeps from P = I).
P_RICCATI = np.array([[4.57230399, 3.08341495, 0.0],
                      [3.08341495, 5.50744778, 0.0],
                      [0.0, 0.0, 1.36995238]])
K_RICCATI = np.array([[-0.64863148, -1.48287015, 0.0],
                      [0.0, 0.0, -0.46244047]])


def test_system_matrices():
    assert np.array_equal(TB.A, [[1, 0.5, 0], [0, 1, 0], [0, 0, 0.8]])
    assert np.array_equal(TB.B, [[0, 0], [0.5, 0], [0, 1]])
    assert np.array_equal(TB.x_max, [5, 2, 1]) and np.array_equal(TB.u_max, [1, 1])


def test_simple_model_is_the_anchored_block():
    assert np.array_equal(TB.As, TB.A[:2, :2]) and np.array_equal(TB.Bs, TB.B[:2, :1])
    # the manifold w = u_w = 0 is invariant and decoupled
    assert np.all(TB.A[:2, 2] == 0) and np.all(TB.A[2, :2] == 0)


def test_lqr_matches_riccati_iteration():
    assert np.allclose(TB.P, P_RICCATI, atol=1e-7)
    assert np.allclose(TB.K, K_RICCATI, atol=1e-7)
    assert np.max(np.abs(np.linalg.eigvals(TB.A + TB.B @ TB.K))) < 1


def test_terminal_set_size_and_grid_check():
    assert TB.Ht.shape == (14, 3)
    rep = TB.verify_terminal(9)
    assert rep["points"] > 0 and rep["decrease"] <= 1e-9 and rep["invariance"] <= 1e-9


@settings(max_examples=200, deadline=None)
@given(st.tuples(*[st.floats(-0.1, 0.1)] * 3))
def test_terminal_set_is_invariant_and_input_admissible(x):
    x = np.array(x)
    if np.any(TB.Ht @ x > TB.ht):
        return
    u = TB.K @ x
    xn = (TB.A + TB.B @ TB.K) @ x
    assert np.all(np.abs(u) <= TB.u_max + 1e-12)
    assert np.all(TB.Ht @ xn <= TB.ht + 1e-9)
    # the terminal cost is a local control Lyapunov function
    assert xn @ TB.P @ xn - x @ TB.P @ x + x @ TB.Q @ x + u @ TB.R @ u <= 1e-9 * (1 + x @ x)


def test_invariant_polytope_of_a_contraction_is_the_box():
    H0 = np.vstack([np.eye(2), -np.eye(2)])
    H, h = invariant_polytope(0.5 * np.eye(2), H0, np.ones(4))
    assert H.shape == (4, 2) and np.allclose(h, 1)


def test_params_contracts():
    with pytest.raises(ContractError):
        TestbedParams(a_w=1.0)
    with pytest.raises(ContractError):
        TestbedParams(p_max=0.0)


def test_basin_counts_match_independent_oracle():
    grid = default_grid(TB, 9)
    for N, count in BASIN_COUNTS_9.items():
        mask = brute_force_feasible_set(TB, grid, N)
        assert int(mask.feasible.sum()) == count
        assert not mask.solver_failed.any()


def test_basins_are_nested():
    grid = default_grid(TB, 9)
    prev = None
    for N in range(2, 9):
        f = brute_force_feasible_set(TB, grid, N).feasible
        if prev is not None:
            assert not np.any(prev & ~f)
        prev = f


def test_mask_csv(tmp_path):
    mask = brute_force_feasible_set(TB, default_grid(TB, 3), 4)
    path = tmp_path / "mask.csv"
    mask.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# schema: feasibility-mask/1"
    assert lines[1] == "p,v,w,N,feasible,solver_failed"
    assert len(lines) == 2 + 27


def test_successor_candidate_from_terminal_controller_rollout():
    # a rollout under u = Kx from inside the terminal set stays feasible when shifted
    x = np.array([0.05, -0.05, 0.05])
    assert np.all(TB.Ht @ x <= TB.ht)
    X, U = [x], []
    for _ in range(5):
        U.append(TB.K @ X[-1])
        X.append(TB.A @ X[-1] + TB.B @ U[-1])
    rep = successor_candidate(np.array(X), np.array(U), X[1], TB)
    assert rep.feasible and rep.cost >= 0
    assert np.allclose(rep.states[0], X[1])
    far = successor_candidate(np.array(X), np.array(U), np.array([4.9, 2.0, 0.0]), TB)
    assert not far.feasible
