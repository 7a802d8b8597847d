import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse as sp

from acmpc.qp import QpStatus, QpSubproblem, elastic, qp_solve, solve_dense, solve_sparse


def random_qp(seed, n=6, me=2, mi=4):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.5 * np.eye(n)
    A = rng.normal(size=(me, n))
    x_feas = rng.normal(size=n)
    C = rng.normal(size=(mi, n))
    Cx = C @ x_feas
    lb = Cx - rng.uniform(0.1, 1.0, mi)
    ub = Cx + rng.uniform(0.1, 1.0, mi)
    lb[0] = -np.inf  # one-sided row
    return QpSubproblem(H, rng.normal(size=n), A, A @ x_feas, C, lb, ub)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_dense_and_sparse_backends_agree(seed):
    qp = random_qp(seed)
    d, s = solve_dense(qp), solve_sparse(qp)
    assert d.ok and s.ok
    assert np.allclose(d.x, s.x, atol=1e-6)
    assert qp.kkt_residual(d.x, d.y, d.lam) <= 1e-8
    assert qp.kkt_residual(s.x, s.y, s.lam) <= 1e-6


def test_unconstrained_and_equality_only():
    H = np.diag([2.0, 4.0])
    qp = QpSubproblem(H, np.array([-2.0, -4.0]), np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)), np.zeros(0), np.zeros(0))
    assert np.allclose(solve_dense(qp).x, [1.0, 1.0])
    qp = QpSubproblem(H, np.zeros(2), np.array([[1.0, 1.0]]), np.array([3.0]), np.zeros((0, 2)), np.zeros(0), np.zeros(0))
    assert np.allclose(solve_dense(qp).x, [2.0, 1.0])


def test_known_active_bound():
    # min (x-2)^2 s.t. x <= 1: x = 1 with multiplier 2
    qp = QpSubproblem(np.array([[2.0]]), np.array([-4.0]), np.zeros((0, 1)), np.zeros(0), np.array([[1.0]]),
                      np.array([-np.inf]), np.array([1.0]))
    r = solve_dense(qp)
    assert r.ok and r.x[0] == pytest.approx(1.0) and r.lam[0] == pytest.approx(2.0)
    assert r.active == ((0, 1),)


def test_warm_active_set_finishes_in_one_solve():
    qp = random_qp(3)
    cold = solve_dense(qp)
    warm = solve_dense(qp, warm=cold.active)
    assert warm.info.get("path") == "warm" and warm.iterations == 1
    assert np.allclose(warm.x, cold.x, atol=1e-9)


def test_infeasible_qp_is_reported():
    qp = QpSubproblem(np.eye(1), np.zeros(1), np.zeros((0, 1)), np.zeros(0), np.array([[1.0], [1.0]]),
                      np.array([1.0, -np.inf]), np.array([np.inf, 0.0]))
    assert solve_dense(qp).status is QpStatus.INFEASIBLE
    assert solve_sparse(qp).status is QpStatus.INFEASIBLE


def test_elastic_form_is_always_feasible():
    qp = QpSubproblem(np.eye(1), np.zeros(1), np.zeros((0, 1)), np.zeros(0), np.array([[1.0], [1.0]]),
                      np.array([1.0, -np.inf]), np.array([np.inf, 0.0]))
    el = elastic(qp, penalty=10.0)
    r = solve_dense(el.qp)
    assert r.ok
    # x = 0 costs 10 for one unit of violation; moving x only adds curvature
    assert el.split(r.x)[0] == pytest.approx(0.0, abs=1e-8)
    assert el.infeasibility(r.x) == pytest.approx(1.0, abs=1e-8)
    assert el.qp.kkt_residual(r.x, r.y, r.lam) <= 1e-8


def test_auto_backend_picks_sparse_for_sparse_data():
    qp = random_qp(5)
    sqp = QpSubproblem(sp.csc_matrix(qp.H), qp.g, sp.csr_matrix(qp.A), qp.b, sp.csr_matrix(qp.C), qp.lb, qp.ub)
    r = qp_solve(sqp)
    assert "clarabel" in r.info
    assert np.allclose(r.x, qp_solve(qp).x, atol=1e-6)
