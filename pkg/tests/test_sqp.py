import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acmpc.cli.suites import condensed_complex_qp
from acmpc.ocp import assemble, lift_solution, lifted_arrays, shift_warm_start
from acmpc.simplicity import SimplicitySet
from acmpc.sqp import HessianMode, SqpSettings, Status, check_derivatives, kkt_residual, solve
from acmpc.testbed import make_testbed, zero_reference

TB = make_testbed()
N = 10
WIN = zero_reference(TB, N).window(0, N)


def test_complex_solve_matches_condensed_oracle():
    x0 = np.array([2.0, -0.5, 0.3])
    res = solve(assemble(TB, SimplicitySet.empty(N), x0, WIN))
    cost, U = condensed_complex_qp(TB, x0, N)
    assert res.converged and res.kkt_residual <= 1e-6
    assert res.objective == pytest.approx(cost, rel=1e-7)
    _, Us = lifted_arrays(lift_solution(assemble(TB, SimplicitySet.empty(N), x0, WIN).trajectory(res.primal), WIN, TB))
    assert np.allclose(Us, U, atol=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.sets(st.integers(1, N - 1)), st.floats(-2, 2), st.floats(-1, 1))
def test_any_set_reaches_the_complex_optimum_on_the_manifold(S, p, v):
    # w0 = 0: the optimal complex plan never leaves the manifold, so simplifying
    # any inner index costs nothing
    x0 = np.array([p, v, 0.0])
    full = solve(assemble(TB, SimplicitySet.empty(N), x0, WIN))
    res = solve(assemble(TB, SimplicitySet(N, tuple(S)), x0, WIN))
    assert full.converged and res.converged
    assert res.objective == pytest.approx(full.objective, rel=1e-7, abs=1e-9)


def test_simplified_plan_is_more_expensive_off_the_manifold():
    x0 = np.array([1.0, 0.0, 0.8])
    full = solve(assemble(TB, SimplicitySet.empty(N), x0, WIN))
    res = solve(assemble(TB, SimplicitySet(N, (1, 2, 3)), x0, WIN))
    assert res.converged and full.converged
    assert res.objective > full.objective + 1e-6


def test_unreachable_terminal_set_is_infeasible():
    res = solve(assemble(TB, SimplicitySet.empty(2), np.array([5.0, 2.0, 1.0]), zero_reference(TB, 2).window(0, 2)))
    assert res.status is Status.INFEASIBLE and not res.converged


def test_warm_start_converges_in_few_iterations():
    x0 = np.array([2.0, 1.0, 0.5])
    p0 = assemble(TB, SimplicitySet.empty(N), x0, WIN)
    r0 = solve(p0)
    X, U = lifted_arrays(lift_solution(p0.trajectory(r0.primal), WIN, TB))
    p1 = assemble(TB, SimplicitySet.empty(N), X[1], WIN)
    r1 = solve(p1, shift_warm_start(p0, r0.primal, r0.duals, p1))
    assert r1.converged and r1.iterations <= 2
    assert kkt_residual(p1, r1.primal, *r1.duals) <= 1e-6


def test_settings_contracts():
    with pytest.raises(ValueError):
        SqpSettings(kkt_tol=0.0)
    with pytest.raises(ValueError):
        SqpSettings(ls_backtrack=1.0)
    with pytest.raises(ValueError):
        SqpSettings(hessian=HessianMode.EXACT_REGULARIZED)
    with pytest.raises(ValueError):
        SqpSettings(globalization="trust")


def test_max_iter_is_reported():
    env_x0 = np.array([2.0, 1.0, 0.5])
    res = solve(assemble(TB, SimplicitySet.empty(N), env_x0, WIN), None, SqpSettings(max_iter=1, kkt_tol=1e-14))
    assert res.status in (Status.MAX_ITER, Status.CONVERGED)
    assert res.iterations == 1


def test_derivative_check_on_testbed_is_exact():
    prob = assemble(TB, SimplicitySet(N, (2, 3, 7)), np.array([1.0, 0.2, 0.1]), WIN)
    z = np.random.default_rng(0).normal(size=prob.n)
    assert check_derivatives(prob, z) <= 1e-8
    with pytest.raises(ValueError):
        check_derivatives(prob, z, h=0.0)
