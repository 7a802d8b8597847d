import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from acmpc.core import (ContractError, NumericError, ReferenceTrajectory, SpaceTag, StagePair, check_feasible, lift,
                        reduce, single_context, step)
from acmpc.legged.model import LeggedPair
from acmpc.testbed import make_testbed, zero_reference

finite = st.floats(-1e6, 1e6, allow_nan=False)
TB = make_testbed()
LP = LeggedPair()


def _vec(n):
    return arrays(np.float64, n, elements=finite)


@pytest.mark.parametrize("pair", [TB, LP], ids=["testbed", "legged"])
def test_dims_and_keep_sets(pair):
    d = pair.dims
    assert len(pair.x_keep) == d.n_xs and len(pair.u_keep) == d.n_us
    assert set(pair.x_keep).isdisjoint(pair.x_null)
    assert len(pair.x_keep) + len(pair.x_null) == d.n_xc


@settings(max_examples=50, deadline=None)
@given(st.data())
def test_psi_of_psi_dag_is_identity(data):
    for pair in (TB, LP):
        d = pair.dims
        xs, us = data.draw(_vec(d.n_xs)), data.draw(_vec(d.n_us))
        xr, ur = data.draw(_vec(d.n_xc)), data.draw(_vec(d.n_uc))
        x = pair.psi_dag_x(xs, xr)
        assert np.array_equal(pair.psi_x(x), xs)
        assert np.array_equal(pair.psi_u(pair.psi_dag_u(us, ur), x), us)
        # null-space components come from the reference
        assert np.array_equal(x[pair.x_null], xr[pair.x_null])


@settings(max_examples=30, deadline=None)
@given(st.data())
def test_psi_dag_of_psi_restores_on_reference_stage(data):
    d = LP.dims
    x, u = data.draw(_vec(d.n_xc)), data.draw(_vec(d.n_uc))
    assert np.array_equal(LP.psi_dag_x(LP.psi_x(x), x), x)
    assert np.array_equal(LP.psi_dag_u(LP.psi_u(u, x), u), u)


def test_reduce_and_lift_check_tags_and_shapes():
    z = StagePair(np.ones(3), np.ones(2), SpaceTag.COMPLEX)
    zs = reduce(z, TB)
    assert zs.is_simple and zs.state.shape == (2,) and zs.control.shape == (1,)
    back = lift(zs, z, TB)
    assert not back.is_simple and np.array_equal(back.state, z.state)
    with pytest.raises(ContractError):
        reduce(zs, TB)
    with pytest.raises(ContractError):
        lift(zs, None, TB)
    with pytest.raises(ContractError):
        reduce(StagePair(np.ones(4), np.ones(2), SpaceTag.COMPLEX), TB)


def test_stage_pair_is_immutable_and_tagged():
    z = StagePair([1.0, 2.0, 3.0], [0.0, 0.0], SpaceTag.COMPLEX)
    with pytest.raises(ValueError):
        z.state[0] = 5.0
    with pytest.raises(ContractError):
        StagePair([1.0], [1.0], "complex")


def test_step_uses_the_dynamics_of_the_tag():
    ctx = single_context(StagePair(np.zeros(3), np.zeros(2), SpaceTag.COMPLEX))
    z = StagePair([1.0, 1.0, 1.0], [0.5, 0.5], SpaceTag.COMPLEX)
    assert np.allclose(step(z, TB, ctx), TB.A @ z.state + TB.B @ z.control)
    zs = reduce(z, TB)
    assert np.allclose(step(zs, TB, ctx), TB.As @ zs.state + TB.Bs @ zs.control)
    with pytest.raises(NumericError):
        step(StagePair([np.nan, 0, 0], [0, 0], SpaceTag.COMPLEX), TB, ctx)


def test_check_feasible_reports_families():
    ctx = single_context(StagePair(np.zeros(3), np.zeros(2), SpaceTag.COMPLEX))
    ok = check_feasible(StagePair([0.0, 0.0, 0.0], [0.0, 0.0], SpaceTag.COMPLEX), TB, 1e-9, ctx)
    assert ok.feasible and ok.failing() == []
    bad = check_feasible(StagePair([9.0, 0.0, 0.0], [0.0, 3.0], SpaceTag.COMPLEX), TB, 1e-9, ctx)
    assert not bad.feasible
    assert set(bad.failing()) == {"state_box", "control_box"}
    assert bad.max_violation == pytest.approx(4.0)
    with pytest.raises(ContractError):
        check_feasible(StagePair([0.0, 0.0, 0.0], [0.0, 0.0], SpaceTag.COMPLEX), TB, -1.0, ctx)


def test_reference_window_clamps_to_final_row():
    ref = zero_reference(TB, 5)
    w = ref.window(3, 6)
    assert w.horizon == 6 and len(w.ctx) == 7
    assert list(w.ctx.idx) == [3, 4, 5, 5, 5, 5, 5]
    with pytest.raises(ContractError):
        ReferenceTrajectory(np.zeros((3, 3)), np.zeros((3, 2)))


def test_consistency_error_detects_a_broken_reference():
    ref = zero_reference(TB, 4)
    assert ref.consistency_error(TB) == 0.0
    x = ref.x.copy()
    x[2, 0] = 0.25
    assert ReferenceTrajectory(x, ref.u).consistency_error(TB) == pytest.approx(0.25)
