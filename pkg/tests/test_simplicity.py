import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acmpc.core import ContractError, SpaceTag, StagePair
from acmpc.simplicity import (SimplicitySet, check_admissible, effective_set, evaluate_indices, grow_candidates,
                              shift, update_adaptive_set)
from acmpc.testbed import make_testbed, zero_reference

TB = make_testbed()
N = 6


def index_sets(horizon=N):
    return st.sets(st.integers(1, horizon - 1)).map(lambda s: SimplicitySet(horizon, tuple(s)))


def rollout(x0, U):
    X = [np.asarray(x0, dtype=float)]
    for u in U:
        X.append(TB.A @ X[-1] + TB.B @ u)
    return X


def lifted_from(X, U):
    return [StagePair(x, u, SpaceTag.COMPLEX) for x, u in zip(X[:-1], U)] + [X[-1]]


WIN = zero_reference(TB, N).window(0, N)


@given(st.lists(st.integers(0, N)), st.lists(st.integers(0, N)))
def test_set_is_sorted_unique_and_fraction(a, b):
    S = SimplicitySet(N, tuple(a))
    assert list(S.indices) == sorted(set(a))
    assert S.fraction() == len(set(a)) / N
    T = SimplicitySet(N, tuple(b))
    assert set(S.union(T)) == set(a) | set(b)
    assert set(S.without(b)) == set(a) - set(b)
    assert S.mask().sum() == len(S)


@given(index_sets(), index_sets())
def test_effective_set_is_the_intersection(Sa, Sf):
    S = effective_set(Sa, Sf)
    assert set(S) == set(Sa) & set(Sf)
    assert S.respects_range()


@given(index_sets())
def test_shift_moves_indices_down_and_keeps_range(S):
    out = shift(S, S.indices)
    assert set(out) == {i - 1 for i in S if i >= 2}
    assert out.respects_range()


def test_index_range_and_horizon_contracts():
    with pytest.raises(ContractError):
        SimplicitySet(4, (5,))
    with pytest.raises(ContractError):
        effective_set(SimplicitySet.empty(4), SimplicitySet.empty(5))
    assert SimplicitySet.fixed_default(24).indices == tuple(range(2, 23))
    assert not SimplicitySet(4, (0,)).respects_range()


def test_on_manifold_trajectory_admits_every_inner_index():
    U = [np.array([-0.1, 0.0])] * N
    X = rollout([1.0, 0.5, 0.0], U)
    rep = evaluate_indices(range(0, N + 1), lifted_from(X, U), TB, WIN, 1e-6, 1e-6)
    assert rep.passing() == tuple(range(1, N))
    # index 0 has no predecessor to enter from; N lies outside the range
    assert rep.get(0).failed_conditions() == "ad"
    assert "a" in rep.get(N).failed_conditions()


def test_off_manifold_state_fails_anchor_and_entry():
    U = [np.array([-0.1, 0.0])] * N
    X = rollout([1.0, 0.5, 0.5], U)
    rep = check_admissible(SimplicitySet.span(N, 1, N - 1), lifted_from(X, U), TB, 1e-6, WIN)
    assert not rep.overall
    for i in range(1, N):
        e = rep.get(i)
        assert not e.anchors and not e.enters and e.feasible_after_roundtrip
        assert e.entry_residual == pytest.approx(0.5 * 0.8 ** i)


def test_manifold_control_breaks_exact_anchoring_only():
    U = [np.array([-0.1, 0.0])] * N
    U[3] = np.array([-0.1, 0.3])
    X = rollout([1.0, 0.5, 0.0], U)
    rep = evaluate_indices([3, 4], lifted_from(X, U), TB, WIN, 1e-6, 1e-6)
    assert rep.get(3).failed_conditions() == "c"
    assert rep.get(4).failed_conditions() == "cd"  # w is now off the manifold


def test_roundtrip_infeasibility_fails_condition_b():
    U = [np.array([1.0, 0.0])] * N
    X = rollout([4.8, 1.0, 0.0], U)
    rep = evaluate_indices([2], lifted_from(X, U), TB, WIN, 1e-6, 1e-6)
    assert "b" in rep.get(2).failed_conditions()
    assert rep.get(2).roundtrip_violation > 0


def test_empty_set_is_admissible():
    U = [np.zeros(2)] * N
    X = rollout([0.0, 0.0, 0.9], U)
    assert check_admissible(SimplicitySet.empty(N), lifted_from(X, U), TB, 1e-6, WIN).overall


def test_update_and_growth():
    U = [np.array([-0.1, 0.0])] * N
    X = rollout([1.0, 0.5, 0.0], U)
    lifted = lifted_from(X, U)
    S = SimplicitySet(N, (2, 3))
    upd = update_adaptive_set(S, lifted, TB, 1e-6, WIN)
    assert upd.indices == (1, 2) and upd.evidence is not None
    grown = grow_candidates(SimplicitySet.empty(N), lifted, TB, 1e-6, WIN, SimplicitySet.fixed_default(N))
    assert grown.indices == SimplicitySet.fixed_default(N).indices


def test_lifted_length_is_checked():
    U = [np.zeros(2)] * N
    X = rollout([0.0, 0.0, 0.0], U)
    with pytest.raises(ContractError):
        check_admissible(SimplicitySet(N, (1,)), lifted_from(X, U)[:-1], TB, 1e-6, WIN)
