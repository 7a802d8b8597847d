import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from acmpc.cli.suites import check_equilibrium, check_kernel_derivatives, standing_equilibrium
from acmpc.core import ContractError, SpaceTag, StagePair, single_context
from acmpc.harness import reference as refgen
from acmpc.legged import _kernels_py, kernels
from acmpc.legged.kinematics import leg_fk, leg_ik, nominal_angles, rotation
from acmpc.legged.model import LeggedPair, friction_rows, legged_admissibility
from acmpc.legged.params import LeggedParams
from acmpc.legged.terrain import Terrain

P = LeggedParams()


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-1.2, 1.2), st.floats(0.4, 2.4))
def test_ik_inverts_fk_inside_the_joint_box(a, h, k):
    # the closed form takes the branch with the foot below the hip
    assume(P.l_upper * np.cos(h) + P.l_lower * np.cos(h + k) > 0.02)
    theta = np.tile([a, h, k], (4, 1))
    ell = leg_fk(theta, P)
    back, gap = leg_ik(ell, P)
    assert np.all(gap <= 1e-12)
    assert np.allclose(leg_fk(back, P), ell, atol=1e-10)
    assert np.allclose(back, theta, atol=1e-8)


def test_ik_reports_reach_gap():
    ell = P.hips + np.array([0.0, 0.0, -0.6])
    _, gap = leg_ik(ell, P)
    assert np.all(gap > 0.1)


def test_fk_jacobian_matches_differences():
    theta = nominal_angles(P) + 0.1
    _, J = leg_fk(theta, P, order=1)
    h = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fd = (leg_fk(theta + e, P) - leg_fk(theta - e, P)) / (2 * h)
        assert np.allclose(J[..., k], fd, atol=1e-8)


def test_nominal_pose_puts_feet_under_the_hips():
    ell = leg_fk(nominal_angles(P), P)
    assert np.allclose(ell[:, 2], -P.nominal_height)
    assert np.allclose(ell[:, :2], P.hips[:, :2] + np.column_stack([np.zeros(4), P.sides * P.l_abd]))


def test_rotation_is_orthonormal():
    R = rotation(np.array([0.1, -0.2, 0.3]))
    assert np.allclose(R @ R.T, np.eye(3)) and np.linalg.det(R) == pytest.approx(1.0)


def test_compiled_kernels_equal_the_fallback():
    compiled = pytest.importorskip("acmpc.legged._kernels")
    rng = np.random.default_rng(0)
    x = refgen.standing_state(P)[None] + 0.1 * rng.normal(size=(6, 36))
    u = 10.0 * rng.normal(size=(6, 24))
    e = 0.3 * rng.normal(size=(6, 36))
    args = (P.m, P.inertia, P.g, P.dt)
    for a, b in zip(compiled.srb_step(x, u, *args, True), _kernels_py.srb_step(x, u, *args, True)):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    for a, b in zip(compiled.slack_rows(x, u, e, P), _kernels_py.slack_rows(x, u, e, P)):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_kernel_derivatives():
    chk = check_kernel_derivatives(samples=3)
    assert chk.passed, chk.line()
    assert kernels.BACKEND in ("compiled", "python")


def test_standing_equilibrium_is_a_rest_point():
    chk = check_equilibrium()
    assert chk.passed, chk.line()
    x, u, _ = standing_equilibrium()
    F = u[:12].reshape(4, 3)
    assert F.sum(axis=0) == pytest.approx([0.0, 0.0, P.m * P.g])
    assert np.all(F[:, 2] > 0)


def test_terrain_heights_and_edges():
    ter = Terrain((1.0, 1.4), (0.0, -1.0, 0.0))
    assert np.array_equal(ter.raw_height(np.array([0.5, 1.2, 1.5])), [0.0, -1.0, 0.0])
    assert ter.edge_distance(np.array([1.1]))[0] == pytest.approx(0.1)
    assert not ter.supported(np.array([1.2]))[0]
    h, g = ter.height(np.array([[0.5, 0.0], [1.2, 0.0]]), grad=True)
    assert np.allclose(h, [0.0, -1.0], atol=1e-6) and g.shape == (2, 2)
    with pytest.raises(ContractError):
        Terrain((1.0,), (0.0,))
    assert ter.to_dict() == {"edges": [1.0, 1.4], "heights": [0.0, -1.0, 0.0], "width": 0.02}


def test_friction_pyramid():
    ub = np.zeros(12)
    ub[2] = 100.0
    ub[0] = 69.0
    c, G = friction_rows(ub[None], 0.7)
    assert np.all(c[0, :4] <= 0)
    ub[0] = 71.0
    assert np.max(friction_rows(ub[None], 0.7)[0][0, :4]) == pytest.approx(1.0)
    assert G.shape == (16, 12)


def test_dims_and_params():
    pair = LeggedPair()
    d = pair.dims
    assert (d.n_xc, d.n_uc, d.n_e) == (36, 24, 36)
    assert (d.n_xs, d.n_us) == (12, 12)
    with pytest.raises(ContractError):
        P.replace(bogus=1)
    with pytest.raises(ContractError):
        LeggedParams(m=-1.0)


def test_context_needs_contact_flags():
    pair = LeggedPair()
    x, u, _ = standing_equilibrium()
    ctx = single_context(StagePair(x, u, SpaceTag.COMPLEX))
    with pytest.raises(ContractError):
        pair.complex_violation(x, u, ctx)


def test_specialized_admissibility_on_the_standing_pose():
    pair = LeggedPair()
    x, u, ctx = standing_equilibrium()
    assert legged_admissibility(pair, x, u, ctx, 1e-6).all()
    moved = x.copy()
    moved[6] += 1e-3  # a foot off the reference
    assert not legged_admissibility(pair, moved, u, ctx, 1e-6).any()
