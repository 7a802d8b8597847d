import numpy as np
import pytest

from acmpc.cli.suites import check_ocp_derivatives, rollout_error
from acmpc.core import ContractError, SpaceTag
from acmpc.ocp import assemble, lift_solution, lifted_arrays, reduce_solution
from acmpc.simplicity import SimplicitySet
from acmpc.sqp import solve
from acmpc.testbed import make_testbed, zero_reference

TB = make_testbed()
N = 8
WIN = zero_reference(TB, N).window(0, N)
X0 = np.array([1.5, -0.5, 0.0])


def test_variable_count_follows_the_set():
    S = SimplicitySet(N, (2, 3, 5))
    prob = assemble(TB, S, X0, WIN)
    # complex stage 3+2, simple stage 2+1, terminal 3
    assert prob.n == (N - 3) * 5 + 3 * 3 + 3
    assert prob.n == assemble(TB, SimplicitySet.empty(N), X0, WIN).n - 3 * 2
    assert set(prob.cases) == {(False, False), (False, True), (True, True), (True, False)}
    assert list(prob.Is) == [2, 3, 5]


def test_assemble_contracts():
    with pytest.raises(ContractError):
        assemble(TB, SimplicitySet.empty(N + 1), X0, WIN)
    with pytest.raises(ContractError):
        assemble(TB, SimplicitySet(N, (0,)), X0, WIN)
    with pytest.raises(ContractError):
        assemble(TB, SimplicitySet.empty(N), np.zeros(2), WIN)
    with pytest.raises(ContractError):
        assemble(TB, SimplicitySet.empty(N), X0, WIN, N_a=N + 1)


def test_lifted_solution_is_a_complex_rollout():
    S = SimplicitySet(N, (1, 2, 4, 5))
    prob = assemble(TB, S, X0, WIN)
    res = solve(prob)
    traj = prob.trajectory(res.primal)
    assert [z.space for z in traj.stages][:3] == [SpaceTag.COMPLEX, SpaceTag.SIMPLE, SpaceTag.SIMPLE]
    lifted = lift_solution(traj, WIN, TB)
    assert all(z.space is SpaceTag.COMPLEX for z in lifted[:-1])
    assert rollout_error(TB, lifted, X0, WIN) <= 1e-9
    reduced = reduce_solution(traj, TB)
    X, _ = lifted_arrays(lifted)
    assert np.allclose([z.state for z in reduced[:-1]], X[:N, :2])


def test_reference_guess_pins_the_measured_state():
    prob = assemble(TB, SimplicitySet(N, (3,)), X0, WIN)
    z = prob.reference_guess().z
    assert np.array_equal(z[:3], X0)
    assert prob.objective(prob.z_ref) == 0.0


def test_debug_dump(tmp_path):
    import json

    prob = assemble(TB, SimplicitySet(N, (3,)), X0, WIN)
    path = tmp_path / "ocp.json"
    prob.debug_dump(path)
    info = json.loads(path.read_text())
    assert info["n"] == prob.n and info["simplicity"] == [3]


def test_legged_transcription_derivatives():
    chk = check_ocp_derivatives()
    assert chk.passed, chk.line()
