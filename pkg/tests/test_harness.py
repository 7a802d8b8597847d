import math
import warnings

import numpy as np
import pytest

from acmpc.cli.suites import regulation_config
from acmpc.harness import reference as refgen
from acmpc.harness.controller import Controller, ControllerConfig, Mode
from acmpc.harness.environments import EnvKind, EnvScale, make_environment, regulation_environment
from acmpc.harness.runner import (STEP_SCHEMA, TABLE_COLUMNS, TABLE_SCHEMA, TrialTable, run_closed_loop, step_log_csv,
                                  table_csv, trial_offsets)
from acmpc.simplicity import SimplicitySet
from acmpc.testbed import make_testbed

TB = make_testbed()


def test_trot_schedule_alternates_diagonals():
    c = refgen.trot_schedule(40, 4, 28, period=12)
    assert c[:4].all() and c[28:].all()
    assert list(c[4]) == [True, False, False, True]
    assert list(c[10]) == [False, True, True, False]
    # two legs always on the ground while trotting
    assert np.all(c[4:28].sum(axis=1) == 2)


def test_leap_schedule_phases():
    plan = refgen.leap_schedule(120, 10, 50, 80, 100)
    ev = plan.events
    c = plan.contact
    assert ev["push"] == 50 and ev["flight"] == 56 and ev["land"] == 64 and ev["rear_land"] == 70
    assert not c[ev["flight"]:ev["land"]].any()
    assert list(c[ev["push"]]) == [False, False, True, True]
    assert list(c[ev["land"]]) == [True, True, False, False]
    assert c[ev["gather"]:ev["push"]].all()


def test_trapezoid_profile():
    s = refgen.trapezoid(3.0, 1.0, 2.0, 0.03)
    v = np.diff(s) / 0.03
    assert s[0] == 0.0 and s[-1] == 3.0
    assert np.all(v >= -1e-12) and v.max() <= 1.0 + 1e-9
    assert len(s) * 0.03 == pytest.approx(3.5, abs=0.06)
    short = refgen.trapezoid(0.1, 1.0, 2.0, 0.03)
    assert short[-1] == 0.1 and np.max(np.diff(short)) / 0.03 < 1.0


def test_environment_geometry():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        acc, pair = make_environment("Acceleration")
        step, _ = make_environment("Step")
        gap, _ = make_environment("Gap")
    assert np.allclose(acc.goal, [3.0, 0.0])
    assert step.terrain.heights == (0.0, 0.2) and step.terrain.edges == (1.5,)
    lo, hi = gap.terrain.edges
    assert hi - lo == pytest.approx(0.4) and 0.5 * (lo + hi) == pytest.approx(1.5)
    for env in (acc, step, gap):
        assert env.reference.consistency_error(pair) <= 1e-6
        assert np.allclose(env.reference.x[0], env.start)
    assert EnvKind.parse("gap") is EnvKind.GAP
    with pytest.raises(ValueError):
        EnvScale(gap_width=0.0)


def test_configuration_sets():
    N = 24
    mixed = ControllerConfig(mode="Mixed", horizon=N)
    S = mixed.base_set()
    assert mixed.mixed_prefix == math.ceil(N / 4)
    assert S.fraction() == 0.75 and S.indices[0] == 6 and S.indices[-1] == N - 1
    assert len(ControllerConfig(mode=Mode.COMPLEX).base_set()) == 0
    assert ControllerConfig(mode=Mode.SIMPLE).base_set().indices == tuple(range(1, N))
    assert ControllerConfig().base_set() is None
    assert ControllerConfig().S_f.indices == tuple(range(2, N - 1))
    with pytest.raises(ValueError):
        ControllerConfig(slow_policy="skip")
    with pytest.raises(ValueError):
        ControllerConfig(mode="Fancy")


def test_trial_offsets_are_seeded():
    a, b = trial_offsets(10, 0), trial_offsets(10, 0)
    assert a == b and a != trial_offsets(10, 1)
    assert all(-0.2 <= v <= 0.2 for v in a)
    with pytest.raises(ValueError):
        trial_offsets(0, 0)


def test_closed_loop_applies_first_lifted_control_and_complex_plant():
    cfg = regulation_config(Mode.ADAPTIVE)
    env = regulation_environment(TB, np.array([2.0, 1.0, 0.5]), steps=60)
    seen = []

    def on_step(k, x, st):
        seen.append((x.copy(), st.control.copy(), st.lifted[0].control.copy(), set(st.S)))

    met, log = run_closed_loop(cfg, env, TB, on_step=on_step)
    assert met.success
    X, U = log.arrays()
    for k, (x, u, u0, S) in enumerate(seen):
        assert np.array_equal(u, u0) and np.array_equal(U[k], u)
        assert np.allclose(X[k + 1], TB.A @ x + TB.B @ u, atol=0, rtol=0)
        assert S <= set(cfg.S_f)
    assert all(met.admissible)
    assert max(met.prediction_error) <= 1e-8
    # the off-manifold mode decays, so the adaptive set eventually simplifies
    assert max(met.pct_simplified) > 0.5


def test_fallback_policy_replays_the_previous_plan():
    cfg = ControllerConfig(mode="Complex", horizon=10, dt=0.5, solve_budget=1e-9, slow_policy="fallback")
    env = regulation_environment(TB, np.array([1.0, 0.5, 0.2]), steps=5)
    met, _ = run_closed_loop(cfg, env, TB)
    assert all(met.slow) and not met.fallback[0] and all(met.fallback[1:])


def test_step_log_and_table_csv():
    cfg = regulation_config(Mode.MIXED)
    env = regulation_environment(TB, np.array([1.0, 0.5, 0.2]), steps=30)
    met, log = run_closed_loop(cfg, env, TB)
    text = step_log_csv(met, log, cfg.dt, timing=False)
    lines = text.splitlines()
    assert lines[0] == f"# schema: {STEP_SCHEMA}"
    head = lines[1].split(",")
    assert "solve_time" not in head and head[:7] == ["k", "t", "status", "iterations", "pct_simplified",
                                                      "admissible", "mask"]
    assert len(lines) == 2 + met.steps
    assert "solve_time" in step_log_csv(met, log, cfg.dt).splitlines()[1]
    tab = table_csv([TrialTable("Mixed", [met], [0.0])]).splitlines()
    assert tab[0] == f"# schema: {TABLE_SCHEMA}" and tab[1].split(",") == list(TABLE_COLUMNS)
    assert tab[2].startswith("Mixed,1/1,")


def test_controller_set_is_the_intersection():
    cfg = ControllerConfig(horizon=8, dt=0.5, fixed_set=(2, 3, 4))
    ctrl = Controller(cfg, TB)
    ctrl.S_a = SimplicitySet(8, (1, 3, 4, 6))
    assert ctrl.current_set().indices == (3, 4)
