"""Property suites behind ``acmpc verify``.

Each check returns a :class:`Check` with the largest residual it saw. The
``size`` argument trades coverage for time: the CLI uses the quick sizes and
the acceptance tests pass larger ones.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import clarabel
import numpy as np
from scipy import sparse as sp

from ..core import SpaceTag, StageContext, StagePair, single_context
from ..harness import reference as refgen
from ..harness.controller import ControllerConfig, Mode
from ..harness.environments import make_environment, regulation_environment
from ..harness.runner import run_closed_loop
from ..legged import kernels
from ..legged.model import LeggedPair, legged_admissibility
from ..legged.params import LeggedParams
from ..legged.terrain import Terrain
from ..ocp import assemble, lift_solution, lifted_arrays
from ..simplicity import SimplicitySet, check_admissible, evaluate_indices
from ..sqp import SqpSettings, check_derivatives, solve
from ..testbed import (TestbedPair, brute_force_feasible_set, default_grid, make_testbed, successor_candidate,
                       zero_reference)

REG_HORIZON = 10
SUITES = ("core", "testbed", "legged")


@dataclass(frozen=True)
class Check:
    name: str
    claim: str
    passed: bool
    residual: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        out = f"{tag} {self.name}: residual {self.residual:.3e}"
        if self.detail:
            out += f" ({self.detail})"
        if not self.passed:
            out += f" -- {self.claim} violated"
        return out


def _finite_max(values) -> float:
    values = [float(v) for v in values]
    return max(values) if values else 0.0


# -- exactness ----------------------------------------------------------------

def _pairs():
    return {"testbed": make_testbed(), "legged": LeggedPair()}


def check_roundtrip(samples: int = 50, seed: int = 0) -> Check:
    """``psi(psi_dag(z, ref)) == z`` bit for bit, states and controls."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for pair in _pairs().values():
        d = pair.dims
        for _ in range(samples):
            xs, us = rng.normal(size=d.n_xs), rng.normal(size=d.n_us)
            xr, ur = rng.normal(size=d.n_xc), rng.normal(size=d.n_uc)
            x = pair.psi_dag_x(xs, xr)
            worst = max(worst, float(np.max(np.abs(pair.psi_x(x) - xs))),
                        float(np.max(np.abs(pair.psi_u(pair.psi_dag_u(us, ur), x) - us))))
    return Check("roundtrip", "psi o psi_dag identity", worst == 0.0, worst, f"{2 * samples} stages")


def standing_equilibrium(p: LeggedParams | None = None):
    """Standing state, weight-balancing foot forces and a one-row context."""
    p = p or LeggedParams()
    x = refgen.standing_state(p)
    r = x[6:18].reshape(4, 3) - x[0:3]
    # net force m g and zero net moment about the body centre, minimum norm
    M = np.zeros((6, 12))
    for j in range(4):
        M[0:3, 3 * j:3 * j + 3] = np.eye(3)
        M[3:6, 3 * j:3 * j + 3] = np.array([[0, -r[j, 2], r[j, 1]], [r[j, 2], 0, -r[j, 0]], [-r[j, 1], r[j, 0], 0]])
    rhs = np.r_[0.0, 0.0, p.m * p.g, 0.0, 0.0, 0.0]
    u = np.zeros(24)
    u[:12] = np.linalg.lstsq(M, rhs, rcond=None)[0]
    ctx = single_context(StagePair(x, u, SpaceTag.COMPLEX), aux={"contact": np.ones(4, bool)},
                         shared={"terrain": Terrain.flat()})
    return x, u, ctx


def check_equilibrium() -> Check:
    """Both dynamics map the rest point to itself (legged: in deviation coordinates)."""
    tb = make_testbed()
    ctx = single_context(StagePair(np.zeros(3), np.zeros(2), SpaceTag.COMPLEX))
    res = [np.abs(tb.complex_dynamics(np.zeros(3), np.zeros(2), ctx, jac=False)[0]).max(),
           np.abs(tb.simple_dynamics(np.zeros(2), np.zeros(1), ctx, jac=False)[0]).max()]
    lp = LeggedPair()
    x, u, lctx = standing_equilibrium(lp.params)
    res.append(np.abs(lp.complex_dynamics(x, u, lctx, jac=False)[0][0] - x).max())
    xs, us = lp.psi_x(x), lp.psi_u(u, x)
    res.append(np.abs(lp.simple_dynamics(xs, us, lctx, jac=False)[0][0] - xs).max())
    worst = _finite_max(res)
    return Check("equilibrium", "f^c(0,0)=0 and f^s(0,0)=0", worst <= 1e-12, worst, "testbed and legged pairs")


# -- testbed ------------------------------------------------------------------

def random_mask(rng, N: int) -> SimplicitySet:
    keep = rng.random(N - 1) < 0.5
    return SimplicitySet(N, tuple(int(i) for i in np.flatnonzero(keep) + 1))


def rollout_error(pair, lifted, x0, window) -> float:
    """Largest gap between lifted states and a fresh complex rollout of the lifted controls."""
    X, U = lifted_arrays(lifted)
    x = np.asarray(x0, dtype=float)
    worst = 0.0
    for i in range(len(U)):
        x = pair.complex_dynamics(x[None], U[i][None], window.at(i), jac=False)[0][0]
        worst = max(worst, float(np.max(np.abs(x - X[i + 1]))))
    return worst


def testbed_start(rng, pair: TestbedPair, box=(2.0, 1.0, 0.5)) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, 3) * np.asarray(box)


def check_equivalence_testbed(masks: int = 100, seed: int = 1) -> Check:
    """Lifted predictions equal complex rollouts for random masks."""
    pair = make_testbed()
    rng = np.random.default_rng(seed)
    ref = zero_reference(pair, REG_HORIZON)
    win = ref.window(0, REG_HORIZON)
    errs, bad = [], 0
    for _ in range(masks):
        S = random_mask(rng, REG_HORIZON)
        x0 = testbed_start(rng, pair)
        prob = assemble(pair, S, x0, win)
        res = solve(prob, None, SqpSettings())
        if not res.converged:
            bad += 1
            continue
        errs.append(rollout_error(pair, lift_solution(prob.trajectory(res.primal), win, pair), x0, win))
    worst = _finite_max(errs)
    return Check("equivalence-testbed", "trajectory equivalence", worst <= 1e-9 and bad == 0, worst,
                 f"{masks} masks, {bad} unsolved")


def condensed_complex_qp(pair: TestbedPair, x0, N: int):
    """Complex OCP over the control sequence only, solved by clarabel.

    Shares no code with the stage-wise transcription; returns ``(cost, U)`` or
    None when the solver does not report optimality.
    """
    A, B = pair.A, pair.B
    n, m = B.shape
    Phi = np.zeros(((N + 1) * n, n))
    Gam = np.zeros(((N + 1) * n, N * m))
    P = np.eye(n)
    for i in range(N + 1):
        Phi[i * n:(i + 1) * n] = P
        P = A @ P
    for i in range(1, N + 1):
        for j in range(i):
            Gam[i * n:(i + 1) * n, j * m:(j + 1) * m] = np.linalg.matrix_power(A, i - 1 - j) @ B
    Qbar = sp.block_diag([pair.Q] * N + [pair.Qt]).toarray()
    Rbar = np.kron(np.eye(N), pair.R)
    H = 2 * (Gam.T @ Qbar @ Gam + Rbar)
    q = 2 * Gam.T @ Qbar @ Phi @ x0
    c0 = float(x0 @ Phi.T @ Qbar @ Phi @ x0)
    Gx, hx = Gam[n:], Phi[n:] @ x0
    xm = np.tile(pair.x_max, N)
    rows = [Gx, -Gx, np.eye(N * m), -np.eye(N * m)]
    rhs = [xm - hx, xm + hx, np.tile(pair.u_max, N), np.tile(pair.u_max, N)]
    if len(pair.ht):
        GN = Gam[N * n:]
        rows.append(pair.Ht @ GN)
        rhs.append(pair.ht - pair.Ht @ Phi[N * n:] @ x0)
    Gi, hi = np.vstack(rows), np.concatenate(rhs)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = settings.tol_gap_rel = settings.tol_feas = 1e-10
    sol = clarabel.DefaultSolver(sp.csc_matrix(np.triu(H)), q, sp.csc_matrix(Gi), hi,
                                 [clarabel.NonnegativeConeT(len(hi))], settings)
    out = sol.solve()
    if str(out.status) != "Solved":
        return None
    U = np.array(out.x)
    return 0.5 * U @ H @ U + q @ U + c0, U.reshape(N, m)


def check_collapse(instances: int = 20, seed: int = 2, tol_factor: float = 10.0) -> Check:
    """The adaptive OCP with ``S = {}`` reproduces the condensed complex OCP."""
    pair = make_testbed()
    rng = np.random.default_rng(seed)
    settings = SqpSettings()
    tol = tol_factor * settings.kkt_tol
    ref = zero_reference(pair, REG_HORIZON)
    win = ref.window(0, REG_HORIZON)
    errs, bad = [], 0
    for _ in range(instances):
        x0 = testbed_start(rng, pair)
        prob = assemble(pair, SimplicitySet.empty(REG_HORIZON), x0, win)
        res = solve(prob, None, settings)
        oracle = condensed_complex_qp(pair, x0, REG_HORIZON)
        if not res.converged or oracle is None:
            bad += 1
            continue
        _, U = lifted_arrays(lift_solution(prob.trajectory(res.primal), win, pair))
        cost_gap = abs(res.objective - oracle[0]) / max(1.0, abs(oracle[0]))
        errs.append(max(cost_gap, float(np.max(np.abs(U - oracle[1])))))
    worst = _finite_max(errs)
    return Check("collapse", "S={} equals the complex OCP", worst <= tol and bad == 0, worst,
                 f"{instances} instances, tolerance {tol:.0e}")


def regulation_config(mode: Mode = Mode.ADAPTIVE, horizon: int = REG_HORIZON) -> ControllerConfig:
    pair_dt = make_testbed().params.dt
    return ControllerConfig(mode=mode, horizon=horizon, dt=pair_dt, sqp=SqpSettings(), solve_budget=1e6)


@dataclass
class RegulationTrace:
    x0: np.ndarray
    success: bool
    steps: int
    candidate_ok: list
    descent_margin: list
    admissible: list
    final_norm: float


def regulation_trace(pair: TestbedPair, x0, mode: Mode = Mode.ADAPTIVE, steps: int = 200) -> RegulationTrace:
    """One nominal regulation run with per-step feasibility, descent and admissibility records."""
    cfg = regulation_config(mode)
    env = regulation_environment(pair, x0, steps=steps, tol=1e-4)
    recs = []

    def on_step(k, x, st):
        X, U = lifted_arrays(st.lifted)
        recs.append((x.copy(), U[0].copy(), X, U, st.result.objective))

    met, _ = run_closed_loop(cfg, env, pair, on_step=on_step)
    cand_ok, margin = [], []
    for k in range(len(recs) - 1):
        x, u, X, U, V = recs[k]
        x1 = recs[k + 1][0]
        cand_ok.append(successor_candidate(X, U, x1, pair).feasible)
        margin.append((V - recs[k + 1][4]) - pair.stage_cost(x, u, 0.0, 0.0))
    x_last = recs[-1][0] if recs else np.asarray(x0)
    if met.success:
        x_last = np.zeros(3)  # the finished state satisfies the tolerance by definition
    return RegulationTrace(np.asarray(x0, dtype=float), met.success, met.steps, cand_ok, margin,
                           list(met.admissible), float(np.max(np.abs(x_last))))


def check_regulation(runs: int = 5, seed: int = 3, mode: Mode = Mode.ADAPTIVE) -> list:
    """Recursive feasibility, descent, convergence and admissibility on nominal runs."""
    pair = make_testbed()
    rng = np.random.default_rng(seed)
    traces = [regulation_trace(pair, testbed_start(rng, pair), mode) for _ in range(runs)]
    return regulation_checks(traces)


def regulation_checks(traces: list) -> list:
    out = []
    n_bad = [(j, k) for j, t in enumerate(traces) for k, ok in enumerate(t.candidate_ok) if not ok]
    out.append(Check("recursive-feasibility", "successor candidate feasibility", not n_bad, float(len(n_bad)),
                     f"{len(traces)} runs" + (f", first failure run {n_bad[0][0]} step {n_bad[0][1]}" if n_bad else "")))
    worst, where = np.inf, None
    for j, t in enumerate(traces):
        for k, mg in enumerate(t.descent_margin):
            if mg < worst:
                worst, where = mg, (j, k)
    worst = float(worst) if np.isfinite(worst) else 0.0
    ok = worst >= -1e-6
    out.append(Check("descent", "cost descent V(x+) <= V(x) - L(x,u)", ok, worst,
                     f"smallest margin at run {where[0]} step {where[1]}" if where else ""))
    slow = [j for j, t in enumerate(traces) if not t.success]
    out.append(Check("convergence", "regulation to |x| < 1e-4 within 200 steps", not slow,
                     float(max(t.steps for t in traces)), f"max steps; failed runs {slow}" if slow else "max steps"))
    bad_adm = [(j, k) for j, t in enumerate(traces) for k, a in enumerate(t.admissible) if not a]
    out.append(Check("admissibility-testbed", "recursive admissibility", not bad_adm, float(len(bad_adm)),
                     f"first failure run {bad_adm[0][0]} step {bad_adm[0][1]}" if bad_adm else "every step"))
    return out


def check_adaptive_matches_complex(seed: int = 4) -> Check:
    """Adaptive and Complex regulation give the same closed loop on the testbed."""
    pair = make_testbed()
    x0 = testbed_start(np.random.default_rng(seed), pair)
    logs = []
    for mode in (Mode.ADAPTIVE, Mode.COMPLEX):
        env = regulation_environment(pair, x0)
        _, log = run_closed_loop(regulation_config(mode), env, pair)
        logs.append(np.array(log.states))
    n = min(len(logs[0]), len(logs[1]))
    gap = float(np.max(np.abs(logs[0][:n] - logs[1][:n])))
    same_len = len(logs[0]) == len(logs[1])
    return Check("adaptive-vs-complex", "identical closed loops", gap <= 1e-6 and same_len, gap, f"{n} states")


def basin_masks(N_values=range(2, 9), points: int = 21) -> dict:
    pair = make_testbed()
    grid = default_grid(pair, points)
    return {N: brute_force_feasible_set(pair, grid, N) for N in N_values}


def check_basin_nesting(points: int = 9, N_values=range(2, 9)) -> Check:
    """Feasible sets grow with the horizon; at least one inclusion is strict."""
    masks = basin_masks(N_values, points)
    Ns = sorted(masks)
    violations, strict = 0, 0
    for a, b in zip(Ns, Ns[1:]):
        fa, fb = masks[a].feasible, masks[b].feasible
        violations += int(np.sum(fa & ~fb))
        strict += int(np.sum(fb & ~fa))
    failed = sum(int(np.sum(m.solver_failed)) for m in masks.values())
    ok = violations == 0 and strict > 0 and failed == 0
    return Check("basin-nesting", "nested basins", ok, float(violations),
                 f"{points}^3 grid, N={Ns[0]}..{Ns[-1]}, {strict} strict witnesses, {failed} LP failures")


# -- legged -------------------------------------------------------------------

def _fd(f, z, h):
    cols = []
    for i in range(z.shape[1]):
        zp, zm = z.copy(), z.copy()
        zp[:, i] += h
        zm[:, i] -= h
        cols.append((f(zp) - f(zm)) / (2 * h))
    return np.stack(cols, -1)


def _rel(a, b) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)), initial=0.0))


def check_kernel_derivatives(samples: int = 5, seed: int = 5, h: float = 1e-6) -> Check:
    """Analytic kernel Jacobians against central differences at random points."""
    p = LeggedParams()
    rng = np.random.default_rng(seed)
    x = refgen.standing_state(p)[None] + 0.2 * rng.normal(size=(samples, 36))
    u = 20.0 * rng.normal(size=(samples, 24))
    e = 0.5 * rng.normal(size=(samples, 36))
    args = (p.m, p.inertia, p.g, p.dt)
    _, A, B = kernels.srb_step(x, u, *args, True)
    errs = [_rel(A, _fd(lambda z: kernels.srb_step(z, u, *args, False), x, h)),
            _rel(B, _fd(lambda z: kernels.srb_step(x, z, *args, False), u, h))]
    _, Jx, Ju, Je = kernels.slack_rows(x, u, e, p)
    errs += [_rel(Jx, _fd(lambda z: kernels.slack_rows(z, u, e, p, False), x, h)),
             _rel(Ju, _fd(lambda z: kernels.slack_rows(x, z, e, p, False), u, h)),
             _rel(Je, _fd(lambda z: kernels.slack_rows(x, u, z, p, False), e, h))]
    worst = _finite_max(errs)
    return Check("kernel-derivatives", "analytic Jacobians", worst <= 1e-5, worst,
                 f"backend {kernels.BACKEND}, {samples} points")


def _legged_window(env_name: str = "Step", start: int = 40, N: int = 24):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        env, pair = make_environment(env_name)
    return env, pair, env.reference.window(start, N)


def check_ocp_derivatives(seed: int = 6, h: float = 1e-6, env_name: str = "Step", start: int = 40) -> Check:
    """Full NLP Jacobian (every row family and transition case) against central differences."""
    env, pair, win = _legged_window(env_name, start, 6)
    rng = np.random.default_rng(seed)
    # all four transition cases: C->S, S->S, S->C, C->C
    S = SimplicitySet(6, (1, 2, 4))
    prob = assemble(pair, S, env.reference.x[start], win)
    z = prob.reference_guess().z
    z = z + 0.01 * rng.normal(size=z.shape)
    err = check_derivatives(prob, z, h)
    return Check("ocp-derivatives", "analytic Jacobians", err <= 1e-5, err, f"{prob.n} variables, {env_name} window")


def check_equivalence_legged(masks: int = 3, seed: int = 7, env_name: str = "Acceleration", start: int = 30) -> Check:
    """Lifted predictions equal complex rollouts on the legged pair."""
    env, pair, win = _legged_window(env_name, start)
    rng = np.random.default_rng(seed)
    body = np.r_[np.ones(6), np.zeros(12), np.ones(6), np.zeros(12)]
    errs, bad = [], 0
    for _ in range(masks):
        # body perturbed off the reference so the solve is not trivial; feet stay pinned
        x0 = env.reference.x[start] + 0.01 * rng.normal(size=36) * body
        S = random_mask(rng, win.horizon)
        prob = assemble(pair, S, x0, win)
        res = solve(prob, None, SqpSettings(max_iter=30))
        if not res.converged:
            bad += 1
            continue
        errs.append(rollout_error(pair, lift_solution(prob.trajectory(res.primal), win, pair), x0, win))
    worst = _finite_max(errs)
    return Check("equivalence-legged", "trajectory equivalence", worst <= 1e-6 and bad == 0, worst,
                 f"{masks} masks, {bad} unsolved")


@dataclass
class Disagreement:
    run: int
    step: int
    index: int
    generic: bool
    specialized: bool


def compare_admissibility(pair: LeggedPair, lifted, window, eps: float, feas_tol: float) -> list:
    """Indices 1..N-1 where the generic and the specialized tests disagree."""
    N = window.horizon
    idx = list(range(1, N))
    rep = evaluate_indices(idx, lifted, pair, window, eps, feas_tol)
    X, U = lifted_arrays(lifted)
    spec = legged_admissibility(pair, X[idx], U[idx], window.at(np.array(idx)), eps, feas_tol)
    return [(i, rep.get(i).passed, bool(s)) for i, s in zip(idx, spec) if rep.get(i).passed != bool(s)]


def legged_run_plans(runs: int):
    envs, modes = ("Acceleration", "Step", "Gap"), (Mode.ADAPTIVE, Mode.MIXED, Mode.COMPLEX, Mode.SIMPLE)
    rng = np.random.default_rng(8)
    return [(envs[j % 3], modes[j % 4], float(rng.uniform(-0.2, 0.2))) for j in range(runs)]


def check_specialized_admissibility(runs: int = 2, steps: int = 25) -> Check:
    """Specialized legged admissibility agrees with the generic checker on logged runs."""
    total, disagree = 0, []
    for r, (env_name, mode, y0) in enumerate(legged_run_plans(runs)):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            env, pair = make_environment(env_name, y0=y0)
        cfg = ControllerConfig(mode=mode, solve_budget=1e6)

        def on_step(k, x, st, env=env, pair=pair, r=r):
            nonlocal total
            win = env.reference.window(k, cfg.horizon)
            total += cfg.horizon - 1
            for i, g, s in compare_admissibility(pair, st.lifted, win, cfg.eps_adm, cfg.feas_tol):
                disagree.append(Disagreement(r, k, i, g, s))

        run_closed_loop(cfg, env, pair, max_steps=steps, on_step=on_step)
    detail = f"{runs} runs, {total} indices"
    if disagree:
        d = disagree[0]
        detail += f", first at run {d.run} step {d.step} index {d.index}"
    return Check("specialized-admissibility", "specialized admissibility equivalence", not disagree,
                 float(len(disagree)), detail)


# -- suites -------------------------------------------------------------------

def run_suite(name: str) -> list:
    if name == "core":
        return [check_roundtrip(), check_equilibrium(), check_collapse(instances=5)]
    if name == "testbed":
        checks = [check_equivalence_testbed(masks=20)]
        checks += check_regulation(runs=3)
        checks += [check_adaptive_matches_complex(), check_basin_nesting(points=9)]
        return checks
    if name == "legged":
        return [check_kernel_derivatives(), check_ocp_derivatives(), check_equivalence_legged(masks=2),
                check_specialized_admissibility(runs=2, steps=15)]
    raise ValueError(f"unknown suite {name!r}; expected one of {list(SUITES)}")
