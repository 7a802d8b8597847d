"""Closed-loop runs, per-step logs, trial aggregation and CSV export."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from ..core import ModelPair
from ..ocp import lifted_arrays
from ..simplicity import check_admissible
from .controller import Controller, ControllerConfig
from .environments import Environment

STEP_SCHEMA = "acmpc-steplog/1"
TABLE_SCHEMA = "acmpc-table/1"


@dataclass
class RunLog:
    """Realized trajectory plus per-step solver records."""

    states: list = field(default_factory=list)
    controls: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    predicted: list = field(default_factory=list)
    solutions: list = field(default_factory=list)

    def arrays(self):
        return np.array(self.states), np.array(self.controls)


@dataclass
class RunMetrics:
    mode: str
    solve_time: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    pct_simplified: list = field(default_factory=list)
    status: list = field(default_factory=list)
    slow: list = field(default_factory=list)
    fallback: list = field(default_factory=list)
    admissible: list = field(default_factory=list)
    resolves: list = field(default_factory=list)
    prediction_error: list = field(default_factory=list)
    realized_violation: list = field(default_factory=list)
    speed: list = field(default_factory=list)
    control_norm: list = field(default_factory=list)
    success: bool = False
    cause: str = ""
    completion_time: float = float("nan")
    steps: int = 0

    @property
    def mean_solve_time(self) -> float:
        return float(np.mean(self.solve_time)) if self.solve_time else float("nan")

    @property
    def slow_rate(self) -> float:
        return float(np.mean(self.slow)) if self.slow else float("nan")

    @property
    def max_velocity(self) -> float:
        return float(np.max(self.speed)) if self.speed else float("nan")

    @property
    def mean_control(self) -> float:
        return float(np.mean(self.control_norm)) if self.control_norm else float("nan")

    @property
    def mean_simplified(self) -> float:
        return float(np.mean(self.pct_simplified)) if self.pct_simplified else float("nan")

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "success": self.success,
            "cause": self.cause,
            "steps": self.steps,
            "completion_time": self.completion_time,
            "max_velocity": self.max_velocity,
            "mean_control": self.mean_control,
            "mean_solve_time": self.mean_solve_time,
            "slow_rate": self.slow_rate,
            "mean_simplified": self.mean_simplified,
            "fallbacks": int(np.sum(self.fallback)),
            "all_admissible": bool(all(self.admissible)),
            "max_prediction_error": float(np.max(self.prediction_error, initial=0.0)),
            "max_realized_violation": float(np.max(self.realized_violation, initial=0.0)),
        }


def _plant(pair: ModelPair, x, u, ctx):
    f, _, _ = pair.complex_dynamics(x[None], u[None], ctx, jac=False)
    return f[0]


def run_closed_loop(cfg: ControllerConfig, env: Environment, pair: ModelPair, max_steps: int | None = None,
                    keep_solutions: bool = False, disturbance=None, on_step=None) -> tuple:
    """Run the receding-horizon loop until the task finishes, fails, or runs out of steps.

    The plant is the discrete complex model. ``disturbance(k, x)`` may return an
    additive state perturbation (excluded from nominal runs). Returns
    ``(RunMetrics, RunLog)``.
    """
    ctrl = Controller(cfg, pair)
    met = RunMetrics(cfg.mode.value)
    log = RunLog()
    x = np.array(env.start, dtype=float)
    log.states.append(x.copy())
    N = cfg.horizon
    limit = env.max_steps if max_steps is None else max_steps
    for k in range(limit):
        window = env.reference.window(k, N)
        st = ctrl.step(x, window)
        met.solve_time.append(st.solve_time)
        met.iterations.append(st.iterations)
        met.pct_simplified.append(st.S.fraction())
        met.status.append(st.status.value)
        met.slow.append(st.solve_time > cfg.solve_budget * cfg.dt)
        met.fallback.append(st.fallback)
        met.resolves.append(st.resolves)
        log.masks.append(st.S.mask())
        if not st.ok:
            met.admissible.append(False)
            met.cause = st.status.value
            met.steps = k
            break
        rep = st.report if st.report is not None else check_admissible(st.S, st.lifted, pair, cfg.eps_adm, window, cfg.feas_tol)
        met.admissible.append(rep.overall)
        ctx0 = window.at(0)
        u = st.control
        viol = pair.complex_violation(x[None], u[None], ctx0)
        met.realized_violation.append(max((float(np.max(v)) for v in viol.values() if np.size(v)), default=0.0))
        x_next = _plant(pair, x, u, ctx0)
        met.prediction_error.append(float(np.max(np.abs(x_next - st.predicted))))
        if disturbance is not None:
            x_next = x_next + disturbance(k, x_next)
        met.speed.append(env.speed(x))
        met.control_norm.append(env.control_norm(u))
        log.controls.append(u.copy())
        log.predicted.append(st.predicted)
        if keep_solutions:
            X, U = lifted_arrays(st.lifted)
            log.solutions.append((k, st.S, X, U))
        if on_step is not None:
            on_step(k, x, st)
        x = x_next
        log.states.append(x.copy())
        met.steps = k + 1
        cause = env.failure(pair, x)
        if cause:
            met.cause = cause
            break
        if env.finished(x):
            met.success = True
            met.completion_time = (k + 1) * cfg.dt
            break
    else:
        met.cause = "GoalNotReached"
    return met, log


# -- trials ---------------------------------------------------------------

TABLE_COLUMNS = (
    "Config",
    "Success Rate",
    "% Horizon Simplified",
    "Completion Time (s)",
    "Max Velocity (m/s)",
    "Mean Solve Time (ms)",
    "Slow Solve Rate (%)",
    "Mean Control (N)",
)


@dataclass
class TrialTable:
    mode: str
    runs: list
    offsets: list

    @property
    def successes(self) -> int:
        return sum(m.success for m in self.runs)

    def row(self) -> dict:
        ok = [m for m in self.runs if m.success]

        def mean(f):
            return float(np.mean([f(m) for m in ok])) if ok else float("nan")

        return {
            "Config": self.mode,
            "Success Rate": f"{self.successes}/{len(self.runs)}",
            "% Horizon Simplified": 100.0 * float(np.mean([m.mean_simplified for m in self.runs])),
            "Completion Time (s)": mean(lambda m: m.completion_time),
            "Max Velocity (m/s)": mean(lambda m: m.max_velocity),
            "Mean Solve Time (ms)": 1e3 * mean(lambda m: m.mean_solve_time),
            "Slow Solve Rate (%)": 100.0 * mean(lambda m: m.slow_rate),
            "Mean Control (N)": mean(lambda m: m.mean_control),
        }


def trial_offsets(trials: int, seed: int, half_width: float = 0.2) -> list:
    """Transverse start offsets, uniform in ``[-half_width, half_width]``."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    return [float(v) for v in rng.uniform(-half_width, half_width, trials)]


def run_trials(cfg: ControllerConfig, make_env, trials: int, seed: int, keep_logs: bool = False) -> tuple:
    """Run ``trials`` seeded trials; ``make_env(y0)`` returns ``(env, pair)``.

    Returns ``(TrialTable, logs)`` with logs empty unless ``keep_logs``.
    """
    offsets = trial_offsets(trials, seed)
    runs, logs = [], []
    for y0 in offsets:
        env, pair = make_env(y0)
        met, log = run_closed_loop(cfg, env, pair)
        runs.append(met)
        if keep_logs:
            logs.append(log)
    return TrialTable(cfg.mode.value, runs, offsets), logs


# -- export ---------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def step_log_csv(met: RunMetrics, log: RunLog, dt: float, timing: bool = True) -> str:
    """Per-step CSV. ``timing=False`` leaves out wall-clock columns so the
    output depends only on the seed and configuration."""
    buf = io.StringIO()
    buf.write(f"# schema: {STEP_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    X, U = log.arrays()
    nx = X.shape[1] if X.size else 0
    nu = U.shape[1] if U.size else 0
    head = ["k", "t", "status", "iterations", "pct_simplified", "admissible", "mask"]
    if timing:
        head += ["solve_time", "slow", "fallback"]
    head += [f"x{j}" for j in range(nx)] + [f"u{j}" for j in range(nu)]
    w.writerow(head)
    for k in range(len(met.status)):
        mask = "".join("S" if b else "C" for b in log.masks[k])
        row = [k, _fmt(k * dt), met.status[k], met.iterations[k], _fmt(met.pct_simplified[k]),
               _fmt(met.admissible[k]), mask]
        if timing:
            row += [_fmt(met.solve_time[k]), _fmt(met.slow[k]), _fmt(met.fallback[k])]
        row += [_fmt(v) for v in X[k]] if k < len(X) else [""] * nx
        row += [_fmt(v) for v in U[k]] if k < len(U) else [""] * nu
        w.writerow(row)
    return buf.getvalue()


def table_csv(tables: list) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {TABLE_SCHEMA}\n")
    w = csv.DictWriter(buf, fieldnames=list(TABLE_COLUMNS), lineterminator="\n")
    w.writeheader()
    for t in tables:
        w.writerow({k: _fmt(v) for k, v in t.row().items()})
    return buf.getvalue()


def summary_json(met: RunMetrics) -> str:
    return json.dumps(met.summary(), indent=1, sort_keys=True, default=float)
