"""Receding-horizon controller in four configurations.

``Adaptive`` follows the adaptive-set loop: solve with ``S_a & S_f``, apply the
first lifted control, keep the indices whose lifted stage is still admissible,
test the fixed-mask indices for growth, and shift everything one step.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .. import sqp
from ..core import ModelPair, RefWindow
from ..ocp import OcpProblem, assemble, lift_solution, lifted_arrays, shift_warm_start
from ..simplicity import (
    DEFAULT_EPS_ADM,
    AdmissibilityReport,
    SimplicitySet,
    check_admissible,
    effective_set,
    evaluate_indices,
    shift,
)


class Mode(enum.Enum):
    SIMPLE = "Simple"
    COMPLEX = "Complex"
    MIXED = "Mixed"
    ADAPTIVE = "Adaptive"

    @classmethod
    def parse(cls, text) -> "Mode":
        if isinstance(text, cls):
            return text
        for m in cls:
            if m.value.lower() == str(text).lower():
                return m
        raise ValueError(f"unknown mode {text!r}; expected one of {[m.value for m in cls]}")


@dataclass(frozen=True)
class ControllerConfig:
    mode: Mode = Mode.ADAPTIVE
    horizon: int = 24
    dt: float = 0.03
    fixed_set: tuple | None = None
    eps_adm: float = DEFAULT_EPS_ADM
    feas_tol: float = 1e-6
    sqp: sqp.SqpSettings = field(default_factory=lambda: sqp.SqpSettings(max_iter=20))
    solve_budget: float = 1.0
    slow_policy: str = "flag"
    max_resolves: int = 3

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        if self.dt <= 0 or self.solve_budget <= 0 or self.eps_adm <= 0:
            raise ValueError("dt, solve_budget and eps_adm must be positive")
        if self.slow_policy not in ("flag", "fallback"):
            raise ValueError("slow_policy must be 'flag' or 'fallback'")

    @property
    def S_f(self) -> SimplicitySet:
        if self.fixed_set is None:
            return SimplicitySet.fixed_default(self.horizon)
        return SimplicitySet(self.horizon, tuple(self.fixed_set))

    @property
    def mixed_prefix(self) -> int:
        return math.ceil(self.horizon / 4)

    def base_set(self) -> SimplicitySet | None:
        """Static set for the fixed configurations, None for Adaptive."""
        N = self.horizon
        if self.mode is Mode.COMPLEX:
            return SimplicitySet.empty(N)
        if self.mode is Mode.SIMPLE:
            return SimplicitySet.span(N, 1, N - 1)
        if self.mode is Mode.MIXED:
            return SimplicitySet.span(N, self.mixed_prefix, N - 1)
        return None


@dataclass
class StepResult:
    control: np.ndarray
    S: SimplicitySet
    status: sqp.Status
    iterations: int
    solve_time: float
    resolves: int
    predicted: np.ndarray
    report: AdmissibilityReport | None
    problem: OcpProblem
    result: sqp.SolverResult
    lifted: list
    fallback: bool = False

    @property
    def ok(self) -> bool:
        return self.status is sqp.Status.CONVERGED


class Controller:
    """Stateful MPC loop for one run; ``step`` maps a measured state to a control."""

    def __init__(self, cfg: ControllerConfig, pair: ModelPair):
        self.cfg, self.pair = cfg, pair
        N = cfg.horizon
        self.S_a = SimplicitySet.empty(N)
        self.growth_domain = SimplicitySet(N, tuple(i + 1 for i in cfg.S_f if i + 1 <= N - 1))
        self._prev = None
        self._plan = None

    def current_set(self) -> SimplicitySet:
        base = self.cfg.base_set()
        return base if base is not None else effective_set(self.S_a, self.cfg.S_f)

    def _solve(self, S, x, window):
        prob = assemble(self.pair, S, x, window)
        guess = None
        if self._prev is not None:
            pp, pres = self._prev
            try:
                guess = shift_warm_start(pp, pres.primal, pres.duals, prob)
            except Exception:
                guess = None
        res = sqp.solve(prob, guess, self.cfg.sqp)
        return prob, res

    def step(self, x, window: RefWindow) -> StepResult:
        cfg = self.cfg
        S = self.current_set()
        t0 = time.perf_counter()
        iters, resolves = 0, 0
        report = None
        while True:
            prob, res = self._solve(S, x, window)
            iters += res.iterations
            lifted = lift_solution(prob.trajectory(res.primal), window, self.pair)
            if cfg.mode is not Mode.ADAPTIVE or not res.converged:
                break
            report = check_admissible(S, lifted, self.pair, cfg.eps_adm, window, cfg.feas_tol)
            if report.overall or resolves >= cfg.max_resolves:
                break
            S = S.without(report.failing()) if resolves < cfg.max_resolves - 1 else SimplicitySet.empty(cfg.horizon)
            resolves += 1
        solve_time = time.perf_counter() - t0
        X, U = lifted_arrays(lifted)
        out = StepResult(U[0].copy(), S, res.status, iters, solve_time, resolves, X[1].copy(),
                         report, prob, res, lifted)
        if res.converged and cfg.mode is Mode.ADAPTIVE:
            self._update_adaptive(S, lifted, window)
        slow = solve_time > cfg.solve_budget * cfg.dt
        if slow and cfg.slow_policy == "fallback" and self._plan is not None and len(self._plan) > 1:
            out.control = self._plan[1].copy()
            out.fallback = True
            self._plan = self._plan[1:]
        elif res.converged:
            self._plan = U.copy()
        if res.converged:
            self._prev = (prob, res)
        return out

    def _update_adaptive(self, S, lifted, window):
        """Keep admissible indices of ``S_a``, add admissible growth candidates, shift."""
        cand = set(self.S_a.indices) | set(self.growth_domain.indices)
        rep = evaluate_indices(sorted(cand), lifted, self.pair, window, self.cfg.eps_adm, self.cfg.feas_tol)
        self.S_a = shift(self.S_a, rep.passing())
