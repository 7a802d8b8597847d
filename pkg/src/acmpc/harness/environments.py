"""Task definitions: terrain, start, goal, reference and success rule."""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ..core import ModelPair, ReferenceTrajectory
from ..legged.model import LeggedPair
from ..legged.params import LeggedParams
from ..legged.terrain import Terrain
from ..testbed import TestbedPair, zero_reference
from . import reference as refgen

GAP_FLOOR = -1.0


class EnvKind(enum.Enum):
    ACCELERATION = "Acceleration"
    STEP = "Step"
    GAP = "Gap"
    REGULATION = "Regulation"

    @classmethod
    def parse(cls, text) -> "EnvKind":
        if isinstance(text, cls):
            return text
        for k in cls:
            if k.value.lower() == str(text).lower():
                return k
        raise ValueError(f"unknown environment {text!r}; expected one of {[k.value for k in cls]}")


@dataclass(frozen=True)
class EnvScale:
    """Geometry and speed of a legged task. Lengths in m, speeds in m/s."""

    distance: float = 3.0
    v_max: float = 1.0
    a_max: float = 2.0
    step_height: float = 0.2
    step_speed: float = 0.5
    gap_width: float = 0.4
    gap_speed: float = 1.0
    clearance: float = 0.07
    settle_time: float = 1.2
    lead_time: float = 0.3

    def __post_init__(self):
        for name in ("distance", "v_max", "a_max", "step_height", "step_speed", "gap_width", "gap_speed",
                     "clearance", "settle_time", "lead_time"):
            if not getattr(self, name) > 0:
                raise ValueError(f"scale field {name} must be positive")


@dataclass
class Environment:
    kind: EnvKind
    start: np.ndarray
    reference: ReferenceTrajectory
    max_steps: int
    terrain: Terrain | None = None
    goal: np.ndarray | None = None
    goal_tol: float = 0.2
    speed_tol: float = 0.05
    state_tol: float = 1e-4
    notes: list = field(default_factory=list)

    @property
    def contact(self):
        return self.reference.aux.get("contact")

    def check_reference(self, pair: ModelPair, eps_ref: float) -> float:
        err = self.reference.consistency_error(pair)
        if not err <= eps_ref:
            raise ValueError(f"reference is not dynamically consistent: {err:.3e} > {eps_ref:.1e}")
        return err

    def finished(self, x) -> bool:
        if self.kind is EnvKind.REGULATION:
            return bool(np.max(np.abs(x)) < self.state_tol)
        pos = np.linalg.norm(x[0:2] - self.goal)
        return bool(pos <= self.goal_tol and np.linalg.norm(x[18:21]) <= self.speed_tol)

    def failure(self, pair: ModelPair, x) -> str | None:
        if not np.all(np.isfinite(x)):
            return "NonFinite"
        if self.kind is EnvKind.REGULATION:
            return None
        if pair.body_clearance(x, self.terrain)[0] < 0.0:
            return "BodyContact"
        return None

    def speed(self, x) -> float:
        if self.kind is EnvKind.REGULATION:
            return float(np.linalg.norm(x))
        return float(np.linalg.norm(x[18:21]))

    def control_norm(self, u) -> float:
        if self.kind is EnvKind.REGULATION:
            return float(np.linalg.norm(u))
        return float(np.linalg.norm(u[:12].reshape(4, 3).sum(axis=0)))


def _profile_xy(start_xy, goal_xy, s, n_total, lead):
    """Body xy following the scalar progress ``s`` along the start-goal line."""
    d = goal_xy - start_xy
    L = np.linalg.norm(d)
    xy = np.repeat(np.asarray(goal_xy, dtype=float)[None], n_total + 1, axis=0)
    xy[:lead] = start_xy
    k = min(len(s), n_total + 1 - lead)
    xy[lead:lead + k] = start_xy + (s[:k, None] / L) * d[None]
    return xy


def legged_environment(kind, scale: EnvScale | None = None, params: LeggedParams | None = None,
                       y0: float = 0.0) -> tuple:
    """Build a legged task and return ``(environment, pair)``.

    Acceleration: flat ground, goal ``distance`` ahead. Step: one rise of
    ``step_height`` at mid-course. Gap: ``gap_width`` without support at
    mid-course, crossed with a front-then-rear leap and a short flight.
    """
    kind = EnvKind.parse(kind)
    sc = scale or EnvScale()
    p = params or LeggedParams()
    dt = p.dt
    mid = 0.5 * sc.distance
    if kind is EnvKind.ACCELERATION:
        terrain = Terrain.flat()
    elif kind is EnvKind.STEP:
        terrain = Terrain((mid,), (0.0, sc.step_height))
    elif kind is EnvKind.GAP:
        terrain = Terrain((mid - sc.gap_width / 2, mid + sc.gap_width / 2), (0.0, GAP_FLOOR, 0.0))
    else:
        raise ValueError("legged_environment handles Acceleration, Step and Gap")
    start_xy = np.array([0.0, y0])
    goal_xy = np.array([sc.distance, 0.0])
    x0 = refgen.standing_state(p, start_xy, terrain=terrain)
    lead = int(round(sc.lead_time / dt))
    settle = int(round(sc.settle_time / dt))
    L = float(np.linalg.norm(goal_xy - start_xy))
    notes = []
    if kind is EnvKind.GAP:
        s = refgen.trapezoid(L, sc.gap_speed, sc.a_max, dt)
        n_total = lead + len(s) + settle
        xy = _profile_xy(start_xy, goal_xy, s, n_total, lead)
        # leap so that mid-flight sits over the gap centre
        k_mid = int(np.argmin(np.abs(xy[:, 0] - mid)))
        leap = k_mid - 6 - 4
        if leap - 4 <= lead:
            raise ValueError("gap too close to the start for the leap schedule")
        stop = lead + len(s) + 6
        resume = leap + 6 + 8 + 6 + 2
        gait = refgen.leap_schedule(n_total + 1, lead, leap, resume, stop)
    else:
        v = sc.step_speed if kind is EnvKind.STEP else sc.v_max
        s = refgen.trapezoid(L, v, sc.a_max, dt)
        n_total = lead + len(s) + settle
        xy = _profile_xy(start_xy, goal_xy, s, n_total, lead)
        gait = refgen.GaitPlan(refgen.trot_schedule(n_total + 1, lead, lead + len(s) + 6))
    plan = refgen.BodyPlan(xy, gait)
    ref = refgen.build_reference(plan, p, terrain, x0, clearance=sc.clearance)
    if ref.shared.get("solve_status") != "Converged":
        notes.append("body reference solve: " + str(ref.shared.get("solve_status")))
    pair = LeggedPair(p, terrain)
    ctx = ref.context(0, ref.length)
    viol = pair.complex_violation(ref.x[:-1], ref.u, ctx)
    worst = max((float(np.max(v)) for v in viol.values() if np.size(v)), default=0.0)
    if worst > 1e-6:
        notes.append(f"reference leaves the complex constraint set (max violation {worst:.3g})")
    if kind is EnvKind.GAP and worst > 0.5:
        warnings.warn("gap reference is far outside the actuation limits; the leap may be unreachable")
    env = Environment(kind, x0, ref, n_total + 40, terrain, goal_xy, notes=notes)
    env.check_reference(pair, 1e-6)
    return env, pair


def regulation_environment(pair: TestbedPair, x0, steps: int = 200, tol: float = 1e-4) -> Environment:
    """Drive the testbed from ``x0`` to the origin."""
    ref = zero_reference(pair, steps + 64)
    return Environment(EnvKind.REGULATION, np.asarray(x0, dtype=float), ref, steps, state_tol=tol)


def make_environment(kind, scale: EnvScale | None = None, params: LeggedParams | None = None, y0: float = 0.0):
    """Legged environment by name; see ``legged_environment``."""
    return legged_environment(kind, scale, params, y0)


def with_start(env: Environment, x0) -> Environment:
    return replace(env, start=np.asarray(x0, dtype=float))
