"""Reference generation for the quadruped: contact schedule, footholds,
swing curves, and a body trajectory from an offline rigid-body OCP.

The returned trajectory is produced by rolling the complex dynamics forward
from the start state, so it is dynamically consistent to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import ReferenceTrajectory
from ..legged.model import LeggedPair
from ..legged.params import LeggedParams
from ..legged.terrain import Terrain
from ..ocp import assemble
from ..simplicity import SimplicitySet
from .. import sqp

DIAG_A = (0, 3)  # FL, RR
DIAG_B = (1, 2)  # FR, RL
FRONT = (0, 1)
REAR = (2, 3)


@dataclass(frozen=True)
class GaitPlan:
    """Per-step stance flags plus named phase boundaries (step indices)."""

    contact: np.ndarray
    events: dict = field(default_factory=dict)


def trot_schedule(n_steps: int, start: int, stop: int, period: int = 12) -> np.ndarray:
    """All legs in stance outside ``[start, stop)``; diagonal pairs alternate inside."""
    c = np.ones((n_steps, 4), dtype=bool)
    half = period // 2
    for k in range(max(start, 0), min(stop, n_steps)):
        ph = (k - start) % period
        swing = DIAG_B if ph < half else DIAG_A
        c[k, list(swing)] = False
    return c


def leap_schedule(n_steps: int, trot_start: int, leap: int, trot_resume: int, stop: int,
                  period: int = 12, push: int = 6, flight: int = 8, land: int = 6, gather: int = 4) -> GaitPlan:
    """Trot, gather, front-pair lift-off, flight, front landing, rear landing, trot."""
    c = trot_schedule(n_steps, trot_start, leap - gather, period)
    c[leap - gather:leap] = True
    k = leap
    c[k:k + push] = True
    c[k:k + push, list(FRONT)] = False
    k += push
    c[k:k + flight] = False
    k += flight
    c[k:k + land] = True
    c[k:k + land, list(REAR)] = False
    k += land
    c[k:trot_resume] = True
    tail = trot_schedule(n_steps - trot_resume, 0, stop - trot_resume, period)
    c[trot_resume:] = tail
    events = {"gather": leap - gather, "push": leap, "flight": leap + push,
              "land": leap + push + flight, "rear_land": k}
    return GaitPlan(c, events)


def stance_intervals(contact_col: np.ndarray) -> list:
    """``[(first, last), ...]`` inclusive step ranges where the leg is in stance."""
    out = []
    k, n = 0, len(contact_col)
    while k < n:
        if contact_col[k]:
            j = k
            while j + 1 < n and contact_col[j + 1]:
                j += 1
            out.append((k, j))
            k = j + 1
        else:
            k += 1
    return out


def adjust_foothold(x: float, terrain: Terrain, margin: float, floor: float = -0.5) -> float:
    """Move ``x`` to the nearest point on walkable ground at least ``margin`` from every edge."""
    def ok(v):
        return bool(terrain.supported(v, floor)) and float(terrain.edge_distance(v)) >= margin

    if ok(x):
        return float(x)
    for d in np.arange(0.005, 2.0, 0.005):
        for cand in (x - d, x + d):
            if ok(cand):
                return float(cand)
    raise ValueError("no admissible foothold near x = %.3f" % x)


def swing_curve(p0: np.ndarray, p1: np.ndarray, n: int, clearance: float, terrain: Terrain,
                margin: float = 0.02, track: np.ndarray | None = None) -> np.ndarray:
    """``n`` samples from p0 to p1: straight line in the plane, a smooth apex in height.

    The apex sits ``clearance`` above the higher endpoint. If the swing would
    graze the terrain, horizontal motion is delayed so the foot rises first.
    With ``track`` (n, 2), typically the hip path, the planar motion is
    interpolated relative to it, so long swings stay under the body.
    """
    tau = np.linspace(0.0, 1.0, n)
    if track is not None:
        track = np.asarray(track, dtype=float)
        if track.shape != (n, 2):
            raise ValueError("track must have shape (n, 2)")
    lo_z = max(p0[2], p1[2]) + clearance
    base = 0.5 * (p0[2] + p1[2])
    bump = 16.0 * (lo_z - base) * (tau * (1.0 - tau)) ** 2
    for delay in np.linspace(0.0, 0.35, 8):
        s = np.clip((tau - delay) / max(1.0 - 2.0 * delay, 1e-9), 0.0, 1.0)
        prog = s * s * (3.0 - 2.0 * s)
        pts = p0[None, :] + prog[:, None] * (p1 - p0)[None, :]
        if track is not None:
            rel0, rel1 = p0[:2] - track[0], p1[:2] - track[-1]
            pts[:, :2] = track + rel0[None, :] + prog[:, None] * (rel1 - rel0)[None, :]
        zlin = p0[2] + (p1[2] - p0[2]) * prog
        pts[:, 2] = zlin + bump
        h = terrain.height(pts[1:-1, :2])
        if len(h) == 0 or np.all(pts[1:-1, 2] - h >= margin * np.minimum(1.0, 4 * tau[1:-1] * (1 - tau[1:-1]) * 4)):
            return pts
    return pts


def trapezoid(distance: float, v_max: float, a_max: float, dt: float) -> np.ndarray:
    """Positions of a rest-to-rest trapezoidal velocity profile, sampled at ``dt``."""
    if distance <= 0:
        return np.zeros(1)
    t_acc = v_max / a_max
    d_acc = 0.5 * a_max * t_acc ** 2
    if 2 * d_acc > distance:
        t_acc = np.sqrt(distance / a_max)
        v_max = a_max * t_acc
        d_acc = 0.5 * distance
    t_cruise = (distance - 2 * d_acc) / v_max
    T = 2 * t_acc + t_cruise
    t = np.arange(0.0, T + dt, dt)
    s = np.where(
        t < t_acc,
        0.5 * a_max * t ** 2,
        np.where(
            t < t_acc + t_cruise,
            d_acc + v_max * (t - t_acc),
            distance - 0.5 * a_max * np.maximum(T - t, 0.0) ** 2,
        ),
    )
    s[-1] = distance
    return np.minimum(s, distance)


@dataclass(frozen=True)
class BodyPlan:
    """Kinematic body targets per step: xy position and the gait. Height and
    pitch follow the footholds (see ``support_profile``)."""

    xy: np.ndarray
    gait: GaitPlan


def body_height_profile(x: np.ndarray, terrain: Terrain, p: LeggedParams, window: float = 0.4) -> np.ndarray:
    """Nominal height over the terrain averaged across a body length."""
    offs = np.linspace(-window / 2, window / 2, 21)
    pts = np.stack([x[:, None] + offs[None, :], np.zeros((len(x), len(offs)))], -1)
    ground = terrain.height(pts).mean(axis=1)
    return ground + p.nominal_height


def support_profile(holds: list, n_steps: int, p: LeggedParams, smooth: int = 9) -> tuple:
    """Body height and pitch that keep front and rear legs at nominal length.

    Each leg's support height is its foothold height, blended linearly between
    footholds while it swings; the front/rear averages are smoothed with a
    moving window of ``smooth`` steps.
    """
    H = np.zeros((n_steps + 1, 4))
    for j in range(4):
        ivs = holds[j]
        for n, (a, b, pt) in enumerate(ivs):
            end = b if n + 1 < len(ivs) else n_steps
            H[a:end + 1, j] = pt[2]
            if n + 1 < len(ivs):
                a2, _, pt2 = ivs[n + 1]
                H[b:a2 + 1, j] = np.linspace(pt[2], pt2[2], a2 - b + 1)
    kern = np.ones(smooth) / smooth
    pad = smooth // 2

    def mav(v):
        return np.convolve(np.pad(v, pad, mode="edge"), kern, mode="valid")

    front = mav(H[:, list(FRONT)].mean(axis=1))
    rear = mav(H[:, list(REAR)].mean(axis=1))
    z = p.nominal_height + 0.5 * (front + rear)
    pitch = -np.arctan2(front - rear, 2 * p.hip_x)
    return z, pitch


def footholds(plan: BodyPlan, p: LeggedParams, terrain: Terrain, feet0: np.ndarray, margin: float = 0.03) -> list:
    """Per leg, per stance interval: (first, last, foothold). The first interval
    keeps the initial foot; later ones use the hip position at mid-stance."""
    off = p.hips[:, :2] + np.column_stack([np.zeros(4), p.sides * p.l_abd])
    out = []
    for j in range(4):
        legs = []
        for n, (a, b) in enumerate(stance_intervals(plan.gait.contact[:, j])):
            if n == 0 and a == 0:
                legs.append((a, b, feet0[j].copy()))
                continue
            mid = (a + b) // 2 if b < len(plan.xy) - 1 else a
            xy = plan.xy[mid] + off[j]
            fx = adjust_foothold(xy[0], terrain, margin)
            pt = np.array([fx, xy[1], 0.0])
            pt[2] = float(terrain.height(pt[None, :2])[0])
            legs.append((a, b, pt))
        out.append(legs)
    return out


def foot_samples(plan: BodyPlan, holds: list, n_steps: int, terrain: Terrain, clearance: float = 0.07,
                 params: LeggedParams | None = None, swing_steps: int = 7) -> np.ndarray:
    """Desired foot positions (n_steps+1, 4, 3) from stance footholds and swing curves.

    Swings longer than ``swing_steps`` samples (a trot swing with its lift-off
    sample) lift proportionally higher and, given
    ``params``, move relative to the planned hip, which keeps the feet under
    the body through a flight phase.
    """
    P = np.zeros((n_steps + 1, 4, 3))
    for j in range(4):
        hip = None
        if params is not None:
            xy = plan.xy[np.minimum(np.arange(n_steps + 1), len(plan.xy) - 1)]
            hip = xy + params.hips[j, :2][None, :]
        ivs = holds[j]
        for n, (a, b, pt) in enumerate(ivs):
            end = b if n + 1 < len(ivs) else n_steps
            P[a:end + 1, j] = pt
            if n + 1 < len(ivs):
                a2, _, pt2 = ivs[n + 1]
                # lift-off after step b; the foot is still at pt at b+1 (zero velocity at b)
                m = a2 - b
                trk = hip[b + 1:a2 + 1] if hip is not None and m > swing_steps else None
                clr = clearance * max(1.0, m / swing_steps)
                P[b + 1:a2 + 1, j] = swing_curve(pt, pt2, m, clr, terrain, track=trk)
        if ivs and ivs[0][0] > 0:
            raise ValueError("legs must start in stance")
    return P


def consistent_feet(P: np.ndarray, dt: float) -> tuple:
    """Foot velocities and accelerations whose Euler integration reproduces ``P``."""
    V = np.zeros_like(P)
    V[:-1] = (P[1:] - P[:-1]) / dt
    V[-1] = 0.0
    # stance steps must carry zero velocity: enforced where the position does not move
    A = np.zeros((len(P) - 1,) + P.shape[1:])
    A[:] = (V[1:] - V[:-1]) / dt
    return V, A


def standing_state(p: LeggedParams, xy=(0.0, 0.0), yaw: float = 0.0, terrain: Terrain | None = None) -> np.ndarray:
    """Body at nominal height with every foot under its hip on the terrain."""
    ter = terrain or Terrain.flat()
    x = np.zeros(36)
    x[0:2] = xy
    feet = np.zeros((4, 3))
    feet[:, :2] = np.asarray(xy)[None, :] + p.hips[:, :2] + np.column_stack([np.zeros(4), p.sides * p.l_abd])
    feet[:, 2] = ter.height(feet[:, :2])
    x[2] = float(body_height_profile(np.array([xy[0]]), ter, p)[0])
    x[5] = yaw
    x[6:18] = feet.ravel()
    return x


def rollout(pair: LeggedPair, x0: np.ndarray, U: np.ndarray, contact: np.ndarray) -> np.ndarray:
    """States from stepping the complex model under ``U``."""
    X = np.zeros((len(U) + 1, 36))
    X[0] = x0
    from ..core import StageContext

    for k in range(len(U)):
        ctx = StageContext(X[k][None], U[k][None], np.array([k]), {"contact": contact[k][None]}, {})
        X[k + 1] = pair.complex_dynamics(X[k][None], U[k][None], ctx, jac=False)[0][0]
    return X


def build_reference(plan: BodyPlan, p: LeggedParams, terrain: Terrain, x_start: np.ndarray,
                    clearance: float = 0.07, settings: sqp.SqpSettings | None = None,
                    margin: float = 0.03) -> ReferenceTrajectory:
    """Dynamically consistent reference from a kinematic body plan.

    Feet follow footholds and swing curves exactly. The body inputs come from
    an all-simple OCP over the whole plan (no kinematic limits), then the
    complex model is rolled out so the result is consistent by construction.
    """
    contact = plan.gait.contact
    T = len(contact) - 1
    dt = p.dt
    feet0 = x_start[6:18].reshape(4, 3)
    holds = footholds(plan, p, terrain, feet0, margin)
    P = foot_samples(plan, holds, T, terrain, clearance, params=p)
    V, Af = consistent_feet(P, dt)
    # initial reference: kinematic body, feet as planned
    X = np.zeros((T + 1, 36))
    X[:, 0:2] = plan.xy
    X[:, 2], X[:, 4] = support_profile(holds, T, p)
    X[:, 18:20] = np.gradient(plan.xy, dt, axis=0)
    X[:, 6:18] = P.reshape(T + 1, 12)
    X[:, 24:36] = V.reshape(T + 1, 12)
    U = np.zeros((T, 24))
    n_st = np.maximum(contact[:T].sum(axis=1), 1)
    for j in range(4):
        U[:, 3 * j + 2] = np.where(contact[:T, j], p.m * p.g / n_st, 0.0)
    U[:, 12:24] = Af.reshape(T, 12)
    X[0] = x_start
    X[0, 24:36] = V[0].ravel()
    body_pair = LeggedPair(p, terrain, kinematic=False)
    ref0 = ReferenceTrajectory(X, U, {"contact": contact}, {"terrain": terrain})
    S = SimplicitySet.span(T, 1, T - 1)
    prob = assemble(body_pair, S, X[0], ref0.window(0, T))
    res = sqp.solve(prob, settings=settings or sqp.SqpSettings(max_iter=30, kkt_tol=1e-6))
    traj = prob.trajectory(res.primal)
    Ub = np.array([z.control[:12] for z in traj.stages])
    U_final = U.copy()
    U_final[:, :12] = Ub
    Xr = rollout(body_pair, X[0], U_final, contact)
    aux = {"contact": contact, "footholds": P}
    return ReferenceTrajectory(Xr, U_final, aux, {"terrain": terrain, "events": plan.gait.events,
                                                  "solve_status": res.status.value})
