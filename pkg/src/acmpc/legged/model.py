"""Quadruped model pair: full state with feet and joints vs. rigid body only.

Complex stages carry the 36-dimensional state (body, feet, their rates), 24
controls (ground reaction forces and foot accelerations) and 36 joint slack
variables tied to the body through equality rows. Simple stages keep the
body state and the reaction forces; moment arms use the reference feet.

Context ``aux`` keys: ``contact`` (K, 4) stance flags. Stance feet are pinned
to the reference foothold. ``shared["terrain"]`` is a :class:`Terrain`.
"""

from __future__ import annotations

import numpy as np

from ..core import Bounds, ConstraintBlock, ContractError, Dims, ModelPair, NumericError, StageContext
from . import kernels
from .kinematics import leg_fk, leg_ik, rotation
from .params import OMEGA, Q_ANG, Q_FOOT, Q_LIN, U_BODY, U_FOOT, V_FOOT, V_LIN, X_KEEP, U_KEEP, LeggedParams
from .terrain import Terrain

_INF = np.inf


def default_weights(p: LeggedParams) -> tuple:
    """Diagonal tracking weights (Q, R)."""
    q = np.concatenate([
        [200.0, 200.0, 500.0],
        [100.0, 100.0, 50.0],
        np.full(12, 500.0),
        [5.0, 5.0, 5.0],
        [1.0, 1.0, 1.0],
        np.full(12, 1.0),
    ])
    r = np.concatenate([np.full(12, 1e-3), np.full(12, 1e-4)])
    return np.diag(q), np.diag(r)


def _contact(ctx: StageContext) -> np.ndarray:
    if "contact" not in ctx.aux:
        raise ContractError("legged context needs aux['contact']")
    return np.asarray(ctx.aux["contact"], dtype=bool).reshape(len(ctx), 4)


def friction_rows(ub: np.ndarray, mu: float):
    """Four pyramid faces per leg, each ``<= 0``; returns (c (K,16), dc/du_body (16,12))."""
    G = np.zeros((16, 12))
    for j in range(4):
        for k, (ax, sgn) in enumerate(((0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0))):
            G[4 * j + k, 3 * j + ax] = sgn
            G[4 * j + k, 3 * j + 2] = -mu
    return np.asarray(ub) @ G.T, G


def motor_rows(e: np.ndarray, p: LeggedParams):
    """Linear motor line ``-tau_max <= tau + (tau_max/dtheta_max) dtheta <= tau_max``."""
    k = p.tau_max / p.dtheta_max
    return e[:, 24:36] + k * e[:, 12:24], k


class LeggedPair(ModelPair):
    """Quadruped pair with point feet, massless legs and joint slacks."""

    name = "legged"

    def __init__(self, params: LeggedParams | None = None, terrain: Terrain | None = None,
                 weights: tuple | None = None, kinematic: bool = True):
        p = params or LeggedParams()
        self.params = p
        self.terrain = terrain or Terrain.flat()
        self.kinematic = kinematic
        Q, R = weights if weights is not None else default_weights(p)
        super().__init__(Dims(36, 24, 12, 12, 36 if kinematic else 0), X_KEEP, U_KEEP, Q, R, Q, p.dt)

    def dynamics_pattern(self):
        if not hasattr(self, "_dyn_pattern"):
            self._dyn_pattern = _probe_dynamics(self.params)
        return self._dyn_pattern

    def row_pattern(self, simple):
        if simple:
            _, G = friction_rows(np.zeros((1, 12)), self.params.mu)
            return {"x": np.zeros((16, 12), bool), "u": G != 0}
        if not hasattr(self, "_row_pattern"):
            self._row_pattern = _probe_rows(self)
        return self._row_pattern

    def _terrain(self, ctx: StageContext) -> Terrain:
        return ctx.shared.get("terrain", self.terrain)

    # -- dynamics ----------------------------------------------------------
    def _guard(self, x):
        pitch = np.asarray(x)[..., 4]
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite legged state")
        if np.any(np.abs(pitch) >= np.pi / 2 - 1e-3):
            raise NumericError(f"pitch {float(np.max(np.abs(pitch))):.3f} rad at the Euler-rate singularity")

    def complex_dynamics(self, x, u, ctx, jac=True):
        x = np.atleast_2d(x)
        self._guard(x)
        p = self.params
        out = kernels.srb_step(x, np.atleast_2d(u), p.m, p.inertia, p.g, p.dt, jac)
        return out if jac else (out, None, None)

    def simple_dynamics(self, xs, us, ctx, jac=True):
        xs, us = np.atleast_2d(xs), np.atleast_2d(us)
        x = self.psi_dag_x(xs, ctx.x_ref)
        u = self.psi_dag_u(us, ctx.u_ref)
        f, A, B = self.complex_dynamics(x, u, ctx, jac)
        fs = f[:, self.x_keep]
        if not jac:
            return fs, None, None
        kx, ku = self.x_keep, self.u_keep
        return fs, A[:, kx][:, :, kx], B[:, kx][:, :, ku]

    # -- bounds ------------------------------------------------------------
    def _u_bounds(self, contact):
        p = self.params
        K = len(contact)
        lo = np.zeros((K, 4, 3))
        hi = np.zeros((K, 4, 3))
        st = contact[:, :, None]
        lo[:] = np.where(st, np.array([-p.fxy_max, -p.fxy_max, 0.0]), 0.0)
        hi[:] = np.where(st, np.array([p.fxy_max, p.fxy_max, p.fz_max]), 0.0)
        return lo.reshape(K, 12), hi.reshape(K, 12)

    def _x_bounds(self, ctx, pins=True):
        p = self.params
        K = len(ctx)
        lo = np.full((K, 36), -_INF)
        hi = np.full((K, 36), _INF)
        lo[:, 4], hi[:, 4] = -p.pitch_guard, p.pitch_guard
        if pins:
            contact = _contact(ctx)
            for j in range(4):
                st = contact[:, j]
                for sl in (slice(6 + 3 * j, 9 + 3 * j), slice(24 + 3 * j, 27 + 3 * j)):
                    lo[st, sl] = ctx.x_ref[st, sl]
                    hi[st, sl] = ctx.x_ref[st, sl]
        return lo, hi

    def complex_bounds(self, ctx):
        p = self.params
        K = len(ctx)
        xl, xh = self._x_bounds(ctx)
        ul, uh = self._u_bounds(_contact(ctx))
        ul = np.concatenate([ul, np.full((K, 12), -p.ufoot_max)], axis=1)
        uh = np.concatenate([uh, np.full((K, 12), p.ufoot_max)], axis=1)
        el = np.concatenate([np.tile(p.theta_min, (K, 4)), np.full((K, 12), -p.dtheta_max),
                             np.full((K, 12), -p.tau_max)], axis=1)
        eh = np.concatenate([np.tile(p.theta_max, (K, 4)), np.full((K, 12), p.dtheta_max),
                             np.full((K, 12), p.tau_max)], axis=1)
        if not self.kinematic:
            el, eh = np.zeros((K, 0)), np.zeros((K, 0))
        return Bounds(xl, xh), Bounds(ul, uh), Bounds(el, eh)

    def simple_bounds(self, ctx):
        xl, xh = self._x_bounds(ctx, pins=False)
        ul, uh = self._u_bounds(_contact(ctx))
        return Bounds(xl[:, self.x_keep], xh[:, self.x_keep]), Bounds(ul, uh)

    def terminal_bounds(self, ctx):
        xl, xh = self._x_bounds(ctx)
        return Bounds(xl, xh)

    # -- path rows ---------------------------------------------------------
    def complex_rows(self, x, u, e, ctx, jac=True):
        p = self.params
        x, u = np.atleast_2d(x), np.atleast_2d(u)
        K = x.shape[0]
        fr, G = friction_rows(u[:, U_BODY], p.mu)
        parts_c = [fr]
        lb = [np.full((K, 16), -_INF)]
        ub = [np.zeros((K, 16))]
        Jx_parts = [np.zeros((K, 16, 36))]
        Ju_f = np.zeros((K, 16, 24))
        Ju_f[:, :, :12] = G
        Ju_parts = [Ju_f]
        Je_parts = []
        names = ["friction"]
        if self.kinematic:
            e = np.atleast_2d(e)
            out = kernels.slack_rows(x, u, e, p, jac)
            c_s = out[0] if jac else out
            mot, k = motor_rows(e, p)
            parts_c = [c_s] + parts_c + [mot]
            lb = [np.zeros((K, 36))] + lb + [np.full((K, 12), -p.tau_max)]
            ub = [np.zeros((K, 36))] + ub + [np.full((K, 12), p.tau_max)]
            names = ["slack"] + names + ["motor"]
            if jac:
                _, Jxs, Jus, Jes = out
                Jm = np.zeros((K, 12, 36))
                Jm[:, :, 24:36] = np.eye(12)
                Jm[:, :, 12:24] = k * np.eye(12)
                Jx_parts = [Jxs] + Jx_parts + [np.zeros((K, 12, 36))]
                Ju_parts = [Jus] + Ju_parts + [np.zeros((K, 12, 24))]
                Je_parts = [Jes, np.zeros((K, 16, 36)), Jm]
        # terrain clearance for swing feet; stance feet are pinned to footholds
        ter = self._terrain(ctx)
        feet = x[:, Q_FOOT].reshape(K, 4, 3)
        h, dh = ter.height(feet[..., :2], grad=True)
        parts_c.append(feet[..., 2] - h)
        swing = ~_contact(ctx)
        lb.append(np.where(swing, 0.0, -_INF))
        ub.append(np.full((K, 4), _INF))
        names.append("terrain")
        if jac:
            Jt = np.zeros((K, 4, 36))
            for j in range(4):
                Jt[:, j, 6 + 3 * j] = -dh[:, j, 0]
                Jt[:, j, 7 + 3 * j] = -dh[:, j, 1]
                Jt[:, j, 8 + 3 * j] = 1.0
            Jx_parts.append(Jt)
            Ju_parts.append(np.zeros((K, 4, 24)))
            if self.kinematic:
                Je_parts.append(np.zeros((K, 4, 36)))
        c = np.concatenate(parts_c, axis=1)
        jd = {}
        if jac:
            jd = {"x": np.concatenate(Jx_parts, axis=1), "u": np.concatenate(Ju_parts, axis=1)}
            jd["e"] = np.concatenate(Je_parts, axis=1) if self.kinematic else np.zeros((K, c.shape[1], 0))
        return ConstraintBlock(c, np.concatenate(lb, axis=1), np.concatenate(ub, axis=1), jd, tuple(names))

    def simple_rows(self, xs, us, ctx, jac=True):
        us = np.atleast_2d(us)
        K = us.shape[0]
        fr, G = friction_rows(us, self.params.mu)
        jd = {}
        if jac:
            jd = {"x": np.zeros((K, 16, 12)), "u": np.broadcast_to(G, (K, 16, 12)).copy()}
        return ConstraintBlock(fr, np.full((K, 16), -_INF), np.zeros((K, 16)), jd, ("friction",))

    # -- slacks from kinematics --------------------------------------------
    def joint_state(self, x, u):
        """Joint angles, rates and torques implied by ``(x, u)`` plus the IK reach gap."""
        p = self.params
        x, u = np.atleast_2d(x), np.atleast_2d(u)
        K = x.shape[0]
        R = rotation(x[:, Q_ANG])
        feet = x[:, Q_FOOT].reshape(K, 4, 3)
        ell = np.einsum("kji,klj->kli", R, feet - x[:, None, Q_LIN])
        th, gap = leg_ik(ell, p)
        ell_p, J = leg_fk(th, p, order=1)
        w = x[:, OMEGA]
        rel = np.einsum("kji,klj->kli", R, x[:, V_FOOT].reshape(K, 4, 3) - x[:, None, V_LIN])
        rhs = rel - np.cross(w[:, None, :], ell_p)
        with np.errstate(all="ignore"):
            try:
                dth = np.linalg.solve(J, rhs[..., None])[..., 0]
            except np.linalg.LinAlgError:
                dth = np.stack([np.linalg.lstsq(J[k, j], rhs[k, j], rcond=None)[0]
                                for k in range(K) for j in range(4)]).reshape(K, 4, 3)
        fb_body = np.einsum("kji,klj->kli", R, u[:, U_BODY].reshape(K, 4, 3))
        tau = -np.einsum("klji,klj->kli", J, fb_body)
        e = np.concatenate([th.reshape(K, 12), dth.reshape(K, 12), tau.reshape(K, 12)], axis=1)
        return e, gap

    def extra_guess(self, x, u, ctx):
        """Joint slacks from inverse kinematics, clipped to their bounds (near a
        straight knee the rate solve is singular)."""
        if not self.kinematic:
            return np.zeros((len(np.atleast_2d(x)), 0))
        e, _ = self.joint_state(x, u)
        e = np.nan_to_num(e, nan=0.0, posinf=0.0, neginf=0.0)
        _, _, eb = self.complex_bounds(ctx)
        return np.clip(e, eb.lower, eb.upper)

    # -- violations --------------------------------------------------------
    def _common_violation(self, x_body_pitch, ub, contact):
        p = self.params
        out = {}
        out["pitch_guard"] = np.abs(x_body_pitch) - p.pitch_guard
        lo, hi = self._u_bounds(contact)
        out["grf_bounds"] = np.maximum(lo - ub, ub - hi)
        K = len(ub)
        swing = ~contact
        mag = np.linalg.norm(ub.reshape(K, 4, 3), axis=2)
        out["contact"] = np.where(swing, mag, -_INF)
        fr, _ = friction_rows(ub, p.mu)
        out["friction"] = fr
        return out

    def complex_violation(self, x, u, ctx):
        p = self.params
        x, u = np.atleast_2d(x), np.atleast_2d(u)
        K = x.shape[0]
        contact = _contact(ctx)
        out = self._common_violation(x[:, 4], u[:, U_BODY], contact)
        out["foot_accel"] = np.abs(u[:, U_FOOT]) - p.ufoot_max
        stance = np.repeat(contact, 3, axis=1)
        dq = np.abs(x[:, Q_FOOT] - ctx.x_ref[:, Q_FOOT])
        dv = np.abs(x[:, V_FOOT] - ctx.x_ref[:, V_FOOT])
        out["stance_pin"] = np.where(stance, np.maximum(dq, dv), -_INF)
        feet = x[:, Q_FOOT].reshape(K, 4, 3)
        h = self._terrain(ctx).height(feet[..., :2])
        out["terrain"] = np.where(contact, -_INF, h - feet[..., 2])
        if self.kinematic:
            e, gap = self.joint_state(x, u)
            e = np.where(np.isfinite(e), e, _INF)
            out["reach"] = np.where(gap > 0, gap, -1.0)
            th = e[:, :12]
            out["joint_angle"] = np.maximum(np.tile(p.theta_min, 4) - th, th - np.tile(p.theta_max, 4))
            out["joint_velocity"] = np.abs(e[:, 12:24]) - p.dtheta_max
            out["torque"] = np.abs(e[:, 24:36]) - p.tau_max
            mot, _ = motor_rows(e, p)
            out["motor"] = np.abs(mot) - p.tau_max
        return out

    def simple_violation(self, xs, us, ctx):
        xs, us = np.atleast_2d(xs), np.atleast_2d(us)
        return self._common_violation(xs[:, 4], us, _contact(ctx))

    # -- diagnostics -------------------------------------------------------
    def body_clearance(self, x, terrain: Terrain | None = None, half_height: float = 0.05) -> np.ndarray:
        """Lowest height of the body box corners above the raw terrain."""
        p = self.params
        ter = terrain or self.terrain
        x = np.atleast_2d(x)
        corners = np.array([[sx * p.hip_x, sy * p.hip_y, -half_height]
                            for sx in (1, -1) for sy in (1, -1)])
        R = rotation(x[:, Q_ANG])
        pts = x[:, None, Q_LIN] + np.einsum("kij,cj->kci", R, corners)
        return np.min(pts[..., 2] - ter.raw_height(pts[..., 0]), axis=1)


def _random_points(p: LeggedParams, k: int = 3, seed: int = 7):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-0.5, 0.5, (k, 36))
    u = rng.uniform(-50.0, 50.0, (k, 24))
    e = rng.uniform(-1.0, 1.0, (k, 36))
    return x, u, e


def _probe_dynamics(p: LeggedParams):
    x, u, _ = _random_points(p)
    _, A, B = kernels.srb_step(x, u, p.m, p.inertia, p.g, p.dt, True)
    return np.any(A != 0, axis=0), np.any(B != 0, axis=0)


def _probe_rows(pair: "LeggedPair"):
    """Union of nonzeros at random points; terrain rows get their full foot pattern."""
    x, u, e = _random_points(pair.params)
    ctx = StageContext(x, u, np.arange(len(x)), {"contact": np.zeros((len(x), 4), bool)}, {})
    blk = pair.complex_rows(x, u, e, ctx, jac=True)
    pat = {k: np.any(v != 0, axis=0) for k, v in blk.jac.items()}
    m = blk.m
    for j in range(4):
        pat["x"][m - 4 + j, 6 + 3 * j:9 + 3 * j] = True
    return pat


def legged_admissibility(pair: LeggedPair, x, u, ctx: StageContext, eps: float, feas_tol: float = 1e-6):
    """Specialized per-stage check: feet, foot rates and foot controls on the
    reference within ``eps`` and the stage inside the complex constraint set.

    Foot controls are compared through their effect on the next foot rate,
    ``dt * |u_foot - u_ref|``, which puts all three tests in state units.
    """
    x, u = np.atleast_2d(x), np.atleast_2d(u)
    dt = pair.params.dt
    on_ref = (
        (np.abs(x[:, Q_FOOT] - ctx.x_ref[:, Q_FOOT]).max(axis=1) <= eps)
        & (np.abs(x[:, V_FOOT] - ctx.x_ref[:, V_FOOT]).max(axis=1) <= eps)
        & (dt * np.abs(u[:, U_FOOT] - ctx.u_ref[:, U_FOOT]).max(axis=1) <= eps)
    )
    viol = pair.complex_violation(x, u, ctx)
    worst = np.max(np.concatenate([np.asarray(v).reshape(len(x), -1) for v in viol.values()], axis=1), axis=1)
    return on_ref & (worst <= feas_tol)
