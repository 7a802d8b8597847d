"""Pure numpy implementation of the legged hot kernels.

Both functions share their signature with the compiled module so either can
be selected at import time.
"""

from __future__ import annotations

import numpy as np

from .kinematics import euler_rate_matrix, leg_fk, rotation, skew


def srb_step(x, u, m, inertia, g, dt, jac=True):
    """Forward-Euler step of the single-rigid-body model with point feet.

    x is (K, 36), u is (K, 24), inertia a length-3 diagonal. Returns the
    successor (K, 36) and, with jac, A (K, 36, 36) and B (K, 36, 24).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    K = x.shape[0]
    Id = np.asarray(inertia, dtype=float)
    ang = x[:, 3:6]
    feet = x[:, 6:18].reshape(K, 4, 3)
    v = x[:, 18:21]
    w = x[:, 21:24]
    fb = u[:, :12].reshape(K, 4, 3)
    r = feet - x[:, None, 0:3]
    tau_w = np.cross(r, fb).sum(axis=1)
    if jac:
        R, dR = rotation(ang, jac=True)
        E, dE = euler_rate_matrix(ang, jac=True)
    else:
        R = rotation(ang)
        E = euler_rate_matrix(ang)
    tau_b = np.einsum("kji,kj->ki", R, tau_w)
    Iw = Id * w
    wdot = (tau_b - np.cross(w, Iw)) / Id
    xdot = np.empty_like(x)
    xdot[:, 0:3] = v
    xdot[:, 3:6] = np.einsum("kij,kj->ki", E, w)
    xdot[:, 6:18] = x[:, 24:36]
    xdot[:, 18:21] = fb.sum(axis=1) / m
    xdot[:, 20] -= g
    xdot[:, 21:24] = wdot
    xdot[:, 24:36] = u[:, 12:24]
    xn = x + dt * xdot
    if not jac:
        return xn
    Fx = np.zeros((K, 36, 36))
    Fu = np.zeros((K, 36, 24))
    eye3 = np.eye(3)
    Fx[:, 0:3, 18:21] = eye3
    Fx[:, 3:6, 3:6] = np.einsum("kcij,kj->kic", dE, w)
    Fx[:, 3:6, 21:24] = E
    Fx[:, 6:18, 24:36] = np.eye(12)
    Iinv = (1.0 / Id)[None, :, None]
    RT = np.swapaxes(R, 1, 2)
    # d tau_b / d ang_c = dR_c^T tau_w
    Fx[:, 21:24, 3:6] = Iinv * np.einsum("kcji,kj->kic", dR, tau_w)
    ftot = fb.sum(axis=1)
    Fx[:, 21:24, 0:3] = Iinv * (RT @ skew(ftot))
    for j in range(4):
        Fx[:, 21:24, 6 + 3 * j:9 + 3 * j] = -Iinv * (RT @ skew(fb[:, j]))
        Fu[:, 21:24, 3 * j:3 * j + 3] = Iinv * (RT @ skew(r[:, j]))
        Fu[:, 18:21, 3 * j:3 * j + 3] = eye3 / m
    Fx[:, 21:24, 21:24] = -Iinv * (skew(w) * Id[None, None, :] - skew(Iw))
    Fu[:, 24:36, 12:24] = np.eye(12)
    A = dt * Fx
    A += np.eye(36)
    B = dt * Fu
    return xn, A, B


def slack_rows(x, u, e, p, jac=True):
    """Joint-slack equality residuals, zero when (theta, dtheta, tau) match the body.

    Rows 0:12 are foot positions, 12:24 foot velocities, 24:36 torques, each
    leg-major. e stacks theta, dtheta and tau (each (K, 12), leg-major).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    e = np.atleast_2d(np.asarray(e, dtype=float))
    K = x.shape[0]
    th = e[:, 0:12].reshape(K, 4, 3)
    dth = e[:, 12:24].reshape(K, 4, 3)
    tau = e[:, 24:36].reshape(K, 4, 3)
    R, dR = rotation(x[:, 3:6], jac=True)
    RT = np.swapaxes(R, 1, 2)
    w = x[:, 21:24]
    feet = x[:, 6:18].reshape(K, 4, 3)
    dfeet = x[:, 24:36].reshape(K, 4, 3)
    fb = u[:, :12].reshape(K, 4, 3)
    ell, Jl, Hl = leg_fk(th, p, order=2)
    wl = np.cross(w[:, None, :], ell)
    a = wl + np.einsum("klij,klj->kli", Jl, dth)
    fk = x[:, None, 0:3] + np.einsum("kij,klj->kli", R, ell) - feet
    vel = x[:, None, 18:21] + np.einsum("kij,klj->kli", R, a) - dfeet
    wb = np.einsum("kji,klj->kli", R, fb)
    trq = tau + np.einsum("klji,klj->kli", Jl, wb)
    c = np.concatenate([fk.reshape(K, 12), vel.reshape(K, 12), trq.reshape(K, 12)], axis=1)
    if not jac:
        return c
    Jx = np.zeros((K, 36, 36))
    Ju = np.zeros((K, 36, 24))
    Je = np.zeros((K, 36, 36))
    eye3 = np.eye(3)
    Sw = skew(w)
    for j in range(4):
        rf = slice(3 * j, 3 * j + 3)
        rv = slice(12 + 3 * j, 15 + 3 * j)
        rt = slice(24 + 3 * j, 27 + 3 * j)
        lj, Jj, Hj = ell[:, j], Jl[:, j], Hl[:, j]
        RJ = R @ Jj
        # foot position rows
        Jx[:, rf, 0:3] = eye3
        Jx[:, rf, 3:6] = np.einsum("kcab,kb->kac", dR, lj)
        Jx[:, rf, 6 + 3 * j:9 + 3 * j] = -eye3
        Je[:, rf, 3 * j:3 * j + 3] = RJ
        # foot velocity rows
        Jx[:, rv, 18:21] = eye3
        Jx[:, rv, 3:6] = np.einsum("kcab,kb->kac", dR, a[:, j])
        Jx[:, rv, 21:24] = -R @ skew(lj)
        Jx[:, rv, 24 + 3 * j:27 + 3 * j] = -eye3
        dJd = np.einsum("kaim,ki->kam", Hj, dth[:, j])
        Je[:, rv, 3 * j:3 * j + 3] = R @ (Sw @ Jj + dJd)
        Je[:, rv, 12 + 3 * j:15 + 3 * j] = RJ
        # torque rows: tau + J^T R^T f
        Je[:, rt, 24 + 3 * j:27 + 3 * j] = eye3
        Ju[:, rt, 3 * j:3 * j + 3] = np.swapaxes(RJ, 1, 2)
        Jx[:, rt, 3:6] = np.einsum("kai,kcba,kb->kic", Jj, dR, fb[:, j])
        Je[:, rt, 3 * j:3 * j + 3] = np.einsum("kaim,ka->kim", Hj, wb[:, j])
    return c, Jx, Ju, Je
