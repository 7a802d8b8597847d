"""Batched rotation, Euler-rate and leg kinematics with analytic derivatives.

Every function takes a leading batch axis K. Angles are ZYX Euler
(roll, pitch, yaw) and R maps body to world coordinates.
"""

from __future__ import annotations

import numpy as np

from .params import LeggedParams


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    z, o = np.zeros_like(a), np.ones_like(a)
    R = np.stack([o, z, z, z, c, -s, z, s, c], -1).reshape(a.shape + (3, 3))
    dR = np.stack([z, z, z, z, -s, -c, z, c, -s], -1).reshape(a.shape + (3, 3))
    return R, dR


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    z, o = np.zeros_like(a), np.ones_like(a)
    R = np.stack([c, z, s, z, o, z, -s, z, c], -1).reshape(a.shape + (3, 3))
    dR = np.stack([-s, z, c, z, z, z, -c, z, -s], -1).reshape(a.shape + (3, 3))
    return R, dR


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    z, o = np.zeros_like(a), np.ones_like(a)
    R = np.stack([c, -s, z, s, c, z, z, z, o], -1).reshape(a.shape + (3, 3))
    dR = np.stack([-s, -c, z, c, -s, z, z, z, z], -1).reshape(a.shape + (3, 3))
    return R, dR


def rotation(ang: np.ndarray, jac: bool = False):
    """R = Rz(yaw) Ry(pitch) Rx(roll); with jac also dR[:, k] = dR/d ang_k."""
    ang = np.asarray(ang, dtype=float)
    Rx, dRx = _rx(ang[..., 0])
    Ry, dRy = _ry(ang[..., 1])
    Rz, dRz = _rz(ang[..., 2])
    RzRy = Rz @ Ry
    R = RzRy @ Rx
    if not jac:
        return R
    dR = np.stack([RzRy @ dRx, Rz @ dRy @ Rx, dRz @ Ry @ Rx], axis=-3)
    return R, dR


def euler_rate_matrix(ang: np.ndarray, jac: bool = False):
    """E with d(ang)/dt = E(ang) @ omega for body-frame omega."""
    ang = np.asarray(ang, dtype=float)
    r, p = ang[..., 0], ang[..., 1]
    cr, sr = np.cos(r), np.sin(r)
    cp, tp = np.cos(p), np.tan(p)
    z, o = np.zeros_like(r), np.ones_like(r)
    E = np.stack([o, sr * tp, cr * tp,
                  z, cr, -sr,
                  z, sr / cp, cr / cp], -1).reshape(r.shape + (3, 3))
    if not jac:
        return E
    sec2 = 1.0 / cp ** 2
    dEr = np.stack([z, cr * tp, -sr * tp,
                    z, -sr, -cr,
                    z, cr / cp, -sr / cp], -1).reshape(r.shape + (3, 3))
    dEp = np.stack([z, sr * sec2, cr * sec2,
                    z, z, z,
                    z, sr * tp / cp, cr * tp / cp], -1).reshape(r.shape + (3, 3))
    dE = np.stack([dEr, dEp, np.zeros_like(dEr)], axis=-3)
    return E, dE


def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    z = np.zeros_like(v[..., 0])
    return np.stack([z, -v[..., 2], v[..., 1],
                     v[..., 2], z, -v[..., 0],
                     -v[..., 1], v[..., 0], z], -1).reshape(v.shape[:-1] + (3, 3))


def leg_fk(theta: np.ndarray, p: LeggedParams, order: int = 0):
    """Body-frame foot positions for joint angles theta of shape (..., 4, 3).

    order 1 adds the (..., 4, 3, 3) Jacobian, order 2 also the second
    derivatives H[..., a, k, m] = d2 ell_a / d theta_k d theta_m.
    """
    theta = np.asarray(theta, dtype=float)
    t1, t2, t3 = theta[..., 0], theta[..., 1], theta[..., 2]
    l1, l2 = p.l_upper, p.l_lower
    s1, c1 = np.sin(t1), np.cos(t1)
    s2, c2 = np.sin(t2), np.cos(t2)
    s23, c23 = np.sin(t2 + t3), np.cos(t2 + t3)
    vy = np.broadcast_to(p.sides * p.l_abd, t1.shape)
    vx = -l1 * s2 - l2 * s23
    vz = -l1 * c2 - l2 * c23
    hips = np.broadcast_to(p.hips, theta.shape)
    ell = hips + np.stack([vx, c1 * vy - s1 * vz, s1 * vy + c1 * vz], -1)
    if order == 0:
        return ell

    def rot1(wx, wz):
        # Rx(t1) @ (wx, 0, wz)
        return np.stack([wx, -s1 * wz, c1 * wz], -1)

    def drot1(wx, wz):
        # Rx'(t1) @ (wx, 0, wz)
        return np.stack([np.zeros_like(wx), -c1 * wz, -s1 * wz], -1)

    zero = np.zeros_like(t1)
    d1 = np.stack([zero, -s1 * vy - c1 * vz, c1 * vy - s1 * vz], -1)
    v2x, v2z = -l1 * c2 - l2 * c23, l1 * s2 + l2 * s23
    v3x, v3z = -l2 * c23, l2 * s23
    d2 = rot1(v2x, v2z)
    d3 = rot1(v3x, v3z)
    J = np.stack([d1, d2, d3], -1)
    if order == 1:
        return ell, J
    h11 = np.stack([zero, -c1 * vy + s1 * vz, -s1 * vy - c1 * vz], -1)
    h12 = drot1(v2x, v2z)
    h13 = drot1(v3x, v3z)
    h22 = rot1(l1 * s2 + l2 * s23, l1 * c2 + l2 * c23)
    h23 = rot1(l2 * s23, l2 * c23)
    h33 = h23
    H = np.stack([np.stack([h11, h12, h13], -1),
                  np.stack([h12, h22, h23], -1),
                  np.stack([h13, h23, h33], -1)], -1)
    return ell, J, H


def leg_ik(ell: np.ndarray, p: LeggedParams):
    """Closed-form joint angles reaching body-frame foot targets ell (..., 4, 3).

    Returns (theta, reach_gap) where reach_gap >= 0 is how far (m) the target
    lies outside the workspace; unreachable targets are projected onto it.
    """
    ell = np.asarray(ell, dtype=float)
    l1, l2, la = p.l_upper, p.l_lower, p.l_abd
    d = ell - p.hips
    px, py, pz = d[..., 0], d[..., 1], d[..., 2]
    ryz2 = py ** 2 + pz ** 2
    gap_abd = np.maximum(la - np.sqrt(ryz2), 0.0)
    vz = -np.sqrt(np.maximum(ryz2 - la ** 2, 0.0))
    s = np.broadcast_to(p.sides, px.shape)
    t1 = np.arctan2(pz, py) - np.arctan2(vz, s * la)
    t1 = (t1 + np.pi) % (2 * np.pi) - np.pi
    D = np.hypot(px, vz)
    c3 = (D ** 2 - l1 ** 2 - l2 ** 2) / (2 * l1 * l2)
    Dmax, Dmin = l1 + l2, abs(l1 - l2)
    gap_len = np.maximum(D - Dmax, 0.0) + np.maximum(Dmin - D, 0.0)
    t3 = np.arccos(np.clip(c3, -1.0, 1.0))
    t2 = np.arctan2(-px, -vz) - np.arctan2(l2 * np.sin(t3), l1 + l2 * np.cos(t3))
    return np.stack([t1, t2, t3], -1), gap_abd + gap_len


def nominal_angles(p: LeggedParams, height: float | None = None) -> np.ndarray:
    """Joint angles placing each foot under its hip at the given body height."""
    h = p.nominal_height if height is None else height
    ell = p.hips + np.column_stack([np.zeros(4), p.sides * p.l_abd, -h * np.ones(4)])
    theta, _ = leg_ik(ell, p)
    return theta
