# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled legged kernels; same signatures as the numpy fallback."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, tan

cnp.import_array()


cdef inline void _rot(double r, double p, double y, double[:, ::1] R, double[:, :, ::1] dR, bint jac) noexcept nogil:
    cdef double cr = cos(r), sr = sin(r), cp = cos(p), sp = sin(p), cy = cos(y), sy = sin(y)
    R[0, 0] = cy * cp
    R[0, 1] = cy * sp * sr - sy * cr
    R[0, 2] = cy * sp * cr + sy * sr
    R[1, 0] = sy * cp
    R[1, 1] = sy * sp * sr + cy * cr
    R[1, 2] = sy * sp * cr - cy * sr
    R[2, 0] = -sp
    R[2, 1] = cp * sr
    R[2, 2] = cp * cr
    if not jac:
        return
    # roll
    dR[0, 0, 0] = 0.0
    dR[0, 0, 1] = cy * sp * cr + sy * sr
    dR[0, 0, 2] = -cy * sp * sr + sy * cr
    dR[0, 1, 0] = 0.0
    dR[0, 1, 1] = sy * sp * cr - cy * sr
    dR[0, 1, 2] = -sy * sp * sr - cy * cr
    dR[0, 2, 0] = 0.0
    dR[0, 2, 1] = cp * cr
    dR[0, 2, 2] = -cp * sr
    # pitch
    dR[1, 0, 0] = -cy * sp
    dR[1, 0, 1] = cy * cp * sr
    dR[1, 0, 2] = cy * cp * cr
    dR[1, 1, 0] = -sy * sp
    dR[1, 1, 1] = sy * cp * sr
    dR[1, 1, 2] = sy * cp * cr
    dR[1, 2, 0] = -cp
    dR[1, 2, 1] = -sp * sr
    dR[1, 2, 2] = -sp * cr
    # yaw
    dR[2, 0, 0] = -sy * cp
    dR[2, 0, 1] = -sy * sp * sr - cy * cr
    dR[2, 0, 2] = -sy * sp * cr + cy * sr
    dR[2, 1, 0] = cy * cp
    dR[2, 1, 1] = cy * sp * sr - sy * cr
    dR[2, 1, 2] = cy * sp * cr + sy * sr
    dR[2, 2, 0] = 0.0
    dR[2, 2, 1] = 0.0
    dR[2, 2, 2] = 0.0


cdef inline void _cross(double* a, double* b, double* out) noexcept nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


def srb_step(x, u, double m, inertia, double g, double dt, bint jac=True):
    cdef double[:, ::1] X = np.ascontiguousarray(np.atleast_2d(x), dtype=float)
    cdef double[:, ::1] U = np.ascontiguousarray(np.atleast_2d(u), dtype=float)
    cdef Py_ssize_t K = X.shape[0], k, i, j, c, a
    cdef double[::1] Id = np.ascontiguousarray(inertia, dtype=float)
    xn_arr = np.empty((K, 36))
    cdef double[:, ::1] XN = xn_arr
    A_arr = None
    B_arr = None
    cdef double[:, :, ::1] A
    cdef double[:, :, ::1] B
    if jac:
        A_arr = np.zeros((K, 36, 36))
        B_arr = np.zeros((K, 36, 24))
        A = A_arr
        B = B_arr
    cdef double[:, ::1] R = np.empty((3, 3))
    cdef double[:, :, ::1] dR = np.empty((3, 3, 3))
    cdef double r[4][3]
    cdef double f[4][3]
    cdef double tw[3]
    cdef double tb[3]
    cdef double ftot[3]
    cdef double w[3]
    cdef double Iw[3]
    cdef double wxIw[3]
    cdef double tmp[3]
    cdef double col[3]
    cdef double M[3][3]
    cdef double cr, sr, cp, tp, sec2, s
    with nogil:
        for k in range(K):
            _rot(X[k, 3], X[k, 4], X[k, 5], R, dR, jac)
            for a in range(3):
                tw[a] = 0.0
                ftot[a] = 0.0
                w[a] = X[k, 21 + a]
                Iw[a] = Id[a] * w[a]
            for j in range(4):
                for a in range(3):
                    r[j][a] = X[k, 6 + 3 * j + a] - X[k, a]
                    f[j][a] = U[k, 3 * j + a]
                    ftot[a] += f[j][a]
                _cross(r[j], f[j], tmp)
                for a in range(3):
                    tw[a] += tmp[a]
            for a in range(3):
                tb[a] = R[0, a] * tw[0] + R[1, a] * tw[1] + R[2, a] * tw[2]
            _cross(w, Iw, wxIw)
            cr = cos(X[k, 3]); sr = sin(X[k, 3])
            cp = cos(X[k, 4]); tp = tan(X[k, 4])
            for i in range(3):
                XN[k, i] = X[k, i] + dt * X[k, 18 + i]
            XN[k, 3] = X[k, 3] + dt * (w[0] + sr * tp * w[1] + cr * tp * w[2])
            XN[k, 4] = X[k, 4] + dt * (cr * w[1] - sr * w[2])
            XN[k, 5] = X[k, 5] + dt * (sr / cp * w[1] + cr / cp * w[2])
            for i in range(12):
                XN[k, 6 + i] = X[k, 6 + i] + dt * X[k, 24 + i]
                XN[k, 24 + i] = X[k, 24 + i] + dt * U[k, 12 + i]
            for a in range(3):
                XN[k, 18 + a] = X[k, 18 + a] + dt * (ftot[a] / m)
            XN[k, 20] -= dt * g
            for a in range(3):
                XN[k, 21 + a] = X[k, 21 + a] + dt * ((tb[a] - wxIw[a]) / Id[a])
            if not jac:
                continue
            for i in range(36):
                A[k, i, i] = 1.0
            for a in range(3):
                A[k, a, 18 + a] = dt
            # Euler-rate rows
            sec2 = 1.0 / (cp * cp)
            A[k, 3, 3] += dt * (cr * tp * w[1] - sr * tp * w[2])
            A[k, 4, 3] += dt * (-sr * w[1] - cr * w[2])
            A[k, 5, 3] += dt * (cr / cp * w[1] - sr / cp * w[2])
            A[k, 3, 4] += dt * (sr * sec2 * w[1] + cr * sec2 * w[2])
            A[k, 5, 4] += dt * (sr * tp / cp * w[1] + cr * tp / cp * w[2])
            A[k, 3, 21] = dt
            A[k, 3, 22] = dt * sr * tp
            A[k, 3, 23] = dt * cr * tp
            A[k, 4, 22] = dt * cr
            A[k, 4, 23] = -dt * sr
            A[k, 5, 22] = dt * sr / cp
            A[k, 5, 23] = dt * cr / cp
            for i in range(12):
                A[k, 6 + i, 24 + i] = dt
                B[k, 24 + i, 12 + i] = dt
            # angular rows: d/d ang
            for c in range(3):
                for i in range(3):
                    s = 0.0
                    for a in range(3):
                        s += dR[c, a, i] * tw[a]
                    A[k, 21 + i, 3 + c] = dt * s / Id[i]
            # d/d q_lin: R^T [ftot]x ; d/d foot_j: -R^T [f_j]x ; d/d u_j: R^T [r_j]x
            for c in range(3):
                # e_c
                for a in range(3):
                    tmp[a] = 0.0
                tmp[c] = 1.0
                # ftot x e_c
                _cross(ftot, tmp, col)
                for i in range(3):
                    A[k, 21 + i, c] = dt * (R[0, i] * col[0] + R[1, i] * col[1] + R[2, i] * col[2]) / Id[i]
                for j in range(4):
                    _cross(f[j], tmp, col)
                    for i in range(3):
                        A[k, 21 + i, 6 + 3 * j + c] = -dt * (R[0, i] * col[0] + R[1, i] * col[1] + R[2, i] * col[2]) / Id[i]
                    _cross(r[j], tmp, col)
                    for i in range(3):
                        B[k, 21 + i, 3 * j + c] = dt * (R[0, i] * col[0] + R[1, i] * col[1] + R[2, i] * col[2]) / Id[i]
                    B[k, 18 + c, 3 * j + c] = dt / m
                # d(w x Iw)/dw e_c = e_c x Iw + w x (I e_c)
                for a in range(3):
                    M[0][a] = Id[a] * w[a]
                _cross(tmp, M[0], wxIw)
                M[1][0] = 0.0
                M[1][1] = 0.0
                M[1][2] = 0.0
                M[1][c] = Id[c]
                _cross(w, M[1], M[2])
                for i in range(3):
                    A[k, 21 + i, 21 + c] -= dt * (wxIw[i] + M[2][i]) / Id[i]
    if jac:
        return xn_arr, A_arr, B_arr
    return xn_arr


def slack_rows(x, u, e, p, bint jac=True):
    cdef double[:, ::1] X = np.ascontiguousarray(np.atleast_2d(x), dtype=float)
    cdef double[:, ::1] U = np.ascontiguousarray(np.atleast_2d(u), dtype=float)
    cdef double[:, ::1] E = np.ascontiguousarray(np.atleast_2d(e), dtype=float)
    cdef Py_ssize_t K = X.shape[0], k, j, a, b, c, i, q
    cdef double l1 = p.l_upper, l2 = p.l_lower, la = p.l_abd
    cdef double[:, ::1] hips = np.ascontiguousarray(p.hips, dtype=float)
    cdef double[::1] sides = np.ascontiguousarray(p.sides, dtype=float)
    c_arr = np.empty((K, 36))
    cdef double[:, ::1] C = c_arr
    Jx_arr = Ju_arr = Je_arr = None
    cdef double[:, :, ::1] Jx
    cdef double[:, :, ::1] Ju
    cdef double[:, :, ::1] Je
    if jac:
        Jx_arr = np.zeros((K, 36, 36))
        Ju_arr = np.zeros((K, 36, 24))
        Je_arr = np.zeros((K, 36, 36))
        Jx = Jx_arr
        Ju = Ju_arr
        Je = Je_arr
    cdef double[:, ::1] R = np.empty((3, 3))
    cdef double[:, :, ::1] dR = np.empty((3, 3, 3))
    cdef double ell[3]
    cdef double J[3][3]
    cdef double H[3][3][3]
    cdef double w[3]
    cdef double av[3]
    cdef double wb[3]
    cdef double tmp[3]
    cdef double col[3]
    cdef double t1, t2, t3, s1, c1, s2, c2, s23, c23, vx, vy, vz, v2x, v2z, v3x, v3z, sacc
    with nogil:
        for k in range(K):
            _rot(X[k, 3], X[k, 4], X[k, 5], R, dR, True)
            for a in range(3):
                w[a] = X[k, 21 + a]
            for j in range(4):
                t1 = E[k, 3 * j]; t2 = E[k, 3 * j + 1]; t3 = E[k, 3 * j + 2]
                s1 = sin(t1); c1 = cos(t1); s2 = sin(t2); c2 = cos(t2)
                s23 = sin(t2 + t3); c23 = cos(t2 + t3)
                vy = sides[j] * la
                vx = -l1 * s2 - l2 * s23
                vz = -l1 * c2 - l2 * c23
                ell[0] = hips[j, 0] + vx
                ell[1] = hips[j, 1] + c1 * vy - s1 * vz
                ell[2] = hips[j, 2] + s1 * vy + c1 * vz
                v2x = -l1 * c2 - l2 * c23
                v2z = l1 * s2 + l2 * s23
                v3x = -l2 * c23
                v3z = l2 * s23
                J[0][0] = 0.0
                J[1][0] = -s1 * vy - c1 * vz
                J[2][0] = c1 * vy - s1 * vz
                J[0][1] = v2x
                J[1][1] = -s1 * v2z
                J[2][1] = c1 * v2z
                J[0][2] = v3x
                J[1][2] = -s1 * v3z
                J[2][2] = c1 * v3z
                # second derivatives H[a][k][m]
                H[0][0][0] = 0.0
                H[1][0][0] = -c1 * vy + s1 * vz
                H[2][0][0] = -s1 * vy - c1 * vz
                H[0][0][1] = 0.0
                H[1][0][1] = -c1 * v2z
                H[2][0][1] = -s1 * v2z
                H[0][0][2] = 0.0
                H[1][0][2] = -c1 * v3z
                H[2][0][2] = -s1 * v3z
                H[0][1][1] = l1 * s2 + l2 * s23
                H[1][1][1] = -s1 * (l1 * c2 + l2 * c23)
                H[2][1][1] = c1 * (l1 * c2 + l2 * c23)
                H[0][1][2] = l2 * s23
                H[1][1][2] = -s1 * l2 * c23
                H[2][1][2] = c1 * l2 * c23
                H[0][2][2] = l2 * s23
                H[1][2][2] = -s1 * l2 * c23
                H[2][2][2] = c1 * l2 * c23
                for a in range(3):
                    H[a][1][0] = H[a][0][1]
                    H[a][2][0] = H[a][0][2]
                    H[a][2][1] = H[a][1][2]
                # a = w x ell + J dtheta (body frame)
                _cross(w, ell, av)
                for a in range(3):
                    for b in range(3):
                        av[a] += J[a][b] * E[k, 12 + 3 * j + b]
                for a in range(3):
                    wb[a] = R[0, a] * U[k, 3 * j] + R[1, a] * U[k, 3 * j + 1] + R[2, a] * U[k, 3 * j + 2]
                for a in range(3):
                    C[k, 3 * j + a] = X[k, a] + R[a, 0] * ell[0] + R[a, 1] * ell[1] + R[a, 2] * ell[2] - X[k, 6 + 3 * j + a]
                    C[k, 12 + 3 * j + a] = X[k, 18 + a] + R[a, 0] * av[0] + R[a, 1] * av[1] + R[a, 2] * av[2] - X[k, 24 + 3 * j + a]
                    C[k, 24 + 3 * j + a] = E[k, 24 + 3 * j + a] + J[0][a] * wb[0] + J[1][a] * wb[1] + J[2][a] * wb[2]
                if not jac:
                    continue
                for a in range(3):
                    Jx[k, 3 * j + a, a] = 1.0
                    Jx[k, 3 * j + a, 6 + 3 * j + a] = -1.0
                    Jx[k, 12 + 3 * j + a, 18 + a] = 1.0
                    Jx[k, 12 + 3 * j + a, 24 + 3 * j + a] = -1.0
                    Je[k, 24 + 3 * j + a, 24 + 3 * j + a] = 1.0
                    for c in range(3):
                        Jx[k, 3 * j + a, 3 + c] = dR[c, a, 0] * ell[0] + dR[c, a, 1] * ell[1] + dR[c, a, 2] * ell[2]
                        Jx[k, 12 + 3 * j + a, 3 + c] = dR[c, a, 0] * av[0] + dR[c, a, 1] * av[1] + dR[c, a, 2] * av[2]
                        # torque row a depends on column a of J: sum_b J[b][a] (dR_c^T f)_b
                        sacc = 0.0
                        for b in range(3):
                            sacc += J[b][a] * (dR[c, 0, b] * U[k, 3 * j] + dR[c, 1, b] * U[k, 3 * j + 1] + dR[c, 2, b] * U[k, 3 * j + 2])
                        Jx[k, 24 + 3 * j + a, 3 + c] = sacc
                        # R J
                        sacc = R[a, 0] * J[0][c] + R[a, 1] * J[1][c] + R[a, 2] * J[2][c]
                        Je[k, 3 * j + a, 3 * j + c] = sacc
                        Je[k, 12 + 3 * j + a, 12 + 3 * j + c] = sacc
                        Ju[k, 24 + 3 * j + c, 3 * j + a] = sacc
                        # torque wrt theta: sum_b H[b][a][c] wb_b
                        Je[k, 24 + 3 * j + a, 3 * j + c] = H[0][a][c] * wb[0] + H[1][a][c] * wb[1] + H[2][a][c] * wb[2]
                # d vel / d omega = -R [ell]x ; column c = -R (e_c x ell)
                for c in range(3):
                    tmp[0] = 0.0
                    tmp[1] = 0.0
                    tmp[2] = 0.0
                    tmp[c] = 1.0
                    _cross(tmp, ell, col)
                    for a in range(3):
                        Jx[k, 12 + 3 * j + a, 21 + c] = R[a, 0] * col[0] + R[a, 1] * col[1] + R[a, 2] * col[2]
                    # d vel / d theta_c = R (w x J[:, c] + sum_q H[:, q, c] dtheta_q)
                    for a in range(3):
                        tmp[a] = J[a][c]
                    _cross(w, tmp, col)
                    for a in range(3):
                        for q in range(3):
                            col[a] += H[a][q][c] * E[k, 12 + 3 * j + q]
                    for a in range(3):
                        Je[k, 12 + 3 * j + a, 3 * j + c] = R[a, 0] * col[0] + R[a, 1] * col[1] + R[a, 2] * col[2]
    if jac:
        return c_arr, Jx_arr, Ju_arr, Je_arr
    return c_arr
