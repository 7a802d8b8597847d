"""Convex QP subproblem solvers.

Problems take the form::

    min  0.5 x'Hx + g'x   s.t.  A x = b,   lb <= C x <= ub

with infinite entries of ``lb``/``ub`` meaning a one-sided row. Row
multipliers follow the convention ``H x + g + A'y + C'lam = 0`` where
``lam > 0`` marks an active upper side and ``lam < 0`` an active lower side.

Two backends are provided. The dense backend is a Mehrotra interior-point
method followed by an active-set polish that re-solves the equality-constrained
QP on the identified active set, giving round-off-exact solutions and cheap
warm starts. The sparse backend hands large problems to Clarabel.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

try:
    import clarabel
except ImportError:  # pragma: no cover - optional at import, required for large problems
    clarabel = None


class QpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    FAILED = "failed"


@dataclass
class QpSubproblem:
    """Quadratic program data. ``H``, ``A`` and ``C`` may be dense or sparse."""

    H: object
    g: np.ndarray
    A: object
    b: np.ndarray
    C: object
    lb: np.ndarray
    ub: np.ndarray

    @property
    def n(self) -> int:
        return len(self.g)

    @property
    def m_eq(self) -> int:
        return len(self.b)

    @property
    def m_in(self) -> int:
        return len(self.lb)

    def kkt_residual(self, x, y, lam) -> float:
        """Infinity norm of stationarity, primal and complementarity residuals."""
        Cx = self.C @ x
        stat = self.H @ x + self.g + self.A.T @ y + self.C.T @ lam
        prim = max(
            np.max(np.abs(self.A @ x - self.b), initial=0.0),
            np.max(self.lb - Cx, initial=0.0),
            np.max(Cx - self.ub, initial=0.0),
        )
        up = np.where(np.isfinite(self.ub), self.ub - Cx, 0.0)
        lo = np.where(np.isfinite(self.lb), Cx - self.lb, 0.0)
        comp = np.maximum(lam, 0.0) * up + np.maximum(-lam, 0.0) * lo
        sign = np.maximum(np.maximum(-lam, 0.0) * ~np.isfinite(self.lb), np.maximum(lam, 0.0) * ~np.isfinite(self.ub))
        return float(
            max(
                np.max(np.abs(stat), initial=0.0),
                prim,
                np.max(np.abs(comp), initial=0.0),
                np.max(sign, initial=0.0),
            )
        )


@dataclass
class QpResult:
    x: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    status: QpStatus
    iterations: int = 0
    active_changes: int = 0
    active: tuple = ()
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is QpStatus.OPTIMAL


def _dense(M):
    return M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)


def _one_sided(qp: QpSubproblem, C):
    """Stack finite sides as ``G x <= h``; returns rows, sides (+1 upper, -1 lower)."""
    up = np.flatnonzero(np.isfinite(qp.ub))
    lo = np.flatnonzero(np.isfinite(qp.lb))
    G = np.vstack([C[up], -C[lo]]) if C.size else np.zeros((0, qp.n))
    h = np.concatenate([qp.ub[up], -qp.lb[lo]])
    rows = np.concatenate([up, lo])
    sides = np.concatenate([np.ones(len(up), int), -np.ones(len(lo), int)])
    return G, h, rows, sides


def _row_duals(z, rows, sides, m):
    lam = np.zeros(m)
    np.add.at(lam, rows, sides * z)
    return lam


def _ipm(H, g, A, b, G, h, tol=1e-10, max_iter=100):
    """Mehrotra predictor-corrector for ``min 0.5x'Hx+g'x, Ax=b, Gx<=h``."""
    n, me, mi = len(g), len(b), len(h)
    K0 = np.zeros((n + me, n + me))
    K0[n:, :n] = A
    K0[:n, n:] = A.T
    reg = 1e-13 * np.eye(me)

    def factor(W):
        K = K0.copy()
        K[:n, :n] = H + (G.T * W) @ G if mi else H
        K[n:, n:] = -reg
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            return sla.lu_factor(K, check_finite=False)

    lu = factor(np.ones(mi))
    sol = sla.lu_solve(lu, np.concatenate([-g + (G.T @ h if mi else 0.0), b]), check_finite=False)
    x, y = sol[:n], sol[n:]
    if mi == 0:
        return x, y, np.zeros(0), np.zeros(0), 1, True
    s = h - G @ x
    s = np.maximum(s, 1.0)
    z = np.ones(mi)
    scale = 1.0 + max(np.max(np.abs(g), initial=0.0), np.max(np.abs(b), initial=0.0), np.max(np.abs(h), initial=0.0))
    for it in range(1, max_iter + 1):
        rd = H @ x + g + A.T @ y + G.T @ z
        req = A @ x - b
        rin = G @ x + s - h
        mu = s @ z / mi
        res = max(np.max(np.abs(rd)), np.max(np.abs(req), initial=0.0), np.max(np.abs(rin)))
        if res <= tol * scale and mu <= tol:
            return x, y, z, s, it, True
        W = z / s
        lu = factor(W)

        def direction(rc):
            rhs1 = -rd - G.T @ ((rc + z * rin) / s)
            d = sla.lu_solve(lu, np.concatenate([rhs1, -req]), check_finite=False)
            dx, dy = d[:n], d[n:]
            dz = (rc + z * rin) / s + W * (G @ dx)
            ds = -rin - G @ dx
            return dx, dy, dz, ds

        def max_step(v, dv):
            neg = dv < 0
            return min(1.0, np.min(-v[neg] / dv[neg])) if np.any(neg) else 1.0

        dx, dy, dz, ds = direction(-s * z)
        a_aff = min(max_step(s, ds), max_step(z, dz))
        mu_aff = (s + a_aff * ds) @ (z + a_aff * dz) / mi
        sigma = (mu_aff / mu) ** 3
        dx, dy, dz, ds = direction(-s * z + sigma * mu - ds * dz)
        alpha = 0.99 * min(max_step(s, ds), max_step(z, dz))
        nxt = x + alpha * dx, y + alpha * dy, z + alpha * dz, s + alpha * ds
        # degenerate problems can collapse the gap ahead of the residuals;
        # keep the last finite iterate for the active-set polish
        if not all(np.all(np.isfinite(v)) for v in nxt) or np.min(nxt[3]) <= 0 or alpha < 1e-12:
            return x, y, z, s, it, False
        x, y, z, s = nxt
    return x, y, z, s, max_iter, False


def _polish(H, g, A, b, G, h, active, tol):
    """Solve the equality QP on ``active`` rows of ``G`` and verify optimality."""
    n, me = len(g), len(b)
    act = np.asarray(sorted(active), dtype=int)
    Ga = G[act]
    m = me + len(act)
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    J = np.vstack([A, Ga])
    K[:n, n:] = J.T
    K[n:, :n] = J
    rhs = np.concatenate([-g, b, h[act]])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return None
    x, y, za = sol[:n], sol[n : n + me], sol[n + me :]
    if not np.all(np.isfinite(sol)):
        return None
    z = np.zeros(len(h))
    z[act] = za
    scale = 1.0 + np.max(np.abs(h), initial=0.0)
    viol = G @ x - h
    if np.max(viol, initial=-np.inf) > tol * scale or np.min(za, initial=np.inf) < -tol * (1.0 + np.max(np.abs(za), initial=0.0)):
        return x, y, np.maximum(z, 0.0), False, viol, za
    return x, y, np.maximum(z, 0.0), True, viol, za


def _polish_from(H, g, A, b, G, h, act, rounds: int = 5):
    """Polish from a guessed active set, dropping negative duals and adding violated rows."""
    for _ in range(rounds):
        pol = _polish(H, g, A, b, G, h, act, tol=1e-9)
        if pol is None:
            return None
        xp, yp, zp, good, viol, za = pol
        if good:
            return xp, yp, zp
        srt = sorted(act)
        drop = {srt[j] for j in np.flatnonzero(za < 0)}
        add = set(np.flatnonzero(viol > 1e-9).tolist())
        if not drop and not add:
            return None
        act = (act - drop) | add
    return None


def solve_dense(qp: QpSubproblem, warm: tuple | None = None, tol: float = 1e-10) -> QpResult:
    """Dense interior-point solve with active-set polish.

    ``warm`` is an active set ``((row, side), ...)`` from a previous result;
    when it is still optimal the solve finishes after one linear solve.
    """
    H, A, C = _dense(qp.H), _dense(qp.A).reshape(-1, qp.n), _dense(qp.C).reshape(-1, qp.n)
    g, b = np.asarray(qp.g, float), np.asarray(qp.b, float)
    G, h, rows, sides = _one_sided(qp, C)
    key = {(int(r), int(s)): j for j, (r, s) in enumerate(zip(rows, sides))}

    def finish(x, y, z, iters, changes, status=QpStatus.OPTIMAL, info=None):
        act = tuple(sorted((int(rows[j]), int(sides[j])) for j in np.flatnonzero(z > 0)))
        return QpResult(x, y, _row_duals(z, rows, sides, qp.m_in), status, iters, changes, act, info or {})

    if warm is not None:
        act = [key[a] for a in warm if a in key]
        pol = _polish(H, g, A, b, G, h, act, tol=1e-9)
        if pol is not None and pol[3]:
            x, y, z = pol[:3]
            return finish(x, y, z, 1, 0, info={"path": "warm"})

    x, y, z, s, iters, ok = _ipm(H, g, A, b, G, h, tol=tol)
    if not ok and np.all(np.isfinite(x)) and len(h):
        pol = _polish_from(H, g, A, b, G, h, set(np.flatnonzero(z > s).tolist()))
        if pol is not None:
            return finish(*pol, iters + 1, 0, info={"path": "rescue"})
    if not ok:
        if not _feasible(qp):
            return QpResult(x, y, _row_duals(z, rows, sides, qp.m_in), QpStatus.INFEASIBLE, iters)
        return finish(x, y, z, iters, 0, QpStatus.FAILED)
    if len(h) == 0:
        return finish(x, y, z, iters, 0, info={"path": "eqp"})
    # polish: rows with dual larger than slack are treated as active
    act = set(np.flatnonzero(z > s).tolist())
    prev = {key[a] for a in warm if a in key} if warm is not None else set()
    pol = _polish_from(H, g, A, b, G, h, act)
    if pol is not None:
        return finish(*pol, iters + 1, len(act ^ prev), info={"path": "polish"})
    return finish(x, y, z, iters, len(set(np.flatnonzero(z > s).tolist()) ^ prev), info={"path": "ipm"})


def _feasible(qp: QpSubproblem, tol: float = 1e-7) -> bool:
    """Feasibility test via the always-feasible elastic problem."""
    el = elastic(qp, 1.0, hessian_scale=0.0)
    H = _dense(el.qp.H)
    G, h, rows, sides = _one_sided(el.qp, _dense(el.qp.C).reshape(-1, el.qp.n))
    x, *_rest, ok = _ipm(H + 1e-9 * np.eye(el.qp.n), _dense(el.qp.g), _dense(el.qp.A).reshape(-1, el.qp.n), el.qp.b, G, h, tol=1e-9)
    return bool(ok and el.infeasibility(x) <= tol)


def solve_sparse(qp: QpSubproblem, tol: float = 1e-9, max_iter: int = 200) -> QpResult:
    """Solve with Clarabel's sparse interior-point method."""
    if clarabel is None:  # pragma: no cover
        raise RuntimeError("clarabel is required for sparse QPs")
    n = qp.n
    H = sp.csc_matrix(qp.H)
    P = sp.triu(H, format="csc")
    A = sp.csr_matrix(qp.A).reshape(qp.m_eq, n) if qp.m_eq else sp.csr_matrix((0, n))
    C = sp.csr_matrix(qp.C)
    up = np.flatnonzero(np.isfinite(qp.ub))
    lo = np.flatnonzero(np.isfinite(qp.lb))
    M = sp.vstack([A, C[up], -C[lo]], format="csc")
    rhs = np.concatenate([qp.b, qp.ub[up], -qp.lb[lo]])
    cones = []
    if qp.m_eq:
        cones.append(clarabel.ZeroConeT(qp.m_eq))
    if len(up) + len(lo):
        cones.append(clarabel.NonnegativeConeT(len(up) + len(lo)))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.max_iter = max_iter
    settings.presolve_enable = False
    solver = clarabel.DefaultSolver(P, np.asarray(qp.g, float), M, rhs, cones, settings)
    sol = solver.solve()
    x = np.asarray(sol.x)
    zall = np.asarray(sol.z)
    y = zall[: qp.m_eq]
    z = zall[qp.m_eq :]
    rows = np.concatenate([up, lo])
    sides = np.concatenate([np.ones(len(up), int), -np.ones(len(lo), int)])
    lam = _row_duals(z, rows, sides, qp.m_in)
    name = str(sol.status)
    if "Solved" in name and "Almost" not in name:
        status = QpStatus.OPTIMAL
    elif "Almost" in name:
        status = QpStatus.OPTIMAL
    elif "Infeasible" in name:
        status = QpStatus.INFEASIBLE
    else:
        status = QpStatus.FAILED
    return QpResult(x, y, lam, status, int(sol.iterations), info={"clarabel": name})


def qp_solve(qp: QpSubproblem, warm: tuple | None = None, backend: str = "auto") -> QpResult:
    """Solve a QP, picking the dense backend for small problems."""
    if backend == "auto":
        backend = "dense" if qp.n <= 400 and not sp.issparse(qp.A) else "sparse"
    if backend == "dense":
        return solve_dense(qp, warm)
    return solve_sparse(qp)


@dataclass
class ElasticQp:
    """Elastic reformulation: every row gets non-negative violation slacks."""

    qp: QpSubproblem
    n_orig: int
    penalty: float

    def split(self, x):
        return x[: self.n_orig]

    def infeasibility(self, x) -> float:
        return float(np.max(x[self.n_orig :], initial=0.0))


def elastic(qp: QpSubproblem, penalty: float, hessian_scale: float = 1.0) -> ElasticQp:
    """Relax ``A x = b`` to ``A x + p - q = b`` and ``lb <= Cx <= ub`` to
    ``lb <= Cx + t_l - t_u <= ub`` with all slacks non-negative and an
    ``l1`` penalty on them."""
    n, me, mi = qp.n, qp.m_eq, qp.m_in
    ns = 2 * me + 2 * mi
    sparse = sp.issparse(qp.A) or sp.issparse(qp.C) or sp.issparse(qp.H)
    if sparse:
        H = sp.block_diag([sp.csc_matrix(qp.H) * hessian_scale, sp.csc_matrix((ns, ns))], format="csc")
        Ie, Ii = sp.identity(me, format="csr"), sp.identity(mi, format="csr")
        A = sp.hstack([sp.csr_matrix(qp.A).reshape(me, n), Ie, -Ie, sp.csr_matrix((me, 2 * mi))], format="csr")
        Cg = sp.hstack([sp.csr_matrix(qp.C), sp.csr_matrix((mi, 2 * me)), Ii, -Ii], format="csr")
        C = sp.vstack([Cg, sp.hstack([sp.csr_matrix((ns, n)), sp.identity(ns)])], format="csr")
    else:
        H = np.zeros((n + ns, n + ns))
        H[:n, :n] = _dense(qp.H) * hessian_scale
        A = np.zeros((me, n + ns))
        A[:, :n] = _dense(qp.A).reshape(me, n)
        A[:, n : n + me] = np.eye(me)
        A[:, n + me : n + 2 * me] = -np.eye(me)
        C = np.zeros((mi + ns, n + ns))
        C[:mi, :n] = _dense(qp.C).reshape(mi, n)
        C[:mi, n + 2 * me : n + 2 * me + mi] = np.eye(mi)
        C[:mi, n + 2 * me + mi :] = -np.eye(mi)
        C[mi:, n:] = np.eye(ns)
    g = np.concatenate([np.asarray(qp.g, float) * hessian_scale, penalty * np.ones(ns)])
    lb = np.concatenate([qp.lb, np.zeros(ns)])
    ub = np.concatenate([qp.ub, np.full(ns, np.inf)])
    return ElasticQp(QpSubproblem(H, g, A, qp.b, C, lb, ub), n, penalty)
