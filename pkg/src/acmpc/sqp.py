"""Sequential quadratic programming for the transcribed OCP.

Each iteration linearizes the constraints, solves a convex QP with the
constant Gauss-Newton Hessian of the tracking cost, and backtracks until a
filter over (objective, ``l1`` violation) pairs accepts the step. The older
``l1`` merit test ``f + nu * ||violation||_1`` remains selectable; with
nearly degenerate rows its penalty grows large enough to stall the search. When the QP is
infeasible an elastic QP (``l1``-penalized slacks on every row) is solved
instead; a run that cannot drive the elastic slacks to zero is reported as
infeasible.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .ocp import Guess, OcpProblem
from .qp import QpStatus, QpSubproblem, elastic, qp_solve


class Status(enum.Enum):
    CONVERGED = "Converged"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"
    NUMERIC_FAILURE = "NumericFailure"


class HessianMode(enum.Enum):
    GAUSS_NEWTON = "GaussNewton"
    EXACT_REGULARIZED = "ExactRegularized"


@dataclass(frozen=True)
class SqpSettings:
    kkt_tol: float = 1e-6
    feas_tol: float = 1e-6
    max_iter: int = 50
    hessian: HessianMode = HessianMode.GAUSS_NEWTON
    reg_min: float = 1e-8
    merit_penalty_growth: float = 10.0
    ls_backtrack: float = 0.5
    ls_min_step: float = 1e-6
    armijo: float = 1e-4
    penalty_max: float = 1e8
    qp_backend: str = "auto"
    step_tol: float = 1e-10
    second_order: bool = True
    globalization: str = "filter"

    def __post_init__(self):
        if self.kkt_tol <= 0 or self.feas_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.ls_backtrack < 1:
            raise ValueError("ls_backtrack must lie in (0, 1)")
        if self.hessian is not HessianMode.GAUSS_NEWTON:
            raise ValueError("only the Gauss-Newton Hessian is implemented")
        if self.globalization not in ("filter", "merit"):
            raise ValueError("globalization must be 'filter' or 'merit'")


@dataclass
class SolverResult:
    primal: np.ndarray
    duals: tuple
    status: Status
    kkt_residual: float
    iterations: int
    wall_time: float
    max_violation: float = np.inf
    objective: float = np.nan
    elastic_used: bool = False
    active: tuple | None = None
    log: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED


class _QpBuilder:
    """Maps the NLP linearization onto the QP row format.

    Rows with equal bounds become equalities; finite variable bounds become
    identity rows appended after the constraint rows.
    """

    def __init__(self, prob: OcpProblem, reg_min: float):
        self.prob = prob
        self.eq_c = np.flatnonzero(prob.cl == prob.cu)
        self.in_c = np.flatnonzero(prob.cl != prob.cu)
        fixed = np.isfinite(prob.zl) & (prob.zl == prob.zu)
        self.eq_z = np.flatnonzero(fixed)
        self.in_z = np.flatnonzero(~fixed & (np.isfinite(prob.zl) | np.isfinite(prob.zu)))
        H = sp.csc_matrix(prob.hessian())
        dg = H.diagonal()
        pad = np.where(dg <= 0, reg_min, 0.0)
        self.H = (H + sp.diags(pad)).tocsc()
        n = prob.n
        self.Ez = sp.csr_matrix((np.ones(len(self.eq_z)), (np.arange(len(self.eq_z)), self.eq_z)), shape=(len(self.eq_z), n))
        self.Iz = sp.csr_matrix((np.ones(len(self.in_z)), (np.arange(len(self.in_z)), self.in_z)), shape=(len(self.in_z), n))
        self.dense = n <= 400

    def build(self, z, c, J, g) -> QpSubproblem:
        p = self.prob
        A = sp.vstack([J[self.eq_c], self.Ez], format="csr")
        b = np.concatenate([p.cl[self.eq_c] - c[self.eq_c], p.zl[self.eq_z] - z[self.eq_z]])
        C = sp.vstack([J[self.in_c], self.Iz], format="csr")
        lb = np.concatenate([p.cl[self.in_c] - c[self.in_c], p.zl[self.in_z] - z[self.in_z]])
        ub = np.concatenate([p.cu[self.in_c] - c[self.in_c], p.zu[self.in_z] - z[self.in_z]])
        if self.dense:
            return QpSubproblem(self.H.toarray(), g, A.toarray(), b, C.toarray(), lb, ub)
        return QpSubproblem(self.H, g, A, b, C, lb, ub)

    def duals(self, y, lam):
        """Split QP multipliers into constraint-row and bound multipliers."""
        p = self.prob
        lc = np.zeros(p.m)
        lz = np.zeros(p.n)
        ne = len(self.eq_c)
        lc[self.eq_c] = y[:ne]
        lz[self.eq_z] = y[ne:]
        ni = len(self.in_c)
        lc[self.in_c] = lam[:ni]
        lz[self.in_z] = lam[ni:]
        return lc, lz


def _l1_violation(prob: OcpProblem, z, c) -> float:
    return float(
        np.sum(np.maximum(prob.cl - c, 0.0))
        + np.sum(np.maximum(c - prob.cu, 0.0))
        + np.sum(np.maximum(prob.zl - z, 0.0))
        + np.sum(np.maximum(z - prob.zu, 0.0))
    )


def _inf_violation(prob: OcpProblem, z, c) -> float:
    return float(
        max(
            np.max(prob.cl - c, initial=0.0),
            np.max(c - prob.cu, initial=0.0),
            np.max(prob.zl - z, initial=0.0),
            np.max(z - prob.zu, initial=0.0),
        )
    )


def kkt_residual(prob: OcpProblem, z, lam_c, lam_z, c=None, J=None) -> float:
    """Scaled stationarity residual ``|grad f + J'lam_c + lam_z| / (1 + |grad f|)``."""
    if J is None:
        c, J = prob.evaluate(z)
    g = prob.gradient(z)
    stat = g + J.T @ lam_c + lam_z
    return float(np.max(np.abs(stat), initial=0.0) / (1.0 + np.max(np.abs(g), initial=0.0)))


def solve(problem: OcpProblem, init: Guess | None = None, settings: SqpSettings | None = None, verbose: bool = False) -> SolverResult:
    """Run SQP from ``init`` (defaults to the reference guess)."""
    settings = settings or SqpSettings()
    t0 = time.perf_counter()
    init = init or problem.reference_guess()
    z = np.array(init.z, dtype=float, copy=True)
    lam_c = np.zeros(problem.m) if init.lam_c is None else np.array(init.lam_c, dtype=float)
    lam_z = np.zeros(problem.n) if init.lam_z is None else np.array(init.lam_z, dtype=float)
    builder = _QpBuilder(problem, settings.reg_min)
    nu = max(1.0, 1.1 * max(np.max(np.abs(lam_c), initial=0.0), np.max(np.abs(lam_z), initial=0.0)))
    active = getattr(init, "active", None)
    filt = []
    theta_max = theta_min = None
    log = []
    elastic_used = False
    status = Status.MAX_ITER
    kkt = np.inf
    it = 0

    def merit(zz, cc, pen):
        return problem.objective(zz) + pen * _l1_violation(problem, zz, cc)

    c, J = problem.evaluate(z)
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(z))):
        return SolverResult(z, (lam_c, lam_z), Status.NUMERIC_FAILURE, np.inf, 0, time.perf_counter() - t0)
    while True:
        g = problem.gradient(z)
        viol = _inf_violation(problem, z, c)
        kkt = kkt_residual(problem, z, lam_c, lam_z, c, J)
        if it > 0 and kkt <= settings.kkt_tol and viol <= settings.feas_tol:
            status = Status.CONVERGED
            break
        if it >= settings.max_iter:
            status = Status.MAX_ITER
            break
        it += 1
        qp = builder.build(z, c, J, g)
        res = qp_solve(qp, warm=active, backend=settings.qp_backend)
        used_elastic = False
        if res.status is not QpStatus.OPTIMAL:
            el = elastic(qp, nu)
            res = qp_solve(el.qp, backend=settings.qp_backend)
            if res.status is not QpStatus.OPTIMAL and settings.qp_backend != "sparse":
                res = qp_solve(el.qp, backend="sparse")
            if res.status is not QpStatus.OPTIMAL:
                status = Status.NUMERIC_FAILURE
                break
            used_elastic = elastic_used = True
            d = el.split(res.x)
            slack = el.infeasibility(res.x)
            y = res.y
            lam = res.lam[: qp.m_in]
        else:
            d = res.x
            slack = 0.0
            y, lam = res.y, res.lam
            active = res.active if res.active else None
        if not np.all(np.isfinite(d)):
            status = Status.NUMERIC_FAILURE
            break
        lc_qp, lz_qp = builder.duals(y, lam)
        if not used_elastic and viol <= settings.feas_tol:
            # the QP multipliers may certify the current point even when the
            # step only moves along flat directions of the model
            kkt_qp = kkt_residual(problem, z, lc_qp, lz_qp, c, J)
            if kkt_qp <= settings.kkt_tol:
                # prefer the full step when it keeps the certificate: it removes
                # the residual infeasibility a shifted warm start carries
                zt = z + d
                ct, Jt = problem.evaluate(zt)
                alpha = 0.0
                if np.all(np.isfinite(ct)) and _inf_violation(problem, zt, ct) <= viol:
                    kkt_t = kkt_residual(problem, zt, lc_qp, lz_qp, ct, Jt)
                    if kkt_t <= settings.kkt_tol:
                        z, c, J, kkt_qp, alpha = zt, ct, Jt, kkt_t, 1.0
                lam_c, lam_z, kkt = lc_qp, lz_qp, kkt_qp
                status = Status.CONVERGED
                log.append({"iter": it, "merit": merit(z, c, nu), "alpha": alpha, "kkt": kkt, "penalty": nu,
                            "elastic": False, "qp_certified": True})
                break
        lam_max = 1.1 * max(np.max(np.abs(lc_qp), initial=0.0), np.max(np.abs(lz_qp), initial=0.0))
        # the penalty follows the current multipliers; it may relax by 10x per
        # iteration so stale large values do not freeze the line search
        nu = max(nu, lam_max) if used_elastic else max(1.0, lam_max, 0.1 * nu)
        step_norm = float(np.max(np.abs(d), initial=0.0))
        # elastic stationarity: the step is negligible or the linearization
        # cannot reduce the violation at this penalty
        stalled = step_norm <= settings.step_tol * (1.0 + np.max(np.abs(z))) or slack >= (1.0 - 1e-6) * viol
        if used_elastic and stalled:
            if nu >= settings.penalty_max:
                status = Status.INFEASIBLE
                break
            nu = min(nu * settings.merit_penalty_growth, settings.penalty_max)
            log.append({"iter": it, "merit": np.nan, "alpha": 0.0, "kkt": kkt, "penalty": nu, "elastic": True})
            continue
        phi0 = merit(z, c, nu)
        viol0 = _l1_violation(problem, z, c)
        f0 = problem.objective(z)
        gd = float(g @ d)
        if settings.globalization == "merit":
            lin = c + J @ d
            lin_viol = float(
                np.sum(np.maximum(problem.cl - lin, 0.0))
                + np.sum(np.maximum(lin - problem.cu, 0.0))
                + np.sum(np.maximum(problem.zl - z - d, 0.0))
                + np.sum(np.maximum(z + d - problem.zu, 0.0))
            )
            D = gd + nu * (lin_viol - viol0)
            if D > 0:
                D = -0.5 * float(d @ (builder.H @ d))

            def acceptable(zt, ct, a):
                return merit(zt, ct, nu) <= phi0 + settings.armijo * a * D + 1e-14 * (1.0 + abs(phi0))
        else:
            if theta_max is None:
                theta_max = 1e4 * max(1.0, viol0)
                theta_min = 1e-4 * max(1.0, viol0)
            switching = gd < 0.0

            def acceptable(zt, ct, a):
                th, ft = _l1_violation(problem, zt, ct), problem.objective(zt)
                if th > theta_max:
                    return False
                for th_j, f_j in filt:
                    if th >= th_j and ft >= f_j:
                        return False
                if switching and viol0 <= theta_min and a * (-gd) ** 2.3 > viol0 ** 1.1:
                    return ft <= f0 + settings.armijo * a * gd + 1e-14 * (1.0 + abs(f0))
                return th <= (1.0 - 1e-5) * viol0 or ft <= f0 - 1e-5 * viol0
        alpha = 1.0
        accepted = False
        soc = False
        while alpha >= settings.ls_min_step:
            zt = z + alpha * d
            ct = problem.constraints(zt)
            if np.all(np.isfinite(ct)) and acceptable(zt, ct, alpha):
                accepted = True
                break
            if alpha == 1.0 and settings.second_order and not used_elastic and np.all(np.isfinite(ct)):
                # second-order correction: re-solve with the constraint curvature of the full step
                res2 = qp_solve(builder.build(z, ct - J @ d, J, g), warm=active, backend=settings.qp_backend)
                if res2.status is QpStatus.OPTIMAL and np.all(np.isfinite(res2.x)):
                    z2 = z + res2.x
                    c2 = problem.constraints(z2)
                    if np.all(np.isfinite(c2)) and acceptable(z2, c2, 1.0):
                        zt, ct, accepted, soc = z2, c2, True, True
                        lc_qp, lz_qp = builder.duals(res2.y, res2.lam)
                        break
            alpha *= settings.ls_backtrack
        if not accepted:
            # accept the shortest step to keep progressing; flagged in the log
            alpha = settings.ls_min_step
            zt = z + alpha * d
            ct = problem.constraints(zt)
        elif settings.globalization == "filter":
            f_type = switching and viol0 <= theta_min and problem.objective(zt) < f0
            if not f_type:
                filt.append(((1.0 - 1e-5) * viol0, f0 - 1e-5 * viol0))
        phit = merit(zt, ct, nu)
        z = zt
        lam_c = lam_c + alpha * (lc_qp - lam_c)
        lam_z = lam_z + alpha * (lz_qp - lam_z)
        c, J = problem.evaluate(z)
        if not np.all(np.isfinite(c)):
            status = Status.NUMERIC_FAILURE
            break
        entry = {
            "iter": it,
            "merit_before": phi0,
            "merit": phit,
            "alpha": alpha,
            "kkt": kkt,
            "penalty": nu,
            "elastic": used_elastic,
            "slack": slack,
            "accepted": accepted,
            "soc": soc,
            "qp_iters": res.iterations,
        }
        log.append(entry)
        if verbose:
            print(
                f"  sqp it={it:2d} merit={phit:.6e} alpha={alpha:.3g} kkt={kkt:.2e} "
                f"viol={_inf_violation(problem, z, c):.2e}{' elastic' if used_elastic else ''}"
            )
        if alpha == 1.0 and step_norm <= settings.step_tol * (1.0 + np.max(np.abs(z))) and _inf_violation(problem, z, c) <= settings.feas_tol:
            kkt = kkt_residual(problem, z, lam_c, lam_z, c, J)
            status = Status.CONVERGED if kkt <= max(settings.kkt_tol, 1e-6) else Status.MAX_ITER
            break
    viol = _inf_violation(problem, z, c)
    if status is Status.MAX_ITER and viol > settings.feas_tol and elastic_used:
        status = Status.INFEASIBLE
    return SolverResult(
        primal=z,
        duals=(lam_c, lam_z),
        status=status,
        kkt_residual=kkt,
        iterations=it,
        wall_time=time.perf_counter() - t0,
        max_violation=viol,
        objective=problem.objective(z),
        elastic_used=elastic_used,
        active=active,
        log=log,
    )


def check_derivatives(problem: OcpProblem, point, h: float = 1e-6) -> float:
    """Largest relative error between analytic and central-difference derivatives.

    Covers the constraint Jacobian and the cost gradient. The relative error
    of an entry is ``|a - fd| / max(1, |fd|)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    z = np.asarray(point, dtype=float)
    _, J = problem.evaluate(z)
    J = J.toarray()
    g = problem.gradient(z)
    Jfd = np.zeros_like(J)
    gfd = np.zeros_like(g)
    for k in range(problem.n):
        e = np.zeros(problem.n)
        e[k] = h
        cp, cm = problem.constraints(z + e), problem.constraints(z - e)
        Jfd[:, k] = (cp - cm) / (2 * h)
        gfd[k] = (problem.objective(z + e) - problem.objective(z - e)) / (2 * h)
    err_j = np.max(np.abs(J - Jfd) / np.maximum(1.0, np.abs(Jfd)), initial=0.0)
    err_g = np.max(np.abs(g - gfd) / np.maximum(1.0, np.abs(gfd)), initial=0.0)
    return float(max(err_j, err_g))
