"""Exactly anchored linear model pair with brute-force oracles.

The complex state is ``(p, v, w)``: a forward-Euler double integrator
``(p, v)`` driven by ``u_s`` plus a stable off-manifold mode ``w`` driven by
``u_w``. The simple model is the double integrator alone. Reduction drops
``(w, u_w)`` and the lift restores them from the reference (zero), so the
complex step reproduces the simple one exactly whenever ``w = u_w = 0``.

Terminal ingredients come from the discrete Riccati equation on the full
complex system: ``V_t(x) = x'Px`` and ``u_t = Kx``. The terminal set is the
maximal positively invariant polytope of ``A + BK`` inside the terminal box
and the control bounds; it is verified on a grid when the pair is built.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

from .core import Bounds, ConstraintBlock, ContractError, Dims, ModelPair, StageContext


@dataclass(frozen=True)
class TestbedParams:
    __test__ = False  # not a pytest class

    dt: float = 0.5
    a_w: float = 0.8
    b_w: float = 1.0
    p_max: float = 5.0
    v_max: float = 2.0
    w_max: float = 1.0
    us_max: float = 1.0
    uw_max: float = 1.0
    q: tuple = (1.0, 1.0, 1.0)
    r: tuple = (1.0, 1.0)
    terminal_box: float = 0.1
    terminal_set: bool = True
    grid_check: int = 9

    def __post_init__(self):
        if not abs(self.a_w) < 1:
            raise ContractError("off-manifold mode must be stable (|a_w| < 1)")
        for name in ("dt", "p_max", "v_max", "w_max", "us_max", "uw_max", "terminal_box"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")


def _system(p: TestbedParams):
    A = np.array([[1.0, p.dt, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, p.a_w]])
    B = np.array([[0.0, 0.0], [p.dt, 0.0], [0.0, p.b_w]])
    return A, B


def lqr(A, B, Q, R):
    """Infinite-horizon discrete LQR: returns ``(P, K)`` with ``u = Kx``."""
    P = sla.solve_discrete_are(A, B, Q, R)
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return P, K


def _redundant(H, h, row, rhs) -> bool:
    res = linprog(-row, A_ub=H, b_ub=h, bounds=[(None, None)] * H.shape[1], method="highs")
    return res.status == 0 and -res.fun <= rhs + 1e-9


def invariant_polytope(Acl, H0, h0, max_iter: int = 200):
    """Maximal positively invariant subset of ``{H0 x <= h0}`` under ``x+ = Acl x``."""
    H, h = H0.copy(), h0.copy()
    Ak = np.eye(Acl.shape[0])
    for _ in range(max_iter):
        Ak = Ak @ Acl
        new_rows = [(r, b) for r, b in zip(H0 @ Ak, h0) if not _redundant(H, h, r, b)]
        if not new_rows:
            return H, h
        H = np.vstack([H] + [r[None] for r, _ in new_rows])
        h = np.concatenate([h, [b for _, b in new_rows]])
    raise ContractError("invariant set iteration did not terminate")


class TestbedPair(ModelPair):
    """Linear complex/simple pair; see the module docstring."""

    __test__ = False
    name = "linear-testbed"

    def __init__(self, params: TestbedParams):
        self.params = p = params
        A, B = _system(p)
        Q, R = np.diag(p.q), np.diag(p.r)
        P, K = lqr(A, B, Q, R)
        super().__init__(Dims(3, 2, 2, 1), [0, 1], [0], Q, R, P, p.dt)
        self.A, self.B, self.P, self.K = A, B, P, K
        self.As, self.Bs = A[:2, :2], B[:2, :1]
        self.x_max = np.array([p.p_max, p.v_max, p.w_max])
        self.u_max = np.array([p.us_max, p.uw_max])
        if p.terminal_set:
            n = 3
            H0 = np.vstack([np.eye(n), -np.eye(n), K, -K])
            h0 = np.concatenate([np.full(2 * n, p.terminal_box), self.u_max, self.u_max])
            self.Ht, self.ht = invariant_polytope(A + B @ K, H0, h0)
        else:
            self.Ht, self.ht = np.zeros((0, 3)), np.zeros(0)
        if p.grid_check:
            self.verify_terminal(p.grid_check)

    # -- terminal ingredients ----------------------------------------------
    def verify_terminal(self, points: int = 9) -> dict:
        """Check terminal cost decrease and invariance on a grid of the terminal set."""
        g = np.linspace(-self.params.terminal_box, self.params.terminal_box, points)
        X = np.array(np.meshgrid(g, g, g, indexing="ij")).reshape(3, -1).T
        if len(self.ht):
            X = X[np.all(X @ self.Ht.T <= self.ht + 1e-12, axis=1)]
        Acl = self.A + self.B @ self.K
        worst_decrease = -np.inf
        worst_invariance = -np.inf
        worst_input = -np.inf
        for x in X:
            u = self.K @ x
            xn = Acl @ x
            dec = xn @ self.P @ xn - x @ self.P @ x + x @ self.Q @ x + u @ self.R @ u
            worst_decrease = max(worst_decrease, dec / (1.0 + x @ x))
            if len(self.ht):
                worst_invariance = max(worst_invariance, np.max(self.Ht @ xn - self.ht))
            worst_input = max(worst_input, np.max(np.abs(u) - self.u_max))
        report = {"points": len(X), "decrease": worst_decrease, "invariance": worst_invariance, "input": worst_input}
        if worst_decrease > 1e-9 or worst_invariance > 1e-9 or worst_input > 1e-9:
            raise ContractError(f"terminal ingredients fail the grid check: {report}")
        return report

    def terminal_control(self, x, ctx: StageContext) -> np.ndarray:
        return self.K @ np.asarray(x, dtype=float)

    # -- dynamics ----------------------------------------------------------
    def complex_dynamics(self, x, u, ctx, jac=True):
        x, u = np.atleast_2d(x), np.atleast_2d(u)
        f = x @ self.A.T + u @ self.B.T
        if not jac:
            return f, None, None
        K = len(x)
        return f, np.broadcast_to(self.A, (K, 3, 3)).copy(), np.broadcast_to(self.B, (K, 3, 2)).copy()

    def simple_dynamics(self, xs, us, ctx, jac=True):
        xs, us = np.atleast_2d(xs), np.atleast_2d(us)
        f = xs @ self.As.T + us @ self.Bs.T
        if not jac:
            return f, None, None
        K = len(xs)
        return f, np.broadcast_to(self.As, (K, 2, 2)).copy(), np.broadcast_to(self.Bs, (K, 2, 1)).copy()

    # -- constraints -------------------------------------------------------
    def _box(self, vec, K):
        v = np.broadcast_to(vec, (K, len(vec)))
        return Bounds(-v.copy(), v.copy())

    def complex_bounds(self, ctx):
        K = len(ctx)
        return self._box(self.x_max, K), self._box(self.u_max, K), Bounds(np.zeros((K, 0)), np.zeros((K, 0)))

    def simple_bounds(self, ctx):
        K = len(ctx)
        return self._box(self.x_max[:2], K), self._box(self.u_max[:1], K)

    def terminal_bounds(self, ctx):
        return self._box(self.x_max, 1)

    def _empty_rows(self, K, nx, nu, ne=0):
        z = np.zeros((K, 0))
        return ConstraintBlock(z, np.zeros(0), np.zeros(0), {"x": np.zeros((K, 0, nx)), "u": np.zeros((K, 0, nu)), "e": np.zeros((K, 0, ne))})

    def complex_rows(self, x, u, e, ctx, jac=True):
        return self._empty_rows(len(np.atleast_2d(x)), 3, 2)

    def simple_rows(self, xs, us, ctx, jac=True):
        return self._empty_rows(len(np.atleast_2d(xs)), 2, 1)

    def terminal_rows(self, x, ctx, jac=True):
        if not len(self.ht):
            return None
        x = np.atleast_2d(x)
        K = len(x)
        c = x @ self.Ht.T
        J = np.broadcast_to(self.Ht, (K,) + self.Ht.shape).copy() if jac else None
        return ConstraintBlock(c, np.full(len(self.ht), -np.inf), self.ht.copy(), {"x": J})

    def complex_violation(self, x, u, ctx):
        x, u = np.atleast_2d(x), np.atleast_2d(u)
        return {"state_box": np.abs(x) - self.x_max, "control_box": np.abs(u) - self.u_max}

    def simple_violation(self, xs, us, ctx):
        xs, us = np.atleast_2d(xs), np.atleast_2d(us)
        return {"state_box": np.abs(xs) - self.x_max[:2], "control_box": np.abs(us) - self.u_max[:1]}

    def terminal_violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        v = np.max(np.abs(x) - self.x_max)
        if len(self.ht):
            v = max(v, np.max(self.Ht @ x - self.ht))
        return float(v)


def make_testbed(params: TestbedParams | None = None) -> TestbedPair:
    """Build the testbed pair; the terminal ingredients are grid-checked."""
    return TestbedPair(params or TestbedParams())


def zero_reference(pair: TestbedPair, length: int):
    """Regulation reference: the origin held for ``length`` steps."""
    from .core import ReferenceTrajectory

    return ReferenceTrajectory(np.zeros((length + 1, 3)), np.zeros((length, 2)))


def default_grid(pair: TestbedPair, points: int = 21) -> np.ndarray:
    """Lattice over the state box, ``points`` per axis."""
    axes = [np.linspace(-m, m, points) for m in pair.x_max]
    return np.array(np.meshgrid(*axes, indexing="ij")).reshape(3, -1).T


def _condensed(pair: TestbedPair, N: int):
    """``G u <= h0 + F x0`` describing the complex OCP feasible set in ``u``."""
    A, B = pair.A, pair.B
    n, m = B.shape
    Phi = [np.linalg.matrix_power(A, i) for i in range(N + 1)]
    Gam = np.zeros((N + 1, n, N * m))
    for i in range(1, N + 1):
        for j in range(i):
            Gam[i, :, j * m : (j + 1) * m] = Phi[i - 1 - j] @ B
    rows_G, rows_h, rows_F = [], [], []
    for i in range(1, N + 1):
        for s in (1.0, -1.0):
            rows_G.append(s * Gam[i])
            rows_h.append(pair.x_max)
            rows_F.append(-s * Phi[i])
    if len(pair.ht):
        rows_G.append(pair.Ht @ Gam[N])
        rows_h.append(pair.ht)
        rows_F.append(-pair.Ht @ Phi[N])
    G = np.vstack(rows_G)
    h0 = np.concatenate(rows_h)
    F = np.vstack(rows_F)
    ub = np.tile(pair.u_max, N)
    return G, h0, F, ub


@dataclass(frozen=True)
class FeasibilityMask:
    grid: np.ndarray
    horizon: int
    feasible: np.ndarray
    solver_failed: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("# schema: feasibility-mask/1\n")
            fh.write("p,v,w,N,feasible,solver_failed\n")
            for x, f, s in zip(self.grid, self.feasible, self.solver_failed):
                fh.write(f"{x[0]:.6g},{x[1]:.6g},{x[2]:.6g},{self.horizon},{int(f)},{int(s)}\n")


def brute_force_feasible_set(pair: TestbedPair, grid, N: int) -> FeasibilityMask:
    """Solvability of the complex OCP at each grid state via an LP feasibility test.

    The OCP is condensed onto the control sequence and handed to HiGHS; this
    route shares no code with the transcription and SQP stack.
    """
    if N < 1:
        raise ContractError("N must be at least 1")
    grid = np.asarray(grid, dtype=float)
    G, h0, F, ub = _condensed(pair, N)
    bounds = list(zip(-ub, ub))
    feas = np.zeros(len(grid), dtype=bool)
    failed = np.zeros(len(grid), dtype=bool)
    c = np.zeros(G.shape[1])
    for k, x0 in enumerate(grid):
        if np.any(np.abs(x0) > pair.x_max + 1e-12):
            continue
        res = linprog(c, A_ub=G, b_ub=h0 + F @ x0, bounds=bounds, method="highs")
        if res.status == 0:
            feas[k] = True
        elif res.status != 2:
            failed[k] = True
    return FeasibilityMask(grid, N, feas, failed)


@dataclass(frozen=True)
class CandidateReport:
    states: np.ndarray
    controls: np.ndarray
    stage_feasible: np.ndarray
    terminal_in_set: bool
    cost: float

    @property
    def feasible(self) -> bool:
        return bool(np.all(self.stage_feasible) and self.terminal_in_set)


def successor_candidate(X, U, x_next, pair: TestbedPair, tol: float = 1e-9) -> CandidateReport:
    """Shifted candidate: controls ``U[1:]`` then ``K`` applied at the old terminal state.

    ``X``/``U`` are the lifted optimal states (``N+1``) and controls (``N``)
    from the previous solve and ``x_next`` the measured successor state.
    """
    X, U = np.asarray(X, dtype=float), np.asarray(U, dtype=float)
    N = len(U)
    u_new = np.vstack([U[1:], (pair.K @ X[N])[None]])
    xs = np.zeros((N + 1, 3))
    xs[0] = x_next
    for i in range(N):
        xs[i + 1] = pair.A @ xs[i] + pair.B @ u_new[i]
    ok = np.array(
        [np.all(np.abs(xs[i]) <= pair.x_max + tol) and np.all(np.abs(u_new[i]) <= pair.u_max + tol) for i in range(N)]
    )
    term = pair.terminal_violation(xs[N]) <= tol
    cost = sum(pair.stage_cost(xs[i], u_new[i], 0.0, 0.0) for i in range(N)) + pair.terminal_cost(xs[N], 0.0)
    return CandidateReport(xs, u_new, ok, bool(term), float(cost))
