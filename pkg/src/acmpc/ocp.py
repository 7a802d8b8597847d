"""Transcription of the adaptive optimal control problem.

States and controls at every horizon index are decision variables and the
dynamics appear as equality defects (simultaneous transcription). An index
``i`` in the simplicity set carries simple-space variables; all other
indices carry complex-space variables plus any model-specific extra
variables (joint slacks for the legged pair). The defect from ``i`` to
``i+1`` uses one of four forms depending on the spaces of the two ends:

=========  ===========  ====================================
i          i+1          successor
=========  ===========  ====================================
complex    complex      ``f_c(z_i)``
complex    simple       ``psi_x(f_c(z_i))`` plus manifold-entry rows
simple     complex      ``f_c(psi_dag(z_i))``
simple     simple       ``f_s(z_i)``
=========  ===========  ====================================

The manifold-entry rows pin the discarded components of ``f_c(z_i)`` to the
reference at ``i+1`` so that the lifted prediction equals the complex
rollout. With an empty simplicity set no such rows exist and the problem is
the plain complex OCP.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import ContractError, ModelPair, RefWindow, SpaceTag, StagePair
from .simplicity import SimplicitySet


@dataclass(frozen=True)
class AdaptiveTrajectory:
    """Mixed-dimension trajectory: stage ``i`` is simple iff ``i`` is in ``simplicity``."""

    stages: tuple
    terminal_state: np.ndarray
    simplicity: SimplicitySet

    def __post_init__(self):
        if len(self.stages) != self.simplicity.horizon:
            raise ContractError("stage count must equal the horizon")
        for i, z in enumerate(self.stages):
            want = SpaceTag.SIMPLE if i in self.simplicity else SpaceTag.COMPLEX
            if z.space is not want:
                raise ContractError(f"stage {i} tagged {z.space.value}, expected {want.value}")


@dataclass
class Guess:
    """Primal/dual starting point for the NLP."""

    z: np.ndarray
    lam_c: np.ndarray | None = None
    lam_z: np.ndarray | None = None
    active: tuple | None = None


class _Jac:
    """Precomputed COO-to-CSR scatter for a fixed block sparsity pattern."""

    def __init__(self, rows, cols, shape):
        self.shape = shape
        nnz = len(rows)
        probe = sp.csr_matrix((np.arange(1, nnz + 1, dtype=float), (rows, cols)), shape=shape)
        probe.sort_indices()
        self.indptr = probe.indptr
        self.indices = probe.indices
        self.perm = probe.data.astype(np.int64) - 1

    def build(self, data):
        return sp.csr_matrix((data[self.perm], self.indices, self.indptr), shape=self.shape)


def _block_index(row_off, col_off, m, n, mask=None):
    r = (np.asarray(row_off)[:, None, None] + np.arange(m)[None, :, None]) + np.zeros((1, 1, n), int)
    c = (np.asarray(col_off)[:, None, None] + np.arange(n)[None, None, :]) + np.zeros((1, m, 1), int)
    if mask is not None:
        return r[:, mask].ravel(), c[:, mask].ravel()
    return r.ravel(), c.ravel()


def _case_patterns(pair: ModelPair, si: bool, sj: bool):
    """Structural masks of the state and control Jacobians of one dynamics case."""
    Am, Bm = pair.dynamics_pattern()
    kx, ku, kn = pair.x_keep, pair.u_keep, pair.x_null
    if si and sj:
        return Am[np.ix_(kx, kx)], Bm[np.ix_(kx, ku)]
    if si:
        return Am[:, kx], Bm[:, ku]
    if sj:
        return np.vstack([Am[kx], Am[kn]]), np.vstack([Bm[kx], Bm[kn]])
    return Am, Bm


class OcpProblem:
    """Adaptive OCP as a sparse NLP ``min f(z)  s.t.  cl <= c(z) <= cu,  zl <= z <= zu``.

    The cost is quadratic with a constant Hessian, so ``hessian()`` is exact.
    Row groups are recorded in ``row_blocks`` and variable groups in
    ``var_blocks`` for warm-start shifting and debugging.
    """

    def __init__(self, pair: ModelPair, S: SimplicitySet, x0, window: RefWindow):
        N = window.horizon
        if S.horizon != N:
            raise ContractError("simplicity set horizon differs from the window horizon")
        if not S.respects_range():
            raise ContractError("simplicity set must lie within 1..N-1")
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (pair.dims.n_xc,) or not np.all(np.isfinite(x0)):
            raise ContractError("x0 must be a finite complex state")
        self.pair, self.S, self.x0, self.window, self.N = pair, S, x0, window, N
        d = pair.dims
        simple = S.mask()
        self.simple = simple
        # variable layout
        off = 0
        self.ox, self.ou, self.oe = np.zeros(N + 1, int), np.zeros(N, int), np.zeros(N, int)
        self.nx, self.nu, self.ne = np.zeros(N + 1, int), np.zeros(N, int), np.zeros(N, int)
        self.var_blocks = {}
        for i in range(N):
            nx, nu = (d.n_xs, d.n_us) if simple[i] else (d.n_xc, d.n_uc)
            ne = 0 if simple[i] else d.n_e
            self.ox[i], self.nx[i] = off, nx
            self.ou[i], self.nu[i] = off + nx, nu
            self.oe[i], self.ne[i] = off + nx + nu, ne
            self.var_blocks[("x", i)] = (off, nx, bool(simple[i]))
            self.var_blocks[("u", i)] = (off + nx, nu, bool(simple[i]))
            if ne:
                self.var_blocks[("e", i)] = (off + nx + nu, ne, False)
            off += nx + nu + ne
        self.ox[N], self.nx[N] = off, d.n_xc
        self.var_blocks[("x", N)] = (off, d.n_xc, False)
        off += d.n_xc
        self.n = off
        self.Ic = np.flatnonzero(~simple[:N])
        self.Is = np.flatnonzero(simple[:N])
        cases = {}
        for i in range(N):
            cases.setdefault((bool(simple[i]), bool(simple[i + 1])), []).append(i)
        self.cases = {k: np.array(v) for k, v in cases.items()}
        self._build_rows()
        self._build_bounds()
        self._build_cost()

    # -- structure ---------------------------------------------------------
    def _build_rows(self):
        pair, N, d = self.pair, self.N, self.pair.dims
        w = self.window
        blocks = []  # (row_off array, col_off array, m, n, key)
        self.row_blocks = {}
        r = 0
        cl, cu = [], []
        # initial pin
        self.row_blocks[("init",)] = (r, d.n_xc)
        blocks.append((np.array([r]), np.array([self.ox[0]]), d.n_xc, d.n_xc, "init"))
        cl.append(self.x0)
        cu.append(self.x0)
        r += d.n_xc
        # dynamics: one row block per index, ordered by index
        self.dyn_rows = {}
        n_null = d.n_xc - d.n_xs
        for i in range(N):
            si, sj = bool(self.simple[i]), bool(self.simple[i + 1])
            m = self.nx[i + 1] + (n_null if (not si and sj) else 0)
            self.row_blocks[("dyn", i)] = (r, m)
            self.dyn_rows[i] = r
            lo = np.zeros(m)
            if not si and sj:
                lo[self.nx[i + 1] :] = w.stage(i + 1).state[pair.x_null]
            cl.append(lo)
            cu.append(lo)
            r += m
        self.masks = {}
        for (si, sj), idx in self.cases.items():
            ro = np.array([self.dyn_rows[i] for i in idx])
            mk = d.n_xs if sj else d.n_xc
            blocks.append((ro, self.ox[idx + 1], mk, mk, ("succ", si, sj)))
            m = mk + (n_null if (not si and sj) else 0)
            Am, Bm = _case_patterns(pair, si, sj)
            self.masks[("dx", si, sj)] = Am
            self.masks[("du", si, sj)] = Bm
            blocks.append((ro, self.ox[idx], m, d.n_xs if si else d.n_xc, ("dx", si, sj)))
            blocks.append((ro, self.ou[idx], m, d.n_us if si else d.n_uc, ("du", si, sj)))
        # path rows
        self.path = {}
        for simple_flag, idx in ((False, self.Ic), (True, self.Is)):
            if len(idx) == 0:
                continue
            probe = self._path_eval(simple_flag, idx[:1], self._ref_guess(idx[:1], simple_flag), jac=False)
            m = probe.m
            if m == 0:
                continue
            ro = r + m * np.arange(len(idx))
            for j, i in enumerate(idx):
                self.row_blocks[("path", int(i))] = (int(ro[j]), m)
            self.path[simple_flag] = (idx, ro, m)
            nx = d.n_xs if simple_flag else d.n_xc
            nu = d.n_us if simple_flag else d.n_uc
            pat = pair.row_pattern(simple_flag)
            if pat is not None:
                for var in ("x", "u", "e"):
                    if var in pat:
                        self.masks[("p" + var, simple_flag)] = np.asarray(pat[var], bool).reshape(m, -1)
            blocks.append((ro, self.ox[idx], m, nx, ("px", simple_flag)))
            blocks.append((ro, self.ou[idx], m, nu, ("pu", simple_flag)))
            if not simple_flag and d.n_e:
                blocks.append((ro, self.oe[idx], m, d.n_e, ("pe", simple_flag)))
            full = self._path_eval(simple_flag, idx, self._ref_guess(idx, simple_flag), jac=False)
            cl.append(np.broadcast_to(full.lb, full.c.shape).ravel())
            cu.append(np.broadcast_to(full.ub, full.c.shape).ravel())
            r += m * len(idx)
        # terminal rows
        self.term_m = 0
        tr = pair.terminal_rows(w.stage(N).state[None], w.at(N), jac=False)
        if tr is not None and tr.m:
            self.term_m = tr.m
            self.row_blocks[("term",)] = (r, tr.m)
            blocks.append((np.array([r]), np.array([self.ox[N]]), tr.m, d.n_xc, "term"))
            cl.append(np.broadcast_to(tr.lb, tr.c.shape).ravel())
            cu.append(np.broadcast_to(tr.ub, tr.c.shape).ravel())
            self.term_row = r
            r += tr.m
        self.m = r
        self.cl = np.concatenate(cl)
        self.cu = np.concatenate(cu)
        self._blocks = blocks
        rows, cols = zip(*[_block_index(b[0], b[1], b[2], b[3], self.masks.get(b[4])) for b in blocks])
        self._jac = _Jac(np.concatenate(rows), np.concatenate(cols), (self.m, self.n))

    def _ref_guess(self, idx, simple_flag):
        ctx = self.window.at(idx)
        if simple_flag:
            return ctx, self.pair.psi_x(ctx.x_ref), self.pair.psi_u(ctx.u_ref), None
        e = self.pair.extra_guess(ctx.x_ref, ctx.u_ref, ctx)
        return ctx, ctx.x_ref, ctx.u_ref, e

    def _path_eval(self, simple_flag, idx, parts, jac=True):
        ctx, x, u, e = parts
        if simple_flag:
            return self.pair.simple_rows(x, u, ctx, jac=jac)
        return self.pair.complex_rows(x, u, e, ctx, jac=jac)

    def _build_bounds(self):
        zl = np.full(self.n, -np.inf)
        zu = np.full(self.n, np.inf)
        pair = self.pair
        for simple_flag, idx in ((False, self.Ic), (True, self.Is)):
            if len(idx) == 0:
                continue
            ctx = self.window.at(idx)
            if simple_flag:
                bx, bu = pair.simple_bounds(ctx)
                be = None
            else:
                bx, bu, be = pair.complex_bounds(ctx)
            for j, i in enumerate(idx):
                # x_0 is pinned by the initial rows; bounds there are redundant at best
                if i > 0:
                    sl = slice(self.ox[i], self.ox[i] + self.nx[i])
                    zl[sl], zu[sl] = bx.lower[j], bx.upper[j]
                sl = slice(self.ou[i], self.ou[i] + self.nu[i])
                zl[sl], zu[sl] = bu.lower[j], bu.upper[j]
                if be is not None and self.ne[i]:
                    sl = slice(self.oe[i], self.oe[i] + self.ne[i])
                    zl[sl], zu[sl] = be.lower[j], be.upper[j]
        bt = pair.terminal_bounds(self.window.at(self.N))
        sl = slice(self.ox[self.N], self.ox[self.N] + self.nx[self.N])
        zl[sl], zu[sl] = bt.lower[0], bt.upper[0]
        self.zl, self.zu = zl, zu

    def _build_cost(self):
        pair, w = self.pair, self.window
        kx, ku = pair.x_keep, pair.u_keep
        diag_blocks = []
        zr = np.zeros(self.n)
        for i in range(self.N):
            st = w.stage(i)
            if self.simple[i]:
                Qi, Ri = pair.Q[np.ix_(kx, kx)], pair.R[np.ix_(ku, ku)]
                xr, ur = st.state[kx], st.control[ku]
            else:
                Qi, Ri = pair.Q, pair.R
                xr, ur = st.state, st.control
            diag_blocks += [2 * Qi, 2 * Ri]
            if self.ne[i]:
                diag_blocks.append(sp.csr_matrix((self.ne[i], self.ne[i])))
            zr[self.ox[i] : self.ox[i] + self.nx[i]] = xr
            zr[self.ou[i] : self.ou[i] + self.nu[i]] = ur
        diag_blocks.append(2 * pair.Qt)
        zr[self.ox[self.N] :] = w.stage(self.N).state
        self.H = sp.block_diag(diag_blocks, format="csc")
        self.z_ref = zr

    # -- unpacking ---------------------------------------------------------
    def split(self, z):
        """Per-index ``(x, u, e)`` views and the terminal state."""
        out = []
        for i in range(self.N):
            out.append(
                (
                    z[self.ox[i] : self.ox[i] + self.nx[i]],
                    z[self.ou[i] : self.ou[i] + self.nu[i]],
                    z[self.oe[i] : self.oe[i] + self.ne[i]],
                )
            )
        return out, z[self.ox[self.N] : self.ox[self.N] + self.nx[self.N]]

    def _gather(self, z, idx, which):
        off, size = {"x": (self.ox, self.nx), "u": (self.ou, self.nu), "e": (self.oe, self.ne)}[which]
        if len(idx) == 0:
            return np.zeros((0, 0))
        n = size[idx[0]]
        return z[off[idx][:, None] + np.arange(n)[None, :]]

    def trajectory(self, z) -> AdaptiveTrajectory:
        stages, xN = self.split(z)
        tagged = tuple(
            StagePair(x, u, SpaceTag.SIMPLE if self.simple[i] else SpaceTag.COMPLEX)
            for i, (x, u, _) in enumerate(stages)
        )
        return AdaptiveTrajectory(tagged, xN.copy(), self.S)

    def extras(self, z) -> dict:
        """Extra complex-stage variables keyed by index."""
        return {int(i): z[self.oe[i] : self.oe[i] + self.ne[i]].copy() for i in self.Ic if self.ne[i]}

    # -- NLP functions -----------------------------------------------------
    def objective(self, z) -> float:
        dz = z - self.z_ref
        return 0.5 * float(dz @ (self.H @ dz))

    def gradient(self, z) -> np.ndarray:
        return self.H @ (z - self.z_ref)

    def hessian(self):
        return self.H

    def evaluate(self, z, jac: bool = True):
        """Constraint values and (optionally) the sparse Jacobian."""
        pair, w, d = self.pair, self.window, self.pair.dims
        c = np.empty(self.m)
        data = []
        c[: d.n_xc] = z[self.ox[0] : self.ox[0] + d.n_xc]
        if jac:
            data.append(np.eye(d.n_xc).ravel())
        # dynamics, grouped by case in the same order as the structure
        kx, ku = pair.x_keep, pair.u_keep
        for (si, sj), idx in self.cases.items():
            ctx = w.at(idx)
            X = self._gather(z, idx, "x")
            U = self._gather(z, idx, "u")
            Xn = self._gather(z, idx + 1, "x")
            if si and sj:
                F, A, B = pair.simple_dynamics(X, U, ctx, jac=jac)
            elif si:
                F, A, B = pair.complex_dynamics(pair.psi_dag_x(X, ctx.x_ref), pair.psi_dag_u(U, ctx.u_ref), ctx, jac=jac)
                if jac:
                    A, B = A[:, :, kx], B[:, :, ku]
            else:
                F, A, B = pair.complex_dynamics(X, U, ctx, jac=jac)
            if sj and not si:
                vals = np.concatenate([Xn - F[:, kx], F[:, pair.x_null]], axis=1)
                if jac:
                    A = np.concatenate([-A[:, kx], A[:, pair.x_null]], axis=1)
                    B = np.concatenate([-B[:, kx], B[:, pair.x_null]], axis=1)
            else:
                vals = Xn - F
                if jac:
                    A, B = -A, -B
            ro = np.array([self.dyn_rows[i] for i in idx])
            c[ro[:, None] + np.arange(vals.shape[1])[None, :]] = vals
            if jac:
                mk = Xn.shape[1]
                data.append(np.broadcast_to(np.eye(mk), (len(idx), mk, mk)).ravel())
                data.append(self._masked(A, ("dx", si, sj)))
                data.append(self._masked(B, ("du", si, sj)))
        for simple_flag in (False, True):
            if simple_flag not in self.path:
                continue
            idx, ro, m = self.path[simple_flag]
            ctx = w.at(idx)
            X = self._gather(z, idx, "x")
            U = self._gather(z, idx, "u")
            E = self._gather(z, idx, "e") if (not simple_flag and d.n_e) else None
            blk = self._path_eval(simple_flag, idx, (ctx, X, U, E), jac=jac)
            c[ro[0] : ro[0] + m * len(idx)] = blk.c.ravel()
            if jac:
                data.append(self._masked(blk.jac["x"], ("px", simple_flag)))
                data.append(self._masked(blk.jac["u"], ("pu", simple_flag)))
                if E is not None:
                    data.append(self._masked(blk.jac["e"], ("pe", simple_flag)))
        if self.term_m:
            xN = z[self.ox[self.N] :][None]
            tr = pair.terminal_rows(xN, w.at(self.N), jac=jac)
            c[self.term_row : self.term_row + self.term_m] = tr.c.ravel()
            if jac:
                data.append(tr.jac["x"].ravel())
        J = self._jac.build(np.concatenate(data)) if jac else None
        return c, J

    def _masked(self, blk, key):
        mask = self.masks.get(key)
        return blk.ravel() if mask is None else blk[:, mask].ravel()

    def constraints(self, z) -> np.ndarray:
        return self.evaluate(z, jac=False)[0]

    def jacobian(self, z):
        return self.evaluate(z, jac=True)[1]

    def violation(self, z) -> float:
        """Largest violation of rows and variable bounds."""
        c = self.constraints(z)
        return float(
            max(
                np.max(self.cl - c, initial=0.0),
                np.max(c - self.cu, initial=0.0),
                np.max(self.zl - z, initial=0.0),
                np.max(z - self.zu, initial=0.0),
            )
        )

    # -- initial guesses ---------------------------------------------------
    def reference_guess(self) -> Guess:
        """Reference rows as the starting point, with ``x_0`` set to the measured state."""
        z = np.zeros(self.n)
        pair, w = self.pair, self.window
        for i in range(self.N):
            st = w.stage(i)
            x = self.x0 if i == 0 else st.state
            if self.simple[i]:
                z[self.ox[i] : self.ox[i] + self.nx[i]] = pair.psi_x(x)
                z[self.ou[i] : self.ou[i] + self.nu[i]] = pair.psi_u(st.control)
            else:
                z[self.ox[i] : self.ox[i] + self.nx[i]] = x
                z[self.ou[i] : self.ou[i] + self.nu[i]] = st.control
                if self.ne[i]:
                    z[self.oe[i] : self.oe[i] + self.ne[i]] = pair.extra_guess(x[None], st.control[None], w.at(i))[0]
        z[self.ox[self.N] :] = w.stage(self.N).state
        return Guess(z)

    def debug_dump(self, path) -> None:
        """Write dimensions, bounds and sparsity in a plain structured text file."""
        J = self.jacobian(self.reference_guess().z)
        info = {
            "n": int(self.n),
            "m": int(self.m),
            "horizon": int(self.N),
            "simplicity": list(self.S.indices),
            "nnz_jacobian": int(J.nnz),
            "nnz_hessian": int(self.H.nnz),
            "var_blocks": {f"{k[0]}{k[1]}": list(map(int, v[:2])) for k, v in self.var_blocks.items()},
            "row_blocks": {"_".join(map(str, k)): list(map(int, v)) for k, v in self.row_blocks.items()},
            "zl": [_num(v) for v in self.zl],
            "zu": [_num(v) for v in self.zu],
            "cl": [_num(v) for v in self.cl],
            "cu": [_num(v) for v in self.cu],
        }
        with open(path, "w") as fh:
            json.dump(info, fh, indent=1)


def _num(v):
    return None if not np.isfinite(v) else float(v)


def assemble(pair: ModelPair, S: SimplicitySet, x0, window: RefWindow, N_a: int | None = None) -> OcpProblem:
    """Build the adaptive OCP for measured state ``x0`` over ``window``."""
    if N_a is not None and N_a != window.horizon:
        raise ContractError(f"reference window covers horizon {window.horizon}, not {N_a}")
    return OcpProblem(pair, S, x0, window)


def lift_solution(traj: AdaptiveTrajectory, window: RefWindow, pair: ModelPair) -> list:
    """Complex-space view: simple stages are lifted with the per-index reference."""
    out = []
    for i, z in enumerate(traj.stages):
        if z.is_simple:
            ref = window.stage(i)
            out.append(
                StagePair(pair.psi_dag_x(z.state, ref.state), pair.psi_dag_u(z.control, ref.control), SpaceTag.COMPLEX)
            )
        else:
            out.append(z)
    out.append(np.asarray(traj.terminal_state, dtype=float).copy())
    return out


def reduce_solution(traj: AdaptiveTrajectory, pair: ModelPair) -> list:
    """Simple-space view: complex stages are reduced with ``psi``."""
    out = []
    for z in traj.stages:
        if z.is_simple:
            out.append(z)
        else:
            out.append(StagePair(pair.psi_x(z.state), pair.psi_u(z.control, z.state), SpaceTag.SIMPLE))
    out.append(pair.psi_x(traj.terminal_state))
    return out


def lifted_arrays(lifted) -> tuple:
    """Stack a lifted trajectory into ``(X, U)`` with ``X`` of length ``N+1``."""
    X = np.array([z.state for z in lifted[:-1]] + [np.asarray(lifted[-1])])
    U = np.array([z.control for z in lifted[:-1]])
    return X, U


def shift_warm_start(prev_problem: OcpProblem, prev_z, prev_duals, next_problem: OcpProblem, terminal_control=None) -> Guess:
    """Shift a converged solution one step for the next problem.

    Stage ``i`` of the new guess takes stage ``i+1`` of the previous lifted
    solution, reduced or kept complex as the new simplicity set requires.
    The vacated last stage applies ``terminal_control(x, ctx)`` (the model's
    terminal policy) from the previous terminal state. Row and bound duals are
    shifted where the block shapes match and zeroed elsewhere.
    """
    pair = next_problem.pair
    N = next_problem.N
    lifted = lift_solution(prev_problem.trajectory(prev_z), prev_problem.window, pair)
    X, U = lifted_arrays(lifted)
    extras = prev_problem.extras(prev_z)
    w = next_problem.window
    policy = terminal_control or pair.terminal_control
    xN = X[N]
    uN = policy(xN, w.at(N - 1))
    fN, _, _ = pair.complex_dynamics(xN[None], uN[None], w.at(N - 1), jac=False)
    Xs = np.vstack([X[1:N], xN[None], fN])
    Us = np.vstack([U[1:N], uN[None]])
    z = np.zeros(next_problem.n)
    for i in range(N):
        if next_problem.simple[i]:
            z[next_problem.ox[i] : next_problem.ox[i] + next_problem.nx[i]] = pair.psi_x(Xs[i])
            z[next_problem.ou[i] : next_problem.ou[i] + next_problem.nu[i]] = pair.psi_u(Us[i], Xs[i])
        else:
            z[next_problem.ox[i] : next_problem.ox[i] + next_problem.nx[i]] = Xs[i]
            z[next_problem.ou[i] : next_problem.ou[i] + next_problem.nu[i]] = Us[i]
            if next_problem.ne[i]:
                e = extras.get(i + 1)
                if e is None:
                    e = pair.extra_guess(Xs[i][None], Us[i][None], w.at(i))[0]
                z[next_problem.oe[i] : next_problem.oe[i] + next_problem.ne[i]] = e
    z[next_problem.ox[N] :] = Xs[N]
    z[next_problem.ox[0] : next_problem.ox[0] + next_problem.nx[0]] = next_problem.x0
    lam_c = lam_z = None
    if prev_duals is not None:
        pc, pz = prev_duals
        lam_c = np.zeros(next_problem.m)
        for key, (r, m) in next_problem.row_blocks.items():
            src = _shift_key(key)
            if src in prev_problem.row_blocks and prev_problem.row_blocks[src][1] == m and _same_kind(prev_problem, next_problem, src, key):
                r0 = prev_problem.row_blocks[src][0]
                lam_c[r : r + m] = pc[r0 : r0 + m]
        lam_z = np.zeros(next_problem.n)
        for key, (o, n, simple_flag) in next_problem.var_blocks.items():
            src = (key[0], key[1] + 1)
            blk = prev_problem.var_blocks.get(src)
            if blk is not None and blk[1] == n and blk[2] == simple_flag:
                lam_z[o : o + n] = pz[blk[0] : blk[0] + n]
    return Guess(z, lam_c, lam_z)


def _shift_key(key):
    if key[0] in ("dyn", "path"):
        return (key[0], key[1] + 1)
    return key


def _same_kind(prev, nxt, src, key):
    if key[0] == "dyn":
        i, j = src[1], key[1]
        return prev.simple[i] == nxt.simple[j] and prev.simple[i + 1] == nxt.simple[j + 1]
    if key[0] == "path":
        return prev.simple[src[1]] == nxt.simple[key[1]]
    return True
