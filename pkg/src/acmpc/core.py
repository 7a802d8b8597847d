"""Template/anchor model-pair abstraction.

A :class:`ModelPair` bundles a complex (anchor) model and a simple (template)
model together with the selection map ``psi`` that reduces complex quantities
and the reference-filled lift ``psi_dag`` that maps back. Every model in the
package works in absolute coordinates; tracking costs subtract the per-index
reference.

Batched evaluation is the norm: dynamics and constraint evaluators take
stacked stage arrays of shape ``(K, n)`` together with a :class:`StageContext`
that carries the reference rows for those ``K`` horizon indices.
"""

from __future__ import annotations

import enum
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np


class ContractError(ValueError):
    """Raised when an operation is called with inputs violating its contract."""


class NumericError(ArithmeticError):
    """Raised on non-finite inputs or a model singularity."""


class SpaceTag(enum.Enum):
    COMPLEX = "complex"
    SIMPLE = "simple"


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StagePair:
    """A state/control pair living in one of the two spaces."""

    state: np.ndarray
    control: np.ndarray
    space: SpaceTag

    def __post_init__(self):
        object.__setattr__(self, "state", _frozen(self.state))
        object.__setattr__(self, "control", _frozen(self.control))
        if not isinstance(self.space, SpaceTag):
            raise ContractError(f"space must be a SpaceTag, got {self.space!r}")

    @property
    def is_simple(self) -> bool:
        return self.space is SpaceTag.SIMPLE


@dataclass(frozen=True)
class Dims:
    n_xc: int
    n_uc: int
    n_xs: int
    n_us: int
    n_e: int = 0  # extra decision variables per complex stage (e.g. joint slacks)

    def __post_init__(self):
        for name in ("n_xc", "n_uc", "n_xs", "n_us"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.n_xs >= self.n_xc:
            raise ContractError("simple state must be a strict reduction (n_xs < n_xc)")
        if self.n_us > self.n_uc:
            raise ContractError("simple control cannot exceed complex control")

    def state_dim(self, space: SpaceTag) -> int:
        return self.n_xc if space is SpaceTag.COMPLEX else self.n_xs

    def control_dim(self, space: SpaceTag) -> int:
        return self.n_uc if space is SpaceTag.COMPLEX else self.n_us


@dataclass(frozen=True)
class StageContext:
    """Reference data for a batch of horizon indices.

    ``x_ref``/``u_ref`` are complex-space rows; ``aux`` holds model-specific
    per-index arrays (contact flags, footholds, ...), each with leading
    dimension ``K``. ``shared`` carries objects common to all rows, such as
    the terrain.
    """

    x_ref: np.ndarray
    u_ref: np.ndarray
    idx: np.ndarray
    aux: dict = field(default_factory=dict)
    shared: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.idx)

    def take(self, rows) -> "StageContext":
        rows = np.asarray(rows, dtype=int)
        return StageContext(
            self.x_ref[rows],
            self.u_ref[rows],
            self.idx[rows],
            {k: v[rows] for k, v in self.aux.items()},
            self.shared,
        )

    def stage(self, j: int) -> StagePair:
        return StagePair(self.x_ref[j], self.u_ref[j], SpaceTag.COMPLEX)


@dataclass(frozen=True)
class ConstraintBlock:
    """Stacked nonlinear rows ``lb <= c <= ub`` for ``K`` stages.

    Jacobians are dense per-stage blocks keyed by variable name
    (``"x"``, ``"u"``, ``"e"``), each of shape ``(K, m, n_var)``.
    """

    c: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    jac: dict
    names: tuple = ()

    @property
    def m(self) -> int:
        return self.c.shape[1]

    def violation(self) -> np.ndarray:
        """Signed violation: positive when outside ``[lb, ub]``."""
        return np.maximum(self.lb - self.c, self.c - self.ub)


@dataclass(frozen=True)
class Bounds:
    """Per-stage variable bounds, arrays of shape ``(K, n)``."""

    lower: np.ndarray
    upper: np.ndarray


@dataclass(frozen=True)
class FeasibilityReport:
    """Signed violations grouped by constraint family (positive = violated)."""

    violations: dict
    tol: float

    @property
    def max_violation(self) -> float:
        vals = [np.max(v) for v in self.violations.values() if np.size(v)]
        return float(max(vals)) if vals else -np.inf

    @property
    def feasible(self) -> bool:
        return self.max_violation <= self.tol

    def failing(self) -> list:
        return [k for k, v in self.violations.items() if np.size(v) and np.max(v) > self.tol]


class ModelPair(ABC):
    """Complex/simple model pair with selection reduction and reference lift.

    Subclasses provide discrete dynamics with Jacobians, path constraints in
    ``lb <= c <= ub`` form for both spaces, variable bounds, and quadratic
    tracking weights. ``psi`` is a coordinate selection given by ``x_keep``
    and ``u_keep``; the lift copies kept coordinates and fills the rest from
    the reference stage, so ``psi(psi_dag(z)) == z`` holds bit for bit.
    """

    name = "model-pair"

    def __init__(self, dims: Dims, x_keep, u_keep, Q, R, Qt, dt: float):
        self.dims = dims
        self.x_keep = np.asarray(x_keep, dtype=int)
        self.u_keep = np.asarray(u_keep, dtype=int)
        if len(self.x_keep) != dims.n_xs or len(self.u_keep) != dims.n_us:
            raise ContractError("keep indices do not match simple dimensions")
        self.x_null = np.setdiff1d(np.arange(dims.n_xc), self.x_keep)
        self.u_null = np.setdiff1d(np.arange(dims.n_uc), self.u_keep)
        self.Q = np.asarray(Q, dtype=float)
        self.R = np.asarray(R, dtype=float)
        self.Qt = np.asarray(Qt, dtype=float)
        for nm, W in (("Q", self.Q), ("R", self.R), ("Qt", self.Qt)):
            if not np.allclose(W, W.T) or np.linalg.eigvalsh(W).min() <= 0:
                raise ContractError(f"{nm} must be symmetric positive definite")
        self.dt = float(dt)

    # -- selection maps ----------------------------------------------------
    def psi_x(self, x):
        return np.asarray(x)[..., self.x_keep]

    def psi_u(self, u, x=None):
        # The state argument is accepted for generality and unused by selections.
        return np.asarray(u)[..., self.u_keep]

    def psi_dag_x(self, xs, x_ref):
        out = np.array(x_ref, dtype=float, copy=True)
        out[..., self.x_keep] = xs
        return out

    def psi_dag_u(self, us, u_ref):
        out = np.array(u_ref, dtype=float, copy=True)
        out[..., self.u_keep] = us
        return out

    # -- dynamics ----------------------------------------------------------
    @abstractmethod
    def complex_dynamics(self, x, u, ctx: StageContext, jac: bool = True):
        """Discrete complex step. Returns ``(f, A, B)`` (``A``/``B`` None if not jac)."""

    @abstractmethod
    def simple_dynamics(self, xs, us, ctx: StageContext, jac: bool = True):
        """Discrete simple step. Returns ``(f, A, B)``."""

    # -- constraints -------------------------------------------------------
    @abstractmethod
    def complex_bounds(self, ctx: StageContext) -> tuple:
        """``(x_bounds, u_bounds, e_bounds)`` for complex stages."""

    @abstractmethod
    def simple_bounds(self, ctx: StageContext) -> tuple:
        """``(x_bounds, u_bounds)`` for simple stages."""

    @abstractmethod
    def terminal_bounds(self, ctx: StageContext) -> Bounds:
        """Bounds on the terminal complex state."""

    @abstractmethod
    def complex_rows(self, x, u, e, ctx: StageContext, jac: bool = True) -> ConstraintBlock:
        """Nonlinear path rows at complex stages (may involve extra variables)."""

    @abstractmethod
    def simple_rows(self, xs, us, ctx: StageContext, jac: bool = True) -> ConstraintBlock:
        """Path rows at simple stages."""

    def terminal_rows(self, x, ctx: StageContext, jac: bool = True) -> ConstraintBlock | None:
        """Rows describing the terminal set; ``None`` when there is none."""
        return None

    def dynamics_pattern(self) -> tuple:
        """Structural nonzeros of the complex ``(A, B)``; dense unless overridden."""
        d = self.dims
        return np.ones((d.n_xc, d.n_xc), bool), np.ones((d.n_xc, d.n_uc), bool)

    def row_pattern(self, simple: bool) -> dict | None:
        """Structural nonzeros of path-row Jacobians keyed by ``"x"``/``"u"``/``"e"``; None means dense."""
        return None

    def terminal_control(self, x, ctx: StageContext) -> np.ndarray:
        """Control appended when a solution is shifted; defaults to the reference."""
        return np.array(ctx.u_ref[0], dtype=float, copy=True)

    def extra_guess(self, x, u, ctx: StageContext) -> np.ndarray:
        """Initial values for extra complex-stage variables."""
        return np.zeros((len(np.atleast_2d(x)), self.dims.n_e))

    @abstractmethod
    def complex_violation(self, x, u, ctx: StageContext) -> dict:
        """Signed violations of Z^c for stages given only ``(x, u)``."""

    @abstractmethod
    def simple_violation(self, xs, us, ctx: StageContext) -> dict:
        """Signed violations of Z^s."""

    def in_terminal_set(self, x, ctx: StageContext, tol: float = 1e-9) -> bool:
        rows = self.terminal_rows(np.atleast_2d(x), ctx, jac=False)
        b = self.terminal_bounds(ctx)
        viol = max(
            np.max(b.lower - x, initial=-np.inf), np.max(x - b.upper, initial=-np.inf)
        )
        if rows is not None:
            viol = max(viol, float(np.max(rows.violation(), initial=-np.inf)))
        return viol <= tol

    # -- costs -------------------------------------------------------------
    def stage_cost(self, x, u, x_ref, u_ref) -> float:
        dx = np.asarray(x) - x_ref
        du = np.asarray(u) - u_ref
        return float(dx @ self.Q @ dx + du @ self.R @ du)

    def terminal_cost(self, x, x_ref) -> float:
        dx = np.asarray(x) - x_ref
        return float(dx @ self.Qt @ dx)


def _check_stage(z: StagePair, pair: ModelPair, space: SpaceTag | None = None):
    if not isinstance(z, StagePair):
        raise ContractError("expected a StagePair")
    if space is not None and z.space is not space:
        raise ContractError(f"expected a {space.value} stage, got {z.space.value}")
    nx = pair.dims.state_dim(z.space)
    nu = pair.dims.control_dim(z.space)
    if z.state.size != nx or z.control.size != nu:
        raise ContractError(
            f"{z.space.value} stage has dims ({z.state.size}, {z.control.size}),"
            f" expected ({nx}, {nu})"
        )


def reduce(z: StagePair, pair: ModelPair) -> StagePair:
    """Apply ``psi`` to a complex stage."""
    _check_stage(z, pair, SpaceTag.COMPLEX)
    return StagePair(pair.psi_x(z.state), pair.psi_u(z.control, z.state), SpaceTag.SIMPLE)


def lift(z: StagePair, ref: StagePair | None, pair: ModelPair) -> StagePair:
    """Apply ``psi_dag`` to a simple stage using ``ref`` for null-space components."""
    _check_stage(z, pair, SpaceTag.SIMPLE)
    if ref is None:
        raise ContractError("lift requires a reference stage")
    _check_stage(ref, pair, SpaceTag.COMPLEX)
    return StagePair(
        pair.psi_dag_x(z.state, ref.state), pair.psi_dag_u(z.control, ref.control), SpaceTag.COMPLEX
    )


def single_context(ref: StagePair, idx: int = 0, aux: dict | None = None, shared=None) -> StageContext:
    """Context for one stage from a complex reference stage."""
    aux = {k: np.asarray(v)[None] for k, v in (aux or {}).items()}
    return StageContext(ref.state[None].copy(), ref.control[None].copy(), np.array([idx]), aux, shared or {})


def step(z: StagePair, pair: ModelPair, ctx: StageContext) -> np.ndarray:
    """Successor state of ``z`` under the dynamics of its own space."""
    _check_stage(z, pair)
    if not (np.all(np.isfinite(z.state)) and np.all(np.isfinite(z.control))):
        raise NumericError("non-finite stage passed to step")
    if z.is_simple:
        f, _, _ = pair.simple_dynamics(z.state[None], z.control[None], ctx, jac=False)
    else:
        f, _, _ = pair.complex_dynamics(z.state[None], z.control[None], ctx, jac=False)
    return f[0]


def check_feasible(z: StagePair, pair: ModelPair, tol: float, ctx: StageContext) -> FeasibilityReport:
    """Evaluate membership of ``z`` in Z^c or Z^s by its tag."""
    _check_stage(z, pair)
    if tol < 0:
        raise ContractError("tol must be non-negative")
    if z.is_simple:
        viol = pair.simple_violation(z.state[None], z.control[None], ctx)
    else:
        viol = pair.complex_violation(z.state[None], z.control[None], ctx)
    return FeasibilityReport({k: np.asarray(v).reshape(-1) for k, v in viol.items()}, tol)


def bounds_violation(values, bounds: Bounds) -> np.ndarray:
    lo = np.where(np.isfinite(bounds.lower), bounds.lower - values, -np.inf)
    hi = np.where(np.isfinite(bounds.upper), values - bounds.upper, -np.inf)
    return np.maximum(lo, hi)


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Complex-space reference indexed by absolute time step.

    ``aux`` maps names to per-step arrays (leading dimension ``len(x)``);
    ``shared`` carries window-independent data such as the terrain.
    """

    x: np.ndarray
    u: np.ndarray
    aux: dict = field(default_factory=dict)
    shared: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.u) != len(self.x) - 1:
            raise ContractError("reference needs len(u) == len(x) - 1")

    @property
    def length(self) -> int:
        return len(self.u)

    def consistency_error(self, pair: ModelPair) -> float:
        ctx = self.context(0, self.length)
        f, _, _ = pair.complex_dynamics(self.x[:-1], self.u, ctx, jac=False)
        return float(np.max(np.abs(f - self.x[1:]), initial=0.0))

    def context(self, start: int, count: int) -> StageContext:
        """Context for absolute steps ``start .. start+count-1`` (clamped to the end)."""
        idx = np.minimum(np.arange(start, start + count), len(self.x) - 1)
        uidx = np.minimum(idx, len(self.u) - 1)
        return StageContext(
            self.x[idx],
            self.u[uidx],
            idx,
            {k: v[idx] for k, v in self.aux.items()},
            self.shared,
        )

    def window(self, start: int, horizon: int) -> "RefWindow":
        """Reference rows for a horizon starting at absolute step ``start``.

        Past the end, the reference holds its final state with the final control;
        callers should provide references whose tail is an equilibrium.
        """
        return RefWindow(self.context(start, horizon + 1), horizon, start)


@dataclass(frozen=True)
class RefWindow:
    """A horizon's worth of reference rows, indexed 0..N (N+1 rows)."""

    ctx: StageContext
    horizon: int
    start: int = 0

    def __post_init__(self):
        if len(self.ctx) < self.horizon + 1:
            raise ContractError("reference window shorter than horizon + 1")

    def at(self, idx) -> StageContext:
        return self.ctx.take(np.atleast_1d(idx))

    def stage(self, i: int) -> StagePair:
        return self.ctx.stage(i)
