"""Simplicity sets and the admissibility test.

A :class:`SimplicitySet` lists the horizon indices solved with the simple
model. :func:`check_admissible` evaluates the four admissibility conditions
on a lifted trajectory:

* (a) the index lies strictly inside the horizon,
* (b) the reduced-then-lifted stage is feasible for the complex constraints,
* (c) the simple model exactly anchors the complex step from that stage,
* (d) the complex step from the previous stage lands on the simple manifold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .core import ContractError, ModelPair, RefWindow, SpaceTag, StagePair

DEFAULT_EPS_ADM = 1e-6


@dataclass(frozen=True)
class SimplicitySet:
    """Sorted set of simplified horizon indices for a horizon of length ``horizon``."""

    horizon: int
    indices: tuple = ()
    evidence: "AdmissibilityReport | None" = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.horizon < 1:
            raise ContractError("horizon must be positive")
        idx = tuple(sorted({int(i) for i in self.indices}))
        if idx and (idx[0] < 0 or idx[-1] > self.horizon):
            raise ContractError(f"indices must lie in [0, {self.horizon}]")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def empty(cls, horizon: int) -> "SimplicitySet":
        return cls(horizon, ())

    @classmethod
    def span(cls, horizon: int, first: int, last: int) -> "SimplicitySet":
        """Set ``{first, ..., last}`` (empty when ``last < first``)."""
        return cls(horizon, tuple(range(first, last + 1)))

    @classmethod
    def fixed_default(cls, horizon: int) -> "SimplicitySet":
        """The fixed mask ``{2, ..., N-2}`` that keeps both horizon ends complex."""
        return cls.span(horizon, 2, horizon - 2)

    def __contains__(self, i) -> bool:
        return int(i) in self._lookup

    def __iter__(self):
        return iter(self.indices)

    def __len__(self) -> int:
        return len(self.indices)

    @cached_property
    def _lookup(self) -> frozenset:
        return frozenset(self.indices)

    def mask(self) -> np.ndarray:
        """Boolean array over indices ``0..horizon``; True where simple."""
        m = np.zeros(self.horizon + 1, dtype=bool)
        m[list(self.indices)] = True
        return m

    def respects_range(self) -> bool:
        return all(1 <= i <= self.horizon - 1 for i in self.indices)

    def fraction(self) -> float:
        """Share of the ``horizon`` stage pairs that are simplified."""
        return len(self.indices) / self.horizon

    def with_evidence(self, report: "AdmissibilityReport") -> "SimplicitySet":
        return SimplicitySet(self.horizon, self.indices, report)

    def union(self, other: "SimplicitySet") -> "SimplicitySet":
        _same_horizon(self, other)
        return SimplicitySet(self.horizon, self._lookup | other._lookup)

    def without(self, drop) -> "SimplicitySet":
        return SimplicitySet(self.horizon, self._lookup - {int(i) for i in drop})


def _same_horizon(a: SimplicitySet, b: SimplicitySet):
    if a.horizon != b.horizon:
        raise ContractError(f"horizon mismatch: {a.horizon} vs {b.horizon}")


@dataclass(frozen=True)
class IndexEvidence:
    """Admissibility evidence for one horizon index."""

    index: int
    in_range: bool
    feasible_after_roundtrip: bool
    roundtrip_violation: float
    anchor_residual: float
    entry_residual: float
    eps: float

    @property
    def anchors(self) -> bool:
        return bool(self.anchor_residual <= self.eps)

    @property
    def enters(self) -> bool:
        return bool(self.entry_residual <= self.eps)

    @property
    def passed(self) -> bool:
        return self.in_range and self.feasible_after_roundtrip and self.anchors and self.enters

    def failed_conditions(self) -> str:
        """Letters of the failed conditions, e.g. ``"b"`` or ``"cd"``."""
        flags = zip("abcd", (self.in_range, self.feasible_after_roundtrip, self.anchors, self.enters))
        return "".join(c for c, ok in flags if not ok)


@dataclass(frozen=True)
class AdmissibilityReport:
    entries: tuple

    @property
    def overall(self) -> bool:
        return all(e.passed for e in self.entries)

    def passing(self) -> tuple:
        return tuple(e.index for e in self.entries if e.passed)

    def failing(self) -> tuple:
        return tuple(e.index for e in self.entries if not e.passed)

    def get(self, i: int) -> IndexEvidence | None:
        for e in self.entries:
            if e.index == i:
                return e
        return None

    def rows(self):
        """Flat records for logging."""
        for e in self.entries:
            yield {
                "index": e.index,
                "a": int(e.in_range),
                "b": int(e.feasible_after_roundtrip),
                "c": int(e.anchors),
                "d": int(e.enters),
                "roundtrip_violation": e.roundtrip_violation,
                "anchor_residual": e.anchor_residual,
                "entry_residual": e.entry_residual,
            }


def _stack_lifted(lifted, pair: ModelPair, horizon: int):
    if len(lifted) != horizon + 1:
        raise ContractError(f"lifted trajectory needs {horizon + 1} entries, got {len(lifted)}")
    stages = lifted[:horizon]
    for z in stages:
        if not isinstance(z, StagePair) or z.space is not SpaceTag.COMPLEX:
            raise ContractError("lifted stages must be complex StagePairs")
    X = np.array([z.state for z in stages])
    U = np.array([z.control for z in stages])
    term = lifted[horizon]
    xN = term.state if isinstance(term, StagePair) else np.asarray(term, dtype=float)
    return X, U, xN


def evaluate_indices(
    candidates, lifted, pair: ModelPair, window: RefWindow, eps_adm: float, feas_tol: float
) -> AdmissibilityReport:
    """Evaluate the four conditions at each index in ``candidates``."""
    N = window.horizon
    X, U, _ = _stack_lifted(lifted, pair, N)
    cand = sorted({int(i) for i in candidates})
    if not cand:
        return AdmissibilityReport(())
    ctx_all = window.at(np.arange(N))
    fc, _, _ = pair.complex_dynamics(X, U, ctx_all, jac=False)
    entries = []
    inner = [i for i in cand if 0 <= i < N]
    if inner:
        rows = np.array(inner)
        ctx = window.at(rows)
        # (b) reduce, lift with the reference, and test complex feasibility
        xr = pair.psi_dag_x(pair.psi_x(X[rows]), ctx.x_ref)
        ur = pair.psi_dag_u(pair.psi_u(U[rows], X[rows]), ctx.u_ref)
        viol = pair.complex_violation(xr, ur, ctx)
        vmax = np.full(len(rows), -np.inf)
        for v in viol.values():
            v = np.asarray(v).reshape(len(rows), -1)
            if v.shape[1]:
                vmax = np.maximum(vmax, v.max(axis=1))
        # (c) simple step from the reduced stage, lifted with the successor reference
        fs, _, _ = pair.simple_dynamics(pair.psi_x(X[rows]), pair.psi_u(U[rows], X[rows]), ctx, jac=False)
        nxt = window.at(rows + 1)
        anchor = np.max(np.abs(pair.psi_dag_x(fs, nxt.x_ref) - fc[rows]), axis=1)
    per = {}
    for j, i in enumerate(inner):
        per[i] = (bool(vmax[j] <= feas_tol), float(vmax[j]), float(anchor[j]))
    for i in cand:
        in_range = 1 <= i <= N - 1
        feas, rv, anc = per.get(i, (False, np.inf, np.inf))
        if 1 <= i <= N:
            # (d) the previous complex step must land on the manifold at i
            prev = fc[i - 1]
            ref_i = window.stage(i).state
            entry = float(np.max(np.abs(pair.psi_dag_x(pair.psi_x(prev), ref_i) - prev)))
        else:
            entry = np.inf
        entries.append(IndexEvidence(i, in_range, feas, rv, anc, entry, eps_adm))
    return AdmissibilityReport(tuple(entries))


def check_admissible(
    S: SimplicitySet,
    lifted,
    pair: ModelPair,
    eps_adm: float,
    window: RefWindow,
    feas_tol: float = 1e-6,
) -> AdmissibilityReport:
    """Check every index of ``S`` against the admissibility conditions.

    ``lifted`` holds ``N`` complex stage pairs followed by the terminal state
    (a vector or a StagePair). The empty set is admissible.
    """
    if S.horizon != window.horizon:
        raise ContractError("simplicity set and window horizons differ")
    return evaluate_indices(S.indices, lifted, pair, window, eps_adm, feas_tol)


def shift(S: SimplicitySet, keep) -> SimplicitySet:
    """``{i - 1 | i in keep}`` restricted to ``[1, N-1]``."""
    return SimplicitySet(S.horizon, tuple(i - 1 for i in keep if 1 <= i - 1 <= S.horizon - 1))


def update_adaptive_set(
    S_a: SimplicitySet,
    lifted,
    pair: ModelPair,
    eps_adm: float,
    window: RefWindow,
    feas_tol: float = 1e-6,
) -> SimplicitySet:
    """Keep indices of ``S_a`` that pass on ``lifted`` and shift them one step earlier."""
    report = check_admissible(S_a, lifted, pair, eps_adm, window, feas_tol)
    return shift(S_a, report.passing()).with_evidence(report)


def effective_set(S_a: SimplicitySet, S_f: SimplicitySet) -> SimplicitySet:
    """Intersection of the adaptive and fixed sets."""
    _same_horizon(S_a, S_f)
    return SimplicitySet(S_a.horizon, S_a._lookup & S_f._lookup)


def grow_candidates(
    S: SimplicitySet,
    lifted,
    pair: ModelPair,
    eps_adm: float,
    window: RefWindow,
    domain: SimplicitySet,
    feas_tol: float = 1e-6,
) -> SimplicitySet:
    """Add indices of ``domain`` outside ``S`` that pass on the latest solution."""
    _same_horizon(S, domain)
    cand = [i for i in domain.indices if i not in S]
    report = evaluate_indices(cand, lifted, pair, window, eps_adm, feas_tol)
    return SimplicitySet(S.horizon, S._lookup | set(report.passing()), report)
