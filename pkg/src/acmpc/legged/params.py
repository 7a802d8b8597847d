"""Physical parameters of the quadruped model pair."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..core import ContractError

# leg order: front-left, front-right, rear-left, rear-right
LEG_NAMES = ("FL", "FR", "RL", "RR")


@dataclass(frozen=True)
class LeggedParams:
    """Single rigid body with four three-joint legs (abduction, hip, knee).

    Sizes follow a 40 cm, 12 kg robot. Joint-angle bounds are per joint type
    and shared by all legs; the knee range keeps the knee bent forward so
    inverse kinematics has a unique branch.
    """

    m: float = 12.0
    inertia: tuple = (0.05, 0.17, 0.2)
    n_legs: int = 4
    n_joints: int = 3
    hip_x: float = 0.2
    hip_y: float = 0.1
    l_abd: float = 0.05
    l_upper: float = 0.2
    l_lower: float = 0.2
    theta_min: tuple = (-0.7, -1.6, 0.3)
    theta_max: tuple = (0.7, 1.6, 2.6)
    dtheta_max: float = 30.0
    tau_max: float = 20.0
    mu: float = 0.7
    fz_max: float = 400.0
    fxy_max: float = 300.0
    ufoot_max: float = 500.0
    g: float = 9.81
    dt: float = 0.03
    nominal_height: float = 0.28
    pitch_guard: float = float(np.pi / 2 - 0.1)

    def __post_init__(self):
        if self.m <= 0:
            raise ContractError("mass must be positive")
        if min(self.inertia) <= 0:
            raise ContractError("inertia must be positive definite")
        if any(lo >= hi for lo, hi in zip(self.theta_min, self.theta_max)):
            raise ContractError("joint bounds must satisfy theta_min < theta_max")
        for name in ("tau_max", "dtheta_max", "mu", "dt", "l_upper", "l_lower", "fz_max"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.n_legs != 4 or self.n_joints != 3:
            raise ContractError("only four three-joint legs are supported")

    @property
    def I(self) -> np.ndarray:
        return np.diag(self.inertia)

    @property
    def hips(self) -> np.ndarray:
        """Hip positions in the body frame, one row per leg."""
        x, y = self.hip_x, self.hip_y
        return np.array([[x, y, 0.0], [x, -y, 0.0], [-x, y, 0.0], [-x, -y, 0.0]])

    @property
    def sides(self) -> np.ndarray:
        return np.array([1.0, -1.0, 1.0, -1.0])

    @property
    def gravity(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.g])

    @property
    def n_x(self) -> int:
        return 12 + 6 * self.n_legs

    @property
    def n_u(self) -> int:
        return 6 * self.n_legs

    @property
    def n_slack(self) -> int:
        return 3 * self.n_legs * self.n_joints

    def replace(self, **kw) -> "LeggedParams":
        names = {f.name for f in fields(self)}
        unknown = set(kw) - names
        if unknown:
            raise ContractError(f"unknown legged parameters: {sorted(unknown)}")
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(kw)
        return LeggedParams(**vals)


# index helpers for the 36-dimensional complex state and 24-dimensional control
Q_LIN = slice(0, 3)
Q_ANG = slice(3, 6)
Q_FOOT = slice(6, 18)
V_LIN = slice(18, 21)
OMEGA = slice(21, 24)
V_FOOT = slice(24, 36)
U_BODY = slice(0, 12)
U_FOOT = slice(12, 24)
X_KEEP = np.r_[0:6, 18:24]
U_KEEP = np.r_[0:12]
