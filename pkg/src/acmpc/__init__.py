"""Adaptive complexity model predictive control.

A horizon mixes stages of a complex model with stages of a simpler model
that is embedded in it; the set of simplified indices is chosen online so
that the plan stays a valid plan of the complex model.
"""

from .core import ContractError, ModelPair, NumericError, ReferenceTrajectory, SpaceTag, StagePair, lift, reduce
from .ocp import assemble, lift_solution
from .simplicity import SimplicitySet, check_admissible, effective_set, update_adaptive_set
from .sqp import HessianMode, SqpSettings, Status, solve
from .testbed import make_testbed

__version__ = "0.1.0"

__all__ = [
    "ContractError", "HessianMode", "ModelPair", "NumericError", "ReferenceTrajectory", "SimplicitySet",
    "SpaceTag", "SqpSettings", "StagePair", "Status", "assemble", "check_admissible", "effective_set",
    "lift", "lift_solution", "make_testbed", "reduce", "solve", "update_adaptive_set",
]
