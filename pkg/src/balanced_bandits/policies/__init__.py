from .base import ContextualBandit, FixedArmPolicy, OraclePolicy, PolicyState, UniformPolicy
from .linear import LinearBandit

__all__ = [
    "ContextualBandit",
    "FixedArmPolicy",
    "LinearBandit",
    "OraclePolicy",
    "PolicyState",
    "UniformPolicy",
]
