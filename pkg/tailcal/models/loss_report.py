"""
Loss Report Data Transfer Object.

Outcome of evaluating one LossSpec on a set of forecast cases.
"""

from dataclasses import dataclass
from typing import Any, Dict


@dataclass(frozen=True)
class LossReport:
    """
    Attributes:
        total: base_mean + gamma * penalty_value
        base_mean: Mean base score over the cases
        penalty_value: Weighted-score mean or miscalibration measure (0 for no penalty)
        gamma: Penalty weight used
        cases: Number of cases
        exceedances: |I_t| for tail penalties, None otherwise
    """

    total: float
    base_mean: float
    penalty_value: float
    gamma: float = 0.0
    cases: int = 0
    exceedances: Any = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "total": self.total,
            "base_mean": self.base_mean,
            "penalty_value": self.penalty_value,
            "gamma": self.gamma,
            "cases": self.cases,
            "exceedances": self.exceedances,
        }
