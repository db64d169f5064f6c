"""
Calibration curve DTO.

A step function over u in [0, 1] evaluated on a grid: the empirical CDF of
PIT or CPIT values, or the tail-calibration ratio R-hat_t. For R-hat the
occurrence ratio O-hat scales the CPIT CDF so that curve(1) = O-hat.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd


@dataclass(frozen=True, eq=False)
class CalibrationCurve:
    """
    Attributes:
        u_grid: Ascending probabilities in [0, 1]
        values: Curve evaluations on u_grid (nondecreasing)
        occurrence_ratio: O-hat (1 for unconditional curves)
        kind: pit | cpit | rhat
        threshold: t for conditional curves
        empty: True when the exceedance set was empty (all-zero curve)
    """

    u_grid: np.ndarray
    values: np.ndarray
    occurrence_ratio: float = 1.0
    kind: str = "pit"
    threshold: Optional[float] = None
    empty: bool = False

    def deviation(self) -> float:
        """sup over the grid of |curve(u) - u|."""
        return float(np.max(np.abs(self.values - self.u_grid)))

    def to_frame(self) -> pd.DataFrame:
        """Columns u, value, ohat (the CSV layout of curves/*.csv)."""
        return pd.DataFrame({
            "u": self.u_grid,
            "value": self.values,
            "ohat": np.full(self.u_grid.shape, self.occurrence_ratio),
        })

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "threshold": self.threshold,
            "occurrence_ratio": self.occurrence_ratio,
            "empty": self.empty,
            "u": self.u_grid.tolist(),
            "value": self.values.tolist(),
        }
