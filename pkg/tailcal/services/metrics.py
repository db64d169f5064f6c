"""
Forecast evaluation.

One metric record per forecast set: mean CRPS and twCRPS, the PIT
miscalibration MCB, the tail miscalibration TMCB, the conditional PIT
miscalibration CPIT-MCB, the occurrence ratio O-hat and the exceedance
count. Skill scores compare a record against a baseline record.
"""

from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from tailcal.infrastructure.logging import get_logger
from tailcal.models.forecast import CaseInput, as_forecast_set
from tailcal.models.loss_spec import LossSpec
from tailcal.services.calib import PitSet, cpit_mcb, mcb, pit_set, tmcb
from tailcal.services.errors import CalibrationError
from tailcal.services.loss import evaluate_loss


logger = get_logger(__name__)

METRIC_COLUMNS = ("crps", "twcrps", "mcb", "tmcb", "cpit_mcb")


def evaluate_forecasts(
    cases: CaseInput,
    threshold: float,
    divergence: str = "w1",
    estimator: str = "exact",
    rng: Optional[np.random.Generator] = None,
) -> Dict[str, Any]:
    """
    Score and calibration metrics of a forecast set.

    Tail metrics that are undefined for the set (no exceedances, zero
    forecast exceedance probability) are NaN.

    Args:
        rng: Tie randomization for ensemble PITs
    """
    fs = as_forecast_set(cases)
    scores = evaluate_loss(fs, LossSpec(penalty="weighted", threshold=threshold))

    exceed = fs.obs > threshold
    sf_t = np.broadcast_to(np.atleast_1d(fs.forecast.sf(threshold)), fs.obs.shape)
    total_sf = float(np.sum(sf_t))
    count = int(np.sum(exceed))

    try:
        tail = tmcb(fs, threshold, divergence, estimator)
    except CalibrationError as e:
        logger.warning("tmcb_undefined", threshold=threshold, error=e.message)
        tail = float("nan")

    conditional = cpit_mcb(fs, threshold, divergence, estimator) if count > 0 else float("nan")

    return {
        "n": len(fs),
        "exceedances": count,
        "ohat": count / total_sf if total_sf > 0 else float("nan"),
        "crps": scores.base_mean,
        "twcrps": scores.penalty_value,
        "mcb": mcb(pit_set(fs, rng), divergence, estimator),
        "tmcb": tail,
        "cpit_mcb": conditional,
    }


def skill(model: float, baseline: float) -> float:
    """Percentage improvement over the baseline; NaN for a zero baseline."""
    if baseline == 0 or not np.isfinite(baseline):
        return float("nan")
    return 100.0 * (baseline - model) / baseline


def skill_table(frame: pd.DataFrame, baseline: str, label_column: str = "label") -> pd.DataFrame:
    """
    Skill of every row against the row labelled `baseline`.

    Raises:
        KeyError: No baseline row
    """
    rows = frame[frame[label_column] == baseline]
    if rows.empty:
        raise KeyError(f"No baseline row labelled {baseline!r}")
    ref = rows.iloc[0]

    out = frame[[label_column]].copy()
    for column in METRIC_COLUMNS:
        if column in frame.columns:
            out[f"{column}_skill"] = [skill(v, ref[column]) for v in frame[column]]
    return out


def pit_histogram(p: PitSet, bins: int = 20) -> pd.DataFrame:
    """Counts and densities of PIT values on equal-width bins of [0, 1]."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts, _ = np.histogram(p.values, bins=edges)
    density = counts * bins / max(len(p), 1)
    return pd.DataFrame({"bin_lo": edges[:-1], "bin_hi": edges[1:], "count": counts, "density": density})
