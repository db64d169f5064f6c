"""
Data validation for weather datasets.

Implements two-level validation:
- L1 (Fatal): unique station-days, chronological train/test separation
- L2 (Metrics): row counts, per-station coverage, exceedance rates
"""

from typing import Any, Dict, Optional

import numpy as np

from tailcal.models.dataset import WeatherDataset
from tailcal.services.errors import DataError, InsufficientDataError
from tailcal.services.result import Result


class WeatherDataValidator:
    """
    Validates weather datasets before training and evaluation.

    Attributes:
        min_station_rows: Rows per station below which L2 warns
        exceedance_band: Exceedance rates outside (lo, hi) raise an L2 warning
    """

    def __init__(self, min_station_rows: int = 9, exceedance_band: tuple = (0.005, 0.10)):
        self.min_station_rows = min_station_rows
        self.exceedance_band = exceedance_band

    def validate_l1(self, dataset: WeatherDataset) -> Result[None]:
        """
        L1 (Fatal) validation.

        Checks:
        - Dataset is not empty
        - Every (station_id, date) pair occurs once

        Returns:
            Result[None]: Success or DataError
        """
        if len(dataset) == 0:
            return Result.fail(InsufficientDataError("Weather data has no rows"))

        keys = np.char.add(np.char.add(dataset.station_ids.astype(str), "|"), dataset.dates.astype(str))
        unique, counts = np.unique(keys, return_counts=True)
        duplicated = unique[counts > 1]
        if duplicated.size:
            station, date = str(duplicated[0]).split("|", 1)
            return Result.fail(DataError(
                "Duplicate station-day",
                context={"station_id": station, "date": date, "duplicates": int(duplicated.size)}
            ))

        return Result.ok(None)

    def validate_split(self, train: WeatherDataset, test: WeatherDataset) -> Result[None]:
        """Train dates must all precede test dates."""
        if len(train) == 0 or len(test) == 0:
            return Result.fail(InsufficientDataError(
                "Empty split", context={"train": len(train), "test": len(test)}
            ))
        last_train, first_test = str(np.max(train.dates)), str(np.min(test.dates))
        if last_train >= first_test:
            return Result.fail(DataError(
                "Train and test periods overlap",
                context={"last_train": last_train, "first_test": first_test}
            ))
        return Result.ok(None)

    def calculate_l2_metrics(self, dataset: WeatherDataset, threshold: Optional[float] = None) -> Dict[str, Any]:
        """
        L2 quality metrics.

        Args:
            dataset: Weather rows
            threshold: Tail threshold for exceedance statistics

        Returns:
            dict: Row counts, date range, per-station rows and warnings
        """
        per_station = {s: int(np.sum(dataset.station_ids == s)) for s in np.unique(dataset.station_ids)}
        metrics: Dict[str, Any] = {
            "validation_level": "L2",
            "rows": len(dataset),
            "stations": len(per_station),
            "days": int(np.unique(dataset.dates).size),
            "date_range": [str(np.min(dataset.dates)), str(np.max(dataset.dates))] if len(dataset) else [],
            "station_rows": per_station,
            "zero_obs_rate": float(np.mean(dataset.obs == 0.0)) if len(dataset) else 0.0,
            "warnings": [],
        }

        for station, count in per_station.items():
            if count < self.min_station_rows:
                metrics["warnings"].append(f"station {station} has only {count} rows")

        if threshold is not None and len(dataset):
            exceed = dataset.obs > threshold
            rate = float(np.mean(exceed))
            metrics["threshold"] = threshold
            metrics["exceedances"] = int(np.sum(exceed))
            metrics["exceedance_rate"] = rate
            lo, hi = self.exceedance_band
            if not lo < rate < hi:
                metrics["warnings"].append(f"exceedance rate above {threshold:g} is {rate:.2%}")

        return metrics

    def __repr__(self) -> str:
        return f"WeatherDataValidator(levels=['L1', 'L2'], min_station_rows={self.min_station_rows})"
