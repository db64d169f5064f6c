"""
Column-oriented weather dataset.

WeatherDataset holds station-days as parallel numpy arrays together with
the ordered station list used for cluster assignments and embedding rows.
Station indices follow the sorted station ids of the training data; a
dataset built against a foreign station list marks unknown stations -1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from tailcal.models.weather_row import CSV_COLUMNS, WeatherRow
from tailcal.services.errors import DataError, InsufficientDataError
from tailcal.services.result import Result


SEASON_DAYS = 365.25


def season(doy: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(sin, cos) of 2 pi doy / 365.25."""
    angle = 2.0 * np.pi * np.asarray(doy, dtype=float) / SEASON_DAYS
    return np.sin(angle), np.cos(angle)


@dataclass(frozen=True, eq=False)
class WeatherDataset:
    """
    Attributes:
        stations: Ordered station ids (embedding / cluster row order)
        station_ids: Station id per row
        station_index: Position of the row's station in `stations` (-1 if unknown)
        dates: ISO dates per row
        doy, ens_mean, ens_sd, obs: Per-row values
    """

    stations: Tuple[str, ...]
    station_ids: np.ndarray
    station_index: np.ndarray
    dates: np.ndarray
    doy: np.ndarray
    ens_mean: np.ndarray
    ens_sd: np.ndarray
    obs: np.ndarray

    @staticmethod
    def from_frame(frame: pd.DataFrame, stations: Optional[Sequence[str]] = None) -> Result["WeatherDataset"]:
        """
        Build from a frame with the weather CSV columns.

        Args:
            stations: Station order to index against; defaults to the sorted ids in the frame

        Returns:
            Result[WeatherDataset]: Dataset or DataError
        """
        missing = [c for c in CSV_COLUMNS if c not in frame.columns]
        if missing:
            return Result.fail(DataError("Weather data is missing columns", context={"missing": missing}))
        if frame.empty:
            return Result.fail(InsufficientDataError("Weather data has no rows"))

        ids = frame["station_id"].astype(str).to_numpy()
        order = tuple(sorted(set(ids))) if stations is None else tuple(str(s) for s in stations)
        lookup = {s: i for i, s in enumerate(order)}

        return Result.ok(WeatherDataset(
            stations=order,
            station_ids=ids,
            station_index=np.array([lookup.get(s, -1) for s in ids], dtype=int),
            dates=frame["date"].astype(str).to_numpy(),
            doy=frame["doy"].to_numpy(dtype=int),
            ens_mean=frame["ens_mean"].to_numpy(dtype=float),
            ens_sd=frame["ens_sd"].to_numpy(dtype=float),
            obs=frame["obs"].to_numpy(dtype=float),
        ))

    @staticmethod
    def from_rows(rows: Sequence[WeatherRow], stations: Optional[Sequence[str]] = None) -> Result["WeatherDataset"]:
        frame = pd.DataFrame([r.to_dict() for r in rows], columns=list(CSV_COLUMNS))
        return WeatherDataset.from_frame(frame, stations)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "station_id": self.station_ids,
            "date": self.dates,
            "doy": self.doy,
            "ens_mean": self.ens_mean,
            "ens_sd": self.ens_sd,
            "obs": self.obs,
        })

    def __len__(self) -> int:
        return int(self.obs.shape[0])

    @property
    def station_count(self) -> int:
        return len(self.stations)

    def subset(self, index) -> "WeatherDataset":
        return WeatherDataset(
            stations=self.stations,
            station_ids=self.station_ids[index],
            station_index=self.station_index[index],
            dates=self.dates[index],
            doy=self.doy[index],
            ens_mean=self.ens_mean[index],
            ens_sd=self.ens_sd[index],
            obs=self.obs[index],
        )

    def reindex(self, stations: Sequence[str]) -> "WeatherDataset":
        """Same rows indexed against another station order."""
        return WeatherDataset.from_frame(self.to_frame(), stations).unwrap()

    def season(self) -> Tuple[np.ndarray, np.ndarray]:
        return season(self.doy)

    def by_station(self) -> Dict[str, np.ndarray]:
        """Observations grouped by station id."""
        return {s: self.obs[self.station_ids == s] for s in self.stations if np.any(self.station_ids == s)}

    def train_mask(self, test_fraction: float) -> np.ndarray:
        """
        Rows before the held-out trailing share of distinct days.

        At least one day lands on each side.

        Raises:
            InsufficientDataError: Fewer than two distinct days
        """
        days = np.unique(self.dates)
        if days.size < 2:
            raise InsufficientDataError("Need at least two days to split", context={"days": int(days.size)})
        n_test = min(max(int(round(test_fraction * days.size)), 1), days.size - 1)
        cutoff = days[days.size - n_test]
        return self.dates < cutoff

    def split_chronological(self, test_fraction: float) -> Tuple["WeatherDataset", "WeatherDataset"]:
        """Train/test split on dates: the trailing share of distinct days is held out."""
        train = self.train_mask(test_fraction)
        return self.subset(np.flatnonzero(train)), self.subset(np.flatnonzero(~train))

    def __repr__(self) -> str:
        return f"WeatherDataset(rows={len(self)}, stations={self.station_count})"
