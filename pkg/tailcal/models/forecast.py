"""
Forecast/observation pairs.

ForecastCase is one (forecast, observation) pair with station/date metadata.
ForecastSet holds n cases in batched form (one Distribution with batch
shape (n,) plus an observation vector), which is what every score,
calibration and loss computation consumes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from tailcal.services.dist import Distribution, stack
from tailcal.services.errors import DataError, InvalidParameterError
from tailcal.services.result import Result


@dataclass(frozen=True)
class ForecastCase:
    """
    One forecast case.

    Attributes:
        forecast: Scalar predictive distribution
        obs: Verifying observation
        station: Station id, if known
        date: ISO-8601 date, if known
        doy: Day of year, if known
    """

    forecast: Distribution
    obs: float
    station: Optional[str] = None
    date: Optional[str] = None
    doy: Optional[int] = None


@dataclass(frozen=True, eq=False)
class ForecastSet:
    """
    Batched forecast cases.

    Attributes:
        forecast: Distribution with batch shape (n,)
        obs: Observations, shape (n,)
        stations: Optional station ids, shape (n,)
        dates: Optional ISO dates, shape (n,)
    """

    forecast: Distribution
    obs: np.ndarray
    stations: Optional[np.ndarray] = None
    dates: Optional[np.ndarray] = None

    @staticmethod
    def create(
        forecast: Distribution,
        obs: Sequence[float],
        stations: Optional[Sequence[str]] = None,
        dates: Optional[Sequence[str]] = None,
    ) -> Result["ForecastSet"]:
        """
        Create a ForecastSet with shape validation.

        Returns:
            Result[ForecastSet]: Created set or DataError
        """
        obs_arr = np.atleast_1d(np.asarray(obs, dtype=float))
        if obs_arr.ndim != 1 or obs_arr.size == 0:
            return Result.fail(DataError("Observations must be a nonempty vector",
                                         context={"shape": obs_arr.shape}))
        if forecast.batch_shape != obs_arr.shape:
            return Result.fail(DataError(
                "Forecast batch does not match observations",
                context={"batch_shape": forecast.batch_shape, "obs_shape": obs_arr.shape}
            ))
        if not np.all(np.isfinite(obs_arr)):
            return Result.fail(DataError("Observations must be finite"))

        for name, meta in (("stations", stations), ("dates", dates)):
            if meta is not None and len(meta) != obs_arr.size:
                return Result.fail(DataError(
                    f"{name} length does not match observations",
                    context={name: len(meta), "obs": obs_arr.size}
                ))

        return Result.ok(ForecastSet(
            forecast=forecast,
            obs=obs_arr,
            stations=None if stations is None else np.asarray(stations),
            dates=None if dates is None else np.asarray(dates),
        ))

    @staticmethod
    def from_cases(cases: Sequence[ForecastCase]) -> "ForecastSet":
        """
        Stack cases of one forecast family.

        Raises:
            InvalidParameterError: Empty input or mixed families
        """
        if not cases:
            raise InvalidParameterError("No forecast cases given")
        stations = [c.station for c in cases]
        dates = [c.date for c in cases]
        return ForecastSet(
            forecast=stack([c.forecast for c in cases]),
            obs=np.asarray([c.obs for c in cases], dtype=float),
            stations=None if any(s is None for s in stations) else np.asarray(stations),
            dates=None if any(d is None for d in dates) else np.asarray(dates),
        )

    def __len__(self) -> int:
        return int(self.obs.shape[0])

    def case(self, i: int) -> ForecastCase:
        return ForecastCase(
            forecast=self.forecast[i],
            obs=float(self.obs[i]),
            station=None if self.stations is None else str(self.stations[i]),
            date=None if self.dates is None else str(self.dates[i]),
        )

    def cases(self) -> Iterator[ForecastCase]:
        for i in range(len(self)):
            yield self.case(i)

    def subset(self, index: Union[np.ndarray, slice]) -> "ForecastSet":
        return ForecastSet(
            forecast=self.forecast[index],
            obs=self.obs[index],
            stations=None if self.stations is None else self.stations[index],
            dates=None if self.dates is None else self.dates[index],
        )

    def __repr__(self) -> str:
        return f"ForecastSet(n={len(self)}, forecast={type(self.forecast).__name__})"


CaseInput = Union[ForecastSet, Sequence[ForecastCase]]


def as_forecast_set(cases: CaseInput) -> ForecastSet:
    """Accept either a ForecastSet or a list of ForecastCase."""
    if isinstance(cases, ForecastSet):
        return cases
    return ForecastSet.from_cases(list(cases))
