"""
Weather Row Data Transfer Object.

One station-day: ensemble mean and spread of the wind-speed forecast and
the verifying observation.
"""

from dataclasses import dataclass
from datetime import date as date_type
from typing import Any, Dict, Optional

from tailcal.services.errors import CsvParseError, DataError, NegativeWindError
from tailcal.services.result import Result


CSV_COLUMNS = ("station_id", "date", "doy", "ens_mean", "ens_sd", "obs")


def day_of_year(iso_date: str) -> int:
    """Calendar day of year of an ISO-8601 date (2021-01-01 -> 1)."""
    return date_type.fromisoformat(iso_date).timetuple().tm_yday


@dataclass(frozen=True)
class WeatherRow:
    """
    Immutable station-day record.

    Attributes:
        station_id: Station identifier
        date: ISO-8601 date
        doy: Day of year (1..366), consistent with date
        ens_mean: Ensemble mean wind speed (m/s, >= 0)
        ens_sd: Ensemble standard deviation (m/s, >= 0)
        obs: Observed wind speed (m/s, >= 0)
    """

    station_id: str
    date: str
    doy: int
    ens_mean: float
    ens_sd: float
    obs: float

    @staticmethod
    def create(
        station_id: str,
        date: str,
        ens_mean: float,
        ens_sd: float,
        obs: float,
        doy: Optional[int] = None,
        line: Optional[int] = None,
    ) -> Result['WeatherRow']:
        """
        Create a WeatherRow with validation.

        Args:
            line: Source line number, carried into error context

        Returns:
            Result[WeatherRow]: Row or CsvParseError / NegativeWindError / DataError
        """
        if not station_id or not str(station_id).strip():
            return Result.fail(CsvParseError(line=line, column="station_id", reason="empty"))

        try:
            expected_doy = day_of_year(date)
        except (TypeError, ValueError):
            return Result.fail(CsvParseError(line=line, column="date", reason=f"not an ISO date: {date!r}"))

        if doy is None:
            doy = expected_doy
        elif not 1 <= int(doy) <= 366 or int(doy) != expected_doy:
            return Result.fail(DataError(
                "doy does not match date",
                context={"line": line, "date": date, "doy": doy, "expected": expected_doy}
            ))

        for column, value in (("ens_mean", ens_mean), ("ens_sd", ens_sd), ("obs", obs)):
            if value < 0:
                return Result.fail(NegativeWindError(
                    f"Negative wind quantity in {column}",
                    context={"line": line, "column": column, "value": value}
                ))

        return Result.ok(WeatherRow(
            station_id=str(station_id),
            date=date,
            doy=int(doy),
            ens_mean=float(ens_mean),
            ens_sd=float(ens_sd),
            obs=float(obs),
        ))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "station_id": self.station_id,
            "date": self.date,
            "doy": self.doy,
            "ens_mean": self.ens_mean,
            "ens_sd": self.ens_sd,
            "obs": self.obs,
        }
