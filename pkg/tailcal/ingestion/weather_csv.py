"""
Weather CSV data source.

Reads and writes the station-day CSV format

    station_id,date,doy,ens_mean,ens_sd,obs

with encoding fallbacks and per-row validation. Malformed rows are reported
with their file line number (the header is line 1).
"""

from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from tailcal.infrastructure.logging import get_logger
from tailcal.models.dataset import WeatherDataset
from tailcal.models.weather_row import CSV_COLUMNS, WeatherRow
from tailcal.services.errors import CsvParseError, DataError
from tailcal.services.result import Result, collect


logger = get_logger(__name__)

FLOAT_COLUMNS = ("ens_mean", "ens_sd", "obs")


def _parse_float(raw: str, line: int, column: str) -> Result[float]:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        return Result.fail(CsvParseError(line=line, column=column, reason=f"not a number: {raw!r}"))
    if not np.isfinite(value):
        return Result.fail(CsvParseError(line=line, column=column, reason=f"not finite: {raw!r}"))
    return Result.ok(value)


def _parse_row(record: dict, line: int) -> Result[WeatherRow]:
    values = {}
    for column in FLOAT_COLUMNS:
        parsed = _parse_float(record[column], line, column)
        if parsed.is_err():
            return parsed
        values[column] = parsed.unwrap()

    raw_doy = record["doy"]
    try:
        doy = int(raw_doy)
    except (TypeError, ValueError):
        return Result.fail(CsvParseError(line=line, column="doy", reason=f"not an integer: {raw_doy!r}"))

    return WeatherRow.create(
        station_id=record["station_id"],
        date=record["date"],
        doy=doy,
        line=line,
        **values,
    )


class WeatherCsvSource:
    """
    Load station-day rows from one CSV file.

    The header must equal the weather columns exactly, in order.
    """

    ENCODINGS = ("utf-8", "utf-8-sig", "latin-1")

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)

    def read_frame(self) -> Result[pd.DataFrame]:
        """Raw string-typed frame with a validated header."""
        if not self.path.exists():
            return Result.fail(DataError("CSV file not found", context={"path": str(self.path)}))

        last_error: Optional[Exception] = None
        for encoding in self.ENCODINGS:
            try:
                frame = pd.read_csv(self.path, encoding=encoding, dtype=str, keep_default_na=False)
                break
            except UnicodeDecodeError as e:
                last_error = e
                continue
            except pd.errors.EmptyDataError:
                return Result.fail(CsvParseError("CSV file is empty", line=1, reason="no header",
                                                 path=str(self.path)))
            except pd.errors.ParserError as e:
                return Result.fail(CsvParseError("Failed to parse CSV", reason=str(e), path=str(self.path)))
        else:
            return Result.fail(DataError(
                "Failed to load CSV with any encoding",
                context={"path": str(self.path), "error": str(last_error)}
            ))

        header = tuple(c.strip() for c in frame.columns)
        if header != CSV_COLUMNS:
            return Result.fail(CsvParseError(
                "Unexpected CSV header", line=1, column=",".join(header),
                reason=f"expected {','.join(CSV_COLUMNS)}", path=str(self.path)
            ))
        frame.columns = list(CSV_COLUMNS)
        return Result.ok(frame)

    def read_rows(self) -> Result[List[WeatherRow]]:
        """
        Validated rows in file order.

        Returns:
            Result[List[WeatherRow]]: Rows, or the first CsvParseError /
                NegativeWindError / DataError with its line number
        """
        frame = self.read_frame()
        if frame.is_err():
            return frame

        records = frame.unwrap().to_dict(orient="records")
        # data row i sits on line i + 2
        rows = collect([_parse_row(r, i + 2) for i, r in enumerate(records)])
        if rows.is_ok():
            logger.info("csv_loaded", path=str(self.path), rows=len(records))
        return rows

    def read(self, stations: Optional[Sequence[str]] = None) -> Result[WeatherDataset]:
        """Rows as a column-oriented dataset."""
        return self.read_rows().and_then(lambda rows: WeatherDataset.from_rows(rows, stations))

    def __repr__(self) -> str:
        return f"WeatherCsvSource(path='{self.path}')"


def read_csv(path: Union[str, Path]) -> Result[List[WeatherRow]]:
    return WeatherCsvSource(path).read_rows()


def write_csv(rows: Union[Sequence[WeatherRow], WeatherDataset], path: Union[str, Path]) -> Result[Path]:
    """
    Write rows as UTF-8 CSV with `\\n` line endings.

    Floats use the shortest round-trip representation, so a read returns equal rows.
    """
    path = Path(path)
    if isinstance(rows, WeatherDataset):
        frame = rows.to_frame()
    else:
        frame = pd.DataFrame([r.to_dict() for r in rows], columns=list(CSV_COLUMNS))

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    except OSError as e:
        return Result.fail(DataError("Failed to write CSV", context={"path": str(path), "error": str(e)}))

    logger.info("csv_written", path=str(path), rows=len(frame))
    return Result.ok(path)
