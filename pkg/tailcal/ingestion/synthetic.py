"""
Synthetic station wind data.

Stands in for gridded ensemble forecasts verified at stations. Each station
has a climatological wind level, a seasonal cycle and an AR(1) weather
anomaly; the ensemble mean follows the signal and the ensemble spread grows
with it. Observations are drawn from

    TN(a_s + b_s m + c_s (sin, cos)(doy), exp(d_s + e_s s), 0)

where (m, s) are the ensemble mean and standard deviation. With the tail
switch on, a hidden high-wind regime inflates the scale on a share of days,
so truncated-normal models fit to the data end up miscalibrated in the
upper tail while staying close to calibrated overall.

The exact conditional law of every row is kept as a truth table, which
gives the ideal forecaster for oracle checks.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd

from tailcal.infrastructure.logging import get_logger
from tailcal.models.dataset import WeatherDataset, season
from tailcal.models.forecast import ForecastSet
from tailcal.services.dist import Distribution, MixtureOfForecasts, TruncatedNormal
from tailcal.services.errors import ConfigError, DataError
from tailcal.services.result import Result


logger = get_logger(__name__)

TRUTH_COLUMNS = ("station_id", "date", "mu", "sigma", "storm_prob", "storm_scale")

AR_COEF = 0.7
ANOMALY_SD = 2.6
WINTER_PEAK_DOY = 15


@dataclass(frozen=True)
class SynthConfig:
    """
    Attributes:
        station_count: Number of stations
        days: Consecutive days per station
        start_date: First ISO date
        test_fraction: Trailing share of days held out
        storm_prob: Probability of the hidden high-wind regime
        storm_scale: Scale multiplier inside that regime
        tail_misspecified: Turn the high-wind regime on
        nonlinear_link: Add 2 sin(m) to the location
        seed: Generator seed
    """

    station_count: int = 24
    days: int = 730
    start_date: str = "2019-01-01"
    test_fraction: float = 0.25
    storm_prob: float = 0.10
    storm_scale: float = 2.2
    tail_misspecified: bool = True
    nonlinear_link: bool = False
    seed: int = 0

    @staticmethod
    def from_dict(section: Dict[str, Any], seed: int = 0) -> Result["SynthConfig"]:
        """
        Build from the `data.synth` config section.

        Returns:
            Result[SynthConfig]: Settings or ConfigError
        """
        fields = {k: v for k, v in section.items() if k in SynthConfig.__dataclass_fields__}
        fields.setdefault("seed", seed)
        try:
            cfg = SynthConfig(**fields)
            pd.Timestamp(cfg.start_date)
        except (TypeError, ValueError) as e:
            return Result.fail(ConfigError("Invalid synthetic data settings", context={"error": str(e)}))

        if cfg.station_count < 1 or cfg.days < 2:
            return Result.fail(ConfigError(
                "Synthetic data needs at least one station and two days",
                context={"station_count": cfg.station_count, "days": cfg.days}
            ))
        if not 0.0 <= cfg.storm_prob < 1.0 or cfg.storm_scale <= 0.0:
            return Result.fail(ConfigError(
                "Invalid high-wind regime",
                context={"storm_prob": cfg.storm_prob, "storm_scale": cfg.storm_scale}
            ))
        if not 0.0 < cfg.test_fraction < 1.0:
            return Result.fail(ConfigError("test_fraction must lie in (0, 1)",
                                           context={"test_fraction": cfg.test_fraction}))
        return Result.ok(cfg)

    @property
    def effective_storm_prob(self) -> float:
        return self.storm_prob if self.tail_misspecified else 0.0


def truth_forecast(truth: pd.DataFrame) -> Distribution:
    """Conditional law of each row from its truth table."""
    calm = TruncatedNormal(truth["mu"].to_numpy(float), truth["sigma"].to_numpy(float))
    p = truth["storm_prob"].to_numpy(float)
    if not np.any(p > 0.0):
        return calm
    storm = TruncatedNormal(calm.mu, calm.sigma * truth["storm_scale"].to_numpy(float))
    return MixtureOfForecasts(1.0 - p, calm, storm)


@dataclass(frozen=True, eq=False)
class SyntheticWeather:
    """Rows plus the truth table aligned with them."""

    dataset: WeatherDataset
    truth: pd.DataFrame

    def __len__(self) -> int:
        return len(self.dataset)

    def ideal_forecast(self) -> Distribution:
        return truth_forecast(self.truth)

    def ideal_cases(self) -> ForecastSet:
        return ForecastSet(self.ideal_forecast(), self.dataset.obs)

    def subset(self, index) -> "SyntheticWeather":
        return SyntheticWeather(self.dataset.subset(index), self.truth.iloc[index].reset_index(drop=True))

    def split(self, test_fraction: float) -> Tuple["SyntheticWeather", "SyntheticWeather"]:
        train = self.dataset.train_mask(test_fraction)
        return self.subset(np.flatnonzero(train)), self.subset(np.flatnonzero(~train))


def simulate_weather(cfg: SynthConfig) -> SyntheticWeather:
    """All station-days, date-major, reproducible from cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    S, D = cfg.station_count, cfg.days

    level = rng.uniform(4.5, 7.5, size=S)
    amplitude = rng.uniform(0.5, 1.5, size=S)
    a = rng.uniform(-0.5, 0.5, size=S)
    b = rng.uniform(0.85, 1.05, size=S)
    c_sin = rng.uniform(-0.4, 0.4, size=S)
    c_cos = rng.uniform(-0.4, 0.4, size=S)
    d = rng.uniform(-0.1, 0.2, size=S)
    e = rng.uniform(0.2, 0.4, size=S)

    dates = pd.date_range(cfg.start_date, periods=D, freq="D")
    doy = dates.dayofyear.to_numpy()
    cycle = np.cos(2.0 * np.pi * (doy - WINTER_PEAK_DOY) / 365.25)

    anomaly = np.empty((D, S))
    anomaly[0] = rng.normal(0.0, ANOMALY_SD, size=S)
    innovation = ANOMALY_SD * np.sqrt(1.0 - AR_COEF ** 2)
    for day in range(1, D):
        anomaly[day] = AR_COEF * anomaly[day - 1] + rng.normal(0.0, innovation, size=S)

    signal = level + amplitude * cycle[:, None] + anomaly
    ens_mean = np.maximum(signal, 0.0)
    ens_sd = (0.3 + 0.12 * ens_mean) * np.exp(rng.normal(0.0, 0.2, size=(D, S)))

    sin_doy, cos_doy = season(doy)
    mu = a + b * ens_mean + c_sin * sin_doy[:, None] + c_cos * cos_doy[:, None]
    if cfg.nonlinear_link:
        mu = mu + 2.0 * np.sin(ens_mean)
    sigma = np.exp(d + e * ens_sd)

    station_ids = np.array([f"S{i + 1:03d}" for i in range(S)])
    truth = pd.DataFrame({
        "station_id": np.tile(station_ids, D),
        "date": np.repeat(dates.strftime("%Y-%m-%d").to_numpy(), S),
        "mu": mu.ravel(),
        "sigma": sigma.ravel(),
        "storm_prob": cfg.effective_storm_prob,
        "storm_scale": cfg.storm_scale,
    })
    obs = truth_forecast(truth).sample(rng, 1)[:, 0]

    frame = pd.DataFrame({
        "station_id": truth["station_id"],
        "date": truth["date"],
        "doy": np.repeat(doy, S),
        "ens_mean": ens_mean.ravel(),
        "ens_sd": ens_sd.ravel(),
        "obs": obs,
    })
    dataset = WeatherDataset.from_frame(frame).unwrap()
    logger.info("synthetic_generated", stations=S, days=D, rows=len(dataset),
                storm_prob=cfg.effective_storm_prob)
    return SyntheticWeather(dataset, truth)


def generate_synth(cfg: SynthConfig) -> Tuple[SyntheticWeather, SyntheticWeather]:
    """Chronological (train, test) split of simulate_weather(cfg)."""
    return simulate_weather(cfg).split(cfg.test_fraction)


def write_truth(truth: pd.DataFrame, path: Union[str, Path]) -> Result[Path]:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        truth.loc[:, list(TRUTH_COLUMNS)].to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    except OSError as e:
        return Result.fail(DataError("Failed to write truth table", context={"path": str(path), "error": str(e)}))
    return Result.ok(path)


def read_truth(path: Union[str, Path], rows: Optional[int] = None) -> Result[pd.DataFrame]:
    """
    Truth table written next to a synthetic CSV.

    Args:
        rows: Expected row count (the paired data file)
    """
    path = Path(path)
    try:
        truth = pd.read_csv(path, dtype={"station_id": str, "date": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        return Result.fail(DataError("Failed to read truth table", context={"path": str(path), "error": str(e)}))

    missing = [c for c in TRUTH_COLUMNS if c not in truth.columns]
    if missing:
        return Result.fail(DataError("Truth table is missing columns", context={"path": str(path), "missing": missing}))
    if rows is not None and len(truth) != rows:
        return Result.fail(DataError(
            "Truth table does not match data rows",
            context={"path": str(path), "truth_rows": len(truth), "data_rows": rows}
        ))
    return Result.ok(truth)


def truth_path(data_path: Union[str, Path]) -> Path:
    """train.csv -> train_truth.csv"""
    data_path = Path(data_path)
    return data_path.with_name(f"{data_path.stem}_truth.csv")
