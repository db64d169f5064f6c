"""Data Transfer Objects (DTOs) shared by services and stages"""

from .calibration_curve import CalibrationCurve
from .dataset import WeatherDataset
from .forecast import ForecastCase, ForecastSet, as_forecast_set
from .loss_report import LossReport
from .loss_spec import LossSpec
from .model_artifact import ModelArtifact
from .weather_row import WeatherRow

__all__ = [
    "CalibrationCurve",
    "ForecastCase",
    "ForecastSet",
    "as_forecast_set",
    "LossReport",
    "LossSpec",
    "ModelArtifact",
    "WeatherDataset",
    "WeatherRow",
]
