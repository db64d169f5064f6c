"""
Ingestion module for loading, validating and generating weather data.

This module provides the station-day CSV source, dataset validation and
the synthetic data generator.
"""

from .weather_csv import WeatherCsvSource, read_csv, write_csv
from .data_validator import WeatherDataValidator
from .synthetic import (
    SynthConfig,
    SyntheticWeather,
    generate_synth,
    read_truth,
    simulate_weather,
    truth_forecast,
    truth_path,
    write_truth,
)

__all__ = [
    'WeatherCsvSource',
    'read_csv',
    'write_csv',
    'WeatherDataValidator',
    'SynthConfig',
    'SyntheticWeather',
    'generate_synth',
    'read_truth',
    'simulate_weather',
    'truth_forecast',
    'truth_path',
    'write_truth',
]
