"""
Data stages.

LoadDataStage resolves the train and test periods for a command:

    --data DIR        DIR/train.csv and DIR/test.csv (gen-data layout), plus
                      DIR/*_truth.csv when present
    --data FILE.csv   one file, split chronologically by data.synth.test_fraction
    (no --data)       synthetic data generated from data.synth and the seed

GenerateDataStage writes a synthetic dataset in the gen-data layout.
"""

from pathlib import Path
from typing import Optional, Tuple

from tailcal.infrastructure.logging import get_logger
from tailcal.ingestion.data_validator import WeatherDataValidator
from tailcal.ingestion.synthetic import TRUTH_COLUMNS, SynthConfig, SyntheticWeather, generate_synth, read_truth, truth_path
from tailcal.ingestion.weather_csv import WeatherCsvSource
from tailcal.models.dataset import WeatherDataset
from tailcal.orchestration.pipeline.context import RunContext
from tailcal.services.errors import DataError
from tailcal.services.result import Result


logger = get_logger(__name__)

TRAIN_FILE = "train.csv"
TEST_FILE = "test.csv"


def synth_config(context: RunContext) -> Result[SynthConfig]:
    return SynthConfig.from_dict(context.config.get("data", {}).get("synth", {}), seed=context.seed)


def _read_with_truth(path: Path, stations=None) -> Result[Tuple[WeatherDataset, Optional[SyntheticWeather]]]:
    loaded = WeatherCsvSource(path).read(stations)
    if loaded.is_err():
        return loaded
    dataset = loaded.unwrap()

    companion = truth_path(path)
    if not companion.exists():
        return Result.ok((dataset, None))
    truth = read_truth(companion, rows=len(dataset))
    if truth.is_err():
        return truth
    return Result.ok((dataset, SyntheticWeather(dataset, truth.unwrap())))


class LoadDataStage:
    """
    Load, validate and store the train/test split.

    Context outputs:
    - train, test: WeatherDataset
    - truth_train, truth_test: SyntheticWeather (synthetic data only)
    - documents["data_quality.json"]: L2 metrics of both periods
    """

    def __init__(self, validator: Optional[WeatherDataValidator] = None):
        self.validator = validator or WeatherDataValidator()

    def execute(self, context: RunContext) -> Result[RunContext]:
        data = context.option("data")
        threshold = float(context.config.get("data", {}).get("threshold", 12.5))
        log = logger.bind(command=context.command)
        log.info("load_started", data=data or "synthetic")

        split = self._load(context, None if data is None else Path(data))
        if split.is_err():
            return split
        train, test = split.unwrap()

        for dataset in (train, test):
            checked = self.validator.validate_l1(dataset)
            if checked.is_err():
                return checked
        checked = self.validator.validate_split(train, test)
        if checked.is_err():
            return checked

        quality = {
            "train": self.validator.calculate_l2_metrics(train, threshold),
            "test": self.validator.calculate_l2_metrics(test, threshold),
        }
        for period, metrics in quality.items():
            for warning in metrics["warnings"]:
                log.warning("data_quality", period=period, warning=warning)

        context.set("train", train)
        context.set("test", test)
        context.documents["data_quality.json"] = quality
        log.info("load_completed", train_rows=len(train), test_rows=len(test), stations=train.station_count)
        return Result.ok(context)

    def _load(self, context: RunContext, data: Optional[Path]) -> Result[Tuple[WeatherDataset, WeatherDataset]]:
        if data is None:
            cfg = synth_config(context)
            if cfg.is_err():
                return cfg
            train, test = generate_synth(cfg.unwrap())
            context.set("truth_train", train)
            context.set("truth_test", test)
            return Result.ok((train.dataset, test.dataset))

        if data.is_dir():
            train = _read_with_truth(data / TRAIN_FILE)
            if train.is_err():
                return train
            train_data, train_truth = train.unwrap()
            test = _read_with_truth(data / TEST_FILE, train_data.stations)
            if test.is_err():
                return test
            test_data, test_truth = test.unwrap()
            if train_truth is not None and test_truth is not None:
                context.set("truth_train", train_truth)
                context.set("truth_test", test_truth)
            return Result.ok((train_data, test_data))

        if not data.exists():
            return Result.fail(DataError("Data path not found", context={"path": str(data)}))

        loaded = _read_with_truth(data)
        if loaded.is_err():
            return loaded
        dataset, truth = loaded.unwrap()
        cfg = synth_config(context)
        if cfg.is_err():
            return cfg
        fraction = cfg.unwrap().test_fraction
        if truth is not None:
            truth_train, truth_test = truth.split(fraction)
            context.set("truth_train", truth_train)
            context.set("truth_test", truth_test)
            return Result.ok((truth_train.dataset, truth_test.dataset))
        return Result.ok(dataset.split_chronological(fraction))


class GenerateDataStage:
    """
    Synthetic train/test CSVs with their truth tables.

    Context outputs:
    - train, test, truth_train, truth_test
    - tables: train.csv, test.csv, train_truth.csv, test_truth.csv
    """

    def execute(self, context: RunContext) -> Result[RunContext]:
        cfg = synth_config(context)
        if cfg.is_err():
            return cfg
        train, test = generate_synth(cfg.unwrap())

        for name, part in ((TRAIN_FILE, train), (TEST_FILE, test)):
            context.tables[name] = part.dataset.to_frame()
            context.tables[truth_path(name).name] = part.truth.loc[:, list(TRUTH_COLUMNS)]

        context.set("train", train.dataset)
        context.set("test", test.dataset)
        context.set("truth_train", train)
        context.set("truth_test", test)

        threshold = float(context.config.get("data", {}).get("threshold", 12.5))
        context.documents["data_quality.json"] = {
            "train": WeatherDataValidator().calculate_l2_metrics(train.dataset, threshold),
            "test": WeatherDataValidator().calculate_l2_metrics(test.dataset, threshold),
        }
        logger.info("data_generated", train_rows=len(train), test_rows=len(test), seed=cfg.unwrap().seed)
        return Result.ok(context)
