"""
Model stages.

    ClusterStage     EMOS station clusters and the elbow report
    ReplicateStage   baseline training and penalized finetuning over replicates
                     (train, finetune and sweep commands)
    EvaluateStage    metric table and skill against a baseline
    DiagnoseStage    PIT / CPIT / R-hat curves and histograms

Evaluate and diagnose take forecasters by reference: a model file, a run
directory (every models/*.json in it) or `truth` for the recorded
conditional distribution of synthetic data.
"""

from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from tailcal.infrastructure.logging import get_logger
from tailcal.models.dataset import WeatherDataset
from tailcal.models.forecast import ForecastSet
from tailcal.models.loss_spec import LossSpec
from tailcal.orchestration.pipeline.context import RunContext
from tailcal.services.calib import cpit_set, default_u_grid, pit_curve, pit_set, rhat_curve
from tailcal.services.emos import cluster_stations, elbow_report
from tailcal.services.errors import CalibrationError, ConfigError, DataError, TailCalError
from tailcal.services.metrics import METRIC_COLUMNS, evaluate_forecasts, pit_histogram, skill_table
from tailcal.services.replicates import (
    BASELINE,
    FamilySettings,
    forecast_cases,
    improvement_fit,
    improvement_scatter,
    run_replicates,
    sign_test,
    summarize,
    sweep_trajectory,
    violin_data,
)
from tailcal.services.result import Result, collect, from_optional
from tailcal.storage.model_store import load_model, restore_model


logger = get_logger(__name__)

TRUTH = "truth"


def family_settings(context: RunContext, family: Optional[str] = None) -> Result[FamilySettings]:
    return FamilySettings.from_config(context.config, family or context.option("model", "drn"))


# ============================================================================
# Clustering
# ============================================================================

class ClusterStage:
    """
    Context outputs:
    - documents["clusters.json"]: station assignments and centroids
    - tables["elbow.csv"]: inertia for k = 1..emos.elbow_max_k
    """

    def execute(self, context: RunContext) -> Result[RunContext]:
        train: WeatherDataset = context.require("train")
        section = context.config.get("emos", {})
        k = int(section.get("clusters", 4))
        quantiles = int(section.get("quantile_features", 9))

        per_station = train.by_station()
        clustering = cluster_stations(per_station, k, quantiles, context.seed)
        context.set("clustering", clustering)
        context.documents["clusters.json"] = clustering.to_dict()
        context.tables["elbow.csv"] = elbow_report(per_station, int(section.get("elbow_max_k", 8)),
                                                   quantiles, context.seed)
        return Result.ok(context)


# ============================================================================
# Replicate suites
# ============================================================================

def load_baselines(directory: Path, family: str) -> Result[List[Any]]:
    """Baseline models of a previous run, in replicate order."""
    models_dir = directory / "models" if (directory / "models").is_dir() else directory
    paths = sorted(models_dir.glob(f"{family}_{BASELINE}_r*.json"))
    if not paths:
        return Result.fail(DataError("No baseline models found", context={"path": str(models_dir), "family": family}))
    return collect([load_model(p).and_then(restore_model) for p in paths])


class ReplicateStage:
    """
    Run a replicate suite for one family.

    Args:
        finetune: Finetune each baseline on the penalized objectives
        penalties: Finetuning penalties (None: the family's configured list)
        gammas: Penalty weights (None: the family's grid); zeros are dropped
            since the baseline row is the gamma = 0 point
        trajectory: Also emit sweep trajectory data

    Context outputs:
    - tables: metrics.csv, summary.csv, skill.csv, violin.csv, and with
      objectives scatter.csv, scatter_fit.csv, sign_tests.csv (and trajectory.csv)
    - tables["histories/<artifact>.csv"]: training histories
    - models: one artifact per replicate and objective
    - failures: failed replicates and finetuning cells
    """

    def __init__(
        self,
        finetune: bool = False,
        penalties: Optional[Sequence[str]] = None,
        gammas: Optional[Sequence[float]] = None,
        trajectory: bool = False,
    ):
        self.finetune = finetune
        self.penalties = None if penalties is None else list(penalties)
        self.gammas = None if gammas is None else [float(g) for g in gammas]
        self.trajectory = trajectory

    def objectives(self, settings: FamilySettings) -> Result[List[LossSpec]]:
        if not self.finetune:
            return Result.ok([])
        gammas = [g for g in (self.gammas if self.gammas is not None else settings.gamma_grid) if g != 0]
        return settings.objectives(self.penalties, gammas)

    def execute(self, context: RunContext) -> Result[RunContext]:
        settings = family_settings(context)
        if settings.is_err():
            return settings
        settings = settings.unwrap()

        objectives = self.objectives(settings)
        if objectives.is_err():
            return objectives
        objectives = objectives.unwrap()

        baselines = None
        if context.option("baseline"):
            loaded = load_baselines(Path(context.option("baseline")), settings.family)
            if loaded.is_err():
                return loaded
            baselines = loaded.unwrap()

        workers = int(context.config.get("system", {}).get("parallelization", {}).get("max_workers", 1))
        suite = run_replicates(
            settings, context.require("train"), context.require("test"), context.seed, objectives,
            replicates=context.option("replicates"), max_workers=workers, baselines=baselines,
        )
        for _ in range(suite.records["replicate"].nunique()):
            context.metrics.record_replicate(True)
        for _ in (f for f in suite.failures if f["label"] == BASELINE):
            context.metrics.record_replicate(False)
        context.add_failures("replicate", suite.failures)

        if suite.records.empty:
            return Result.fail(TailCalError("Every replicate failed", context={"family": settings.family,
                                                                             "failures": len(suite.failures)}))

        records = suite.records
        context.set("records", records)
        context.tables["metrics.csv"] = records
        context.tables["summary.csv"] = summarize(records)
        context.tables["violin.csv"] = violin_data(records)
        means = records.groupby("label", sort=False)[list(METRIC_COLUMNS)].mean().reset_index()
        context.tables["skill.csv"] = skill_table(means, BASELINE)

        labels = [s.label for s in objectives if s.label in set(records["label"])]
        if labels:
            scatter = improvement_scatter(records)
            context.tables["scatter.csv"] = scatter
            context.tables["scatter_fit.csv"] = improvement_fit(scatter)
            context.tables["sign_tests.csv"] = pd.DataFrame(
                [sign_test(records, label, metric) for label in labels for metric in METRIC_COLUMNS]
            )
        if self.trajectory:
            context.tables["trajectory.csv"] = sweep_trajectory(records)

        for name, history in suite.histories.items():
            if not history.empty:
                context.tables[f"histories/{name}.csv"] = history
        context.models.update(suite.artifacts)
        return Result.ok(context)


# ============================================================================
# Evaluation and diagnostics
# ============================================================================

def _model_files(ref: str) -> Result[List[Path]]:
    path = Path(ref)
    if path.is_dir():
        models_dir = path / "models" if (path / "models").is_dir() else path
        files = sorted(models_dir.glob("*.json"))
        if not files:
            return Result.fail(DataError("No model files found", context={"path": str(models_dir)}))
        return Result.ok(files)
    if not path.exists():
        return Result.fail(DataError("Model file not found", context={"path": ref}))
    return Result.ok([path])


def resolve_forecasts(context: RunContext, refs: Sequence[str]) -> Result[List[Tuple[str, ForecastSet]]]:
    """
    (label, test forecasts) for every forecaster reference.

    Model files are labelled by their stem; `truth` by itself.
    """
    test: WeatherDataset = context.require("test")
    forecasts: List[Tuple[str, ForecastSet]] = []
    for ref in refs:
        if ref == TRUTH:
            truth = from_optional(context.get("truth_test"),
                                  DataError("No truth table for these data", context={"data": context.option("data")}))
            if truth.is_err():
                return truth
            forecasts.append((TRUTH, truth.unwrap().ideal_cases()))
            continue

        files = _model_files(ref)
        if files.is_err():
            return files
        for path in files.unwrap():
            artifact = load_model(path)
            if artifact.is_err():
                return artifact
            restored = restore_model(artifact.unwrap())
            if restored.is_err():
                return restored
            settings = family_settings(context, artifact.unwrap().family)
            if settings.is_err():
                return settings
            cases = forecast_cases(settings.unwrap(), restored.unwrap(), test, context.seed)
            forecasts.append((path.stem, cases))
    return Result.ok(forecasts)


def _loss_settings(context: RunContext) -> Tuple[float, str, str]:
    loss = context.config.get("loss", {})
    threshold = float(context.config.get("data", {}).get("threshold", loss.get("threshold", 12.5)))
    return threshold, loss.get("divergence", "w1"), loss.get("estimator", "exact")


class EvaluateStage:
    """
    Context outputs:
    - tables["metrics.csv"]: one row per forecaster
    - tables["skill.csv"]: skill percentages against the baseline forecaster
    """

    def execute(self, context: RunContext) -> Result[RunContext]:
        refs = list(context.option("models") or [])
        baseline = context.option("baseline")
        if not refs:
            return Result.fail(ConfigError("evaluate needs --model"))

        resolved = resolve_forecasts(context, refs + ([baseline] if baseline else []))
        if resolved.is_err():
            return resolved
        forecasts = resolved.unwrap()
        threshold, divergence, estimator = _loss_settings(context)

        rows: List[Dict[str, Any]] = []
        for label, cases in forecasts:
            row = evaluate_forecasts(cases, threshold, divergence, estimator, rng=context.rng(1))
            rows.append({"label": label, **row})
            logger.info("forecaster_evaluated", label=label, crps=row["crps"], mcb=row["mcb"], tmcb=row["tmcb"])
        context.metrics.record_evaluations(len(rows))

        metrics = pd.DataFrame(rows)
        if baseline:
            # baseline first: skill_table scores against the first row with its label
            base, models = metrics.iloc[[-1]], metrics.iloc[:-1]
            table = skill_table(pd.concat([base, models], ignore_index=True), base["label"].iloc[0])
            context.tables["skill.csv"] = table.iloc[1:].reset_index(drop=True)
            if base["label"].iloc[0] in set(models["label"]):
                metrics = models
        context.tables["metrics.csv"] = metrics.reset_index(drop=True)
        return Result.ok(context)


class DiagnoseStage:
    """
    Context outputs per forecaster label:
    - curves: <label>_pit, <label>_cpit, <label>_rhat
    - tables: histograms/<label>_pit.csv, histograms/<label>_cpit.csv
    - tables["metrics.csv"]: metric row per forecaster
    """

    def execute(self, context: RunContext) -> Result[RunContext]:
        refs = list(context.option("models") or [])
        if not refs:
            return Result.fail(ConfigError("diagnose needs --model"))
        resolved = resolve_forecasts(context, refs)
        if resolved.is_err():
            return resolved

        scoring = context.config.get("scoring", {})
        u_grid = default_u_grid(int(scoring.get("u_grid_points", 101)))
        bins = int(scoring.get("histogram_bins", 20))
        threshold, divergence, estimator = _loss_settings(context)

        rows = []
        for label, cases in resolved.unwrap():
            pits = pit_set(cases, context.rng(1))
            cpits = cpit_set(cases, threshold)
            context.curves[f"{label}_pit"] = pit_curve(pits, u_grid).to_frame()
            context.curves[f"{label}_cpit"] = pit_curve(cpits, u_grid).to_frame()
            context.tables[f"histograms/{label}_pit.csv"] = pit_histogram(pits, bins)
            context.tables[f"histograms/{label}_cpit.csv"] = pit_histogram(cpits, bins)
            try:
                context.curves[f"{label}_rhat"] = rhat_curve(cases, threshold, u_grid).to_frame()
            except CalibrationError as e:
                logger.warning("rhat_undefined", label=label, error=e.message)
                context.add_failures("curve", [{"label": f"{label}_rhat", "error": type(e).__name__,
                                                "message": str(e)}])
            rows.append({"label": label, **evaluate_forecasts(cases, threshold, divergence, estimator,
                                                              rng=context.rng(1))})
            logger.info("forecaster_diagnosed", label=label, pit=len(pits), cpit=len(cpits))

        context.tables["metrics.csv"] = pd.DataFrame(rows)
        return Result.ok(context)
