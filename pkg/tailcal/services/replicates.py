"""
Replicate suites.

A replicate trains one baseline model of a family with its own seed, then
finetunes a copy for every (penalty, gamma) objective and evaluates all of
them on the test period. Replicates are independent and run through
joblib; a failed replicate or finetuning cell is recorded and the suite
continues.

Suite outputs:
    records         one metric row per (replicate, objective)
    summary         mean, standard deviation and coefficient of variation per objective
    violin data     long-format metric values per replicate
    scatter data    TMCB improvement against baseline TMCB, with fitted lines
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import stats

from tailcal.infrastructure.logging import get_logger
from tailcal.models.dataset import WeatherDataset
from tailcal.models.forecast import ForecastSet
from tailcal.models.loss_spec import LossSpec
from tailcal.models.model_artifact import FAMILIES, ModelArtifact
from tailcal.services.cgm import CgmModel, cgm_finetune, cgm_train
from tailcal.services.drn import NetConfig, drn_finetune, drn_train
from tailcal.services.emos import cluster_stations, emos_fit
from tailcal.services.errors import ConfigError, TailCalError, TrainingError
from tailcal.services.metrics import METRIC_COLUMNS, evaluate_forecasts
from tailcal.services.optim import OptimizerConfig
from tailcal.services.result import Result, collect, from_exception, partition


logger = get_logger(__name__)

BASELINE = "baseline"
RECORD_COLUMNS = ("family", "label", "penalty", "gamma", "replicate", "seed", "n", "exceedances", "ohat",
                  *METRIC_COLUMNS)


@dataclass(frozen=True)
class FamilySettings:
    """
    Everything needed to train, finetune and evaluate one model family.

    Attributes:
        family: emos | drn | cgm
        base_spec: Finetuning objective without penalty (base score, threshold, divergence, nu)
        optim: Optimizer settings (EMOS fits)
        net: Network settings (DRN, CGM)
        clusters: EMOS station clusters
        quantile_features: EMOS clustering features per station
        gamma_grid: Penalty weights of the finetuning grid
        penalties: Penalties of the finetuning grid
        replicates: Replicates per suite
    """

    family: str
    base_spec: LossSpec
    optim: OptimizerConfig = field(default_factory=OptimizerConfig)
    net: NetConfig = field(default_factory=NetConfig)
    clusters: int = 4
    quantile_features: int = 9
    gamma_grid: Tuple[float, ...] = (1.0,)
    penalties: Tuple[str, ...] = ("tmcb",)
    replicates: int = 1

    @staticmethod
    def from_config(config: Mapping[str, Any], family: str) -> Result["FamilySettings"]:
        """
        Resolve family settings from a loaded configuration.

        The tail threshold comes from `data.threshold`; the base score,
        divergence and estimator from `loss`; the PIT smoothing width from
        the family section when it sets one.
        """
        if family not in FAMILIES:
            return Result.fail(ConfigError(f"Unknown model family: {family}", context={"valid": FAMILIES}))
        section = dict(config.get(family) or {})
        loss = dict(config.get("loss") or {})

        base = LossSpec.create(
            base=loss.get("base", "fair_crps" if family == "cgm" else "crps"),
            threshold=config.get("data", {}).get("threshold", loss.get("threshold", 12.5)),
            divergence=loss.get("divergence", "w1"),
            estimator=loss.get("estimator", "exact"),
            nu=section.get("nu", loss.get("nu")),
        )
        if base.is_err():
            return base

        optim = OptimizerConfig.from_dict(config.get("optim") or {})
        if optim.is_err():
            return optim
        net = NetConfig.from_dict(section)
        if net.is_err():
            return net

        try:
            settings = FamilySettings(
                family=family,
                base_spec=base.unwrap(),
                optim=optim.unwrap(),
                net=net.unwrap(),
                clusters=int(section.get("clusters", 4)),
                quantile_features=int(section.get("quantile_features", 9)),
                gamma_grid=tuple(float(g) for g in section.get("gamma_grid", [1.0])),
                penalties=tuple(str(p) for p in section.get("penalties", ["tmcb"])),
                replicates=int(section.get("replicates", 1)),
            )
        except (TypeError, ValueError) as e:
            return Result.fail(ConfigError("Invalid family settings", context={"family": family, "error": str(e)}))

        if settings.replicates < 1:
            return Result.fail(ConfigError("replicates must be >= 1", context={"replicates": settings.replicates}))
        if any(g < 0 for g in settings.gamma_grid):
            return Result.fail(ConfigError("gamma_grid must be nonnegative", context={"grid": settings.gamma_grid}))
        return Result.ok(settings)

    def spec(self, penalty: str = "none", gamma: float = 0.0) -> Result[LossSpec]:
        """Finetuning objective for one penalty weight."""
        b = self.base_spec
        return LossSpec.create(base=b.base, penalty=penalty, gamma=gamma, threshold=b.threshold,
                               divergence=b.divergence, nu=b.nu, estimator=b.estimator)

    def objectives(
        self, penalties: Optional[Sequence[str]] = None, gammas: Optional[Sequence[float]] = None
    ) -> Result[List[LossSpec]]:
        """Every (penalty, gamma) objective of the grid, in grid order."""
        penalties = list(penalties if penalties is not None else self.penalties)
        gammas = list(gammas if gammas is not None else self.gamma_grid)
        return collect([self.spec(p, g) for p in penalties for g in gammas])


# ============================================================================
# Per-family training
# ============================================================================

def train_baseline(settings: FamilySettings, train: WeatherDataset, seed: int) -> Tuple[Any, pd.DataFrame]:
    """
    Fit the CRPS baseline of a family.

    Returns:
        (model, history)
    """
    if settings.family == "emos":
        clustering = cluster_stations(train.by_station(), settings.clusters, settings.quantile_features, seed)
        spec = settings.spec().unwrap()
        model = emos_fit(train, spec, clustering, settings.optim, seed=seed)
        history = pd.DataFrame([{"cluster": c, **fit} for c, fit in sorted(model.fits.items())])
        return model, history
    if settings.family == "drn":
        return drn_train(train, settings.net, seed=seed)
    return cgm_train(train, settings.net, seed=seed)


def finetune(settings: FamilySettings, model: Any, train: WeatherDataset, spec: LossSpec, seed: int
             ) -> Tuple[Any, pd.DataFrame]:
    """Continue training a baseline model on a penalized objective."""
    net = settings.net
    if settings.family == "emos":
        tuned = emos_fit(train, spec, model.clustering, settings.optim, seed=seed, init=model)
        history = pd.DataFrame([{"cluster": c, **fit} for c, fit in sorted(tuned.fits.items())])
        return tuned, history
    if settings.family == "drn":
        return drn_finetune(model, train, spec, net.finetune_steps, net.finetune_learning_rate)
    return cgm_finetune(model, train, spec, net.finetune_steps, net.finetune_learning_rate,
                        members=net.finetune_members, penalty_members=net.penalty_members, seed=seed)


def forecast_cases(settings: FamilySettings, model: Any, data: WeatherDataset, seed: int) -> ForecastSet:
    """Test forecasts; generated families draw settings.net.members members."""
    if isinstance(model, CgmModel):
        ensemble = model.generate(data, settings.net.members, np.random.default_rng(seed))
        return ForecastSet(ensemble, data.obs, data.station_ids, data.dates)
    return model.forecast_set(data)


def evaluate_model(settings: FamilySettings, model: Any, data: WeatherDataset, seed: int) -> Dict[str, Any]:
    cases = forecast_cases(settings, model, data, seed)
    b = settings.base_spec
    return evaluate_forecasts(cases, b.threshold, b.divergence, b.estimator, rng=np.random.default_rng(seed + 1))


# ============================================================================
# Replicates
# ============================================================================

@dataclass
class ReplicateOutcome:
    """Records, artifacts and finetuning failures of one replicate."""

    replicate: int
    seed: int
    records: List[Dict[str, Any]] = field(default_factory=list)
    artifacts: Dict[str, ModelArtifact] = field(default_factory=dict)
    histories: Dict[str, pd.DataFrame] = field(default_factory=dict)
    failures: List[Dict[str, Any]] = field(default_factory=list)


def artifact_name(family: str, label: str, replicate: int) -> str:
    """emos_baseline_r00, drn_tmcb_g5_r03, ..."""
    return f"{family}_{label}_r{replicate:02d}"


def run_replicate(
    settings: FamilySettings,
    train: WeatherDataset,
    test: WeatherDataset,
    replicate: int,
    seed: int,
    objectives: Sequence[LossSpec] = (),
    baseline: Optional[Any] = None,
) -> ReplicateOutcome:
    """
    Baseline plus one finetuned model per objective.

    A given baseline (a loaded model) is evaluated instead of trained.

    Raises:
        TailCalError: The baseline failed; finetuning failures are recorded instead
    """
    log = logger.bind(family=settings.family, replicate=replicate)
    outcome = ReplicateOutcome(replicate=replicate, seed=seed)

    def record(label: str, spec: LossSpec, model: Any, history: pd.DataFrame) -> None:
        row = {"family": settings.family, "label": label, "penalty": spec.penalty, "gamma": spec.gamma,
               "replicate": replicate, "seed": seed, **evaluate_model(settings, model, test, seed)}
        outcome.records.append(row)
        name = artifact_name(settings.family, label, replicate)
        outcome.artifacts[name] = model.to_artifact({"replicate": replicate, "label": label})
        outcome.histories[name] = history
        log.info("model_evaluated", label=label, crps=row["crps"], mcb=row["mcb"], tmcb=row["tmcb"])

    if baseline is None:
        baseline, history = train_baseline(settings, train, seed)
    else:
        history = pd.DataFrame()
    record(BASELINE, settings.spec().unwrap(), baseline, history)

    for spec in objectives:
        done = from_exception(lambda: record(spec.label, spec, *finetune(settings, baseline, train, spec, seed)),
                              TailCalError)
        if done.is_err():
            e = done.unwrap_err()
            log.warning("finetune_failed", label=spec.label, error=str(e))
            outcome.failures.append({"replicate": replicate, "label": spec.label,
                                     "error": type(e).__name__, "message": str(e)})

    return outcome


def _run_replicate_safe(
    settings: FamilySettings,
    train: WeatherDataset,
    test: WeatherDataset,
    replicate: int,
    seed: int,
    objectives: Sequence[LossSpec],
    baseline: Optional[Any] = None,
) -> Result[ReplicateOutcome]:
    try:
        return Result.ok(run_replicate(settings, train, test, replicate, seed, objectives, baseline))
    except TailCalError as e:
        e.context.setdefault("replicate", replicate)
        return Result.fail(e)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
        return Result.fail(TrainingError(
            "Replicate failed", context={"replicate": replicate, "error": f"{type(e).__name__}: {e}"}
        ))


@dataclass
class ReplicateSuite:
    family: str
    records: pd.DataFrame
    artifacts: Dict[str, ModelArtifact] = field(default_factory=dict)
    histories: Dict[str, pd.DataFrame] = field(default_factory=dict)
    failures: List[Dict[str, Any]] = field(default_factory=list)


def run_replicates(
    settings: FamilySettings,
    train: WeatherDataset,
    test: WeatherDataset,
    base_seed: int,
    objectives: Sequence[LossSpec] = (),
    replicates: Optional[int] = None,
    max_workers: int = 1,
    baselines: Optional[Sequence[Any]] = None,
) -> ReplicateSuite:
    """
    Independent replicates with seeds base_seed + r.

    With `baselines`, replicate r finetunes baselines[r] and the replicate
    count is len(baselines).

    Results are assembled in replicate order regardless of worker count, so
    the record table does not depend on max_workers.
    """
    count = len(baselines) if baselines is not None else (replicates or settings.replicates)
    logger.info("replicates_started", family=settings.family, replicates=count,
                objectives=len(objectives), workers=max_workers)

    results = Parallel(n_jobs=max_workers)(
        delayed(_run_replicate_safe)(settings, train, test, r, base_seed + r, list(objectives),
                                     None if baselines is None else baselines[r])
        for r in range(count)
    )
    outcomes, errors = partition(results)

    failures: List[Dict[str, Any]] = []
    for e in errors:
        context = getattr(e, "context", {})
        failures.append({"replicate": context.get("replicate"), "label": BASELINE,
                         "error": type(e).__name__, "message": str(e)})
        logger.error("replicate_failed", family=settings.family, replicate=context.get("replicate"), error=str(e))

    suite = ReplicateSuite(family=settings.family, records=pd.DataFrame(columns=list(RECORD_COLUMNS)))
    rows: List[Dict[str, Any]] = []
    for outcome in sorted(outcomes, key=lambda o: o.replicate):
        rows.extend(outcome.records)
        suite.artifacts.update(outcome.artifacts)
        suite.histories.update(outcome.histories)
        failures.extend(outcome.failures)
    if rows:
        suite.records = pd.DataFrame.from_records(rows, columns=list(RECORD_COLUMNS))
    suite.failures = sorted(failures, key=lambda f: (f["replicate"] is None, f["replicate"] or 0, f["label"]))

    logger.info("replicates_completed", family=settings.family, completed=len(outcomes), failed=len(errors))
    return suite


# ============================================================================
# Suite summaries
# ============================================================================

GROUP_COLUMNS = ["family", "label", "penalty", "gamma"]


def summarize(records: pd.DataFrame) -> pd.DataFrame:
    """Mean, standard deviation and coefficient of variation of every metric per objective."""
    rows = []
    for key, group in records.groupby(GROUP_COLUMNS, sort=False):
        row = dict(zip(GROUP_COLUMNS, key))
        row["replicates"] = len(group)
        for metric in METRIC_COLUMNS:
            values = group[metric].to_numpy(dtype=float)
            mean = float(np.nanmean(values)) if np.any(np.isfinite(values)) else float("nan")
            sd = float(np.nanstd(values, ddof=1)) if np.sum(np.isfinite(values)) > 1 else float("nan")
            row[f"{metric}_mean"] = mean
            row[f"{metric}_sd"] = sd
            row[f"{metric}_cv"] = sd / mean if np.isfinite(mean) and mean != 0.0 else float("nan")
        rows.append(row)
    return pd.DataFrame(rows)


def violin_data(records: pd.DataFrame) -> pd.DataFrame:
    """Long format: family, label, replicate, metric, value."""
    return records.melt(
        id_vars=["family", "label", "replicate"], value_vars=list(METRIC_COLUMNS),
        var_name="metric", value_name="value",
    )


def improvement_scatter(records: pd.DataFrame, metric: str = "tmcb") -> pd.DataFrame:
    """
    Per replicate and objective: baseline value, model value and improvement
    (baseline - model, positive is better).
    """
    base = records[records["label"] == BASELINE][["family", "replicate", metric]]
    base = base.rename(columns={metric: f"baseline_{metric}"})
    others = records[records["label"] != BASELINE][["family", "label", "replicate", metric]]
    merged = others.merge(base, on=["family", "replicate"], how="inner")
    merged["improvement"] = merged[f"baseline_{metric}"] - merged[metric]
    return merged.reset_index(drop=True)


def improvement_fit(scatter: pd.DataFrame, metric: str = "tmcb") -> pd.DataFrame:
    """Least-squares line of improvement on the baseline value per objective."""
    rows = []
    for (family, label), group in scatter.groupby(["family", "label"], sort=False):
        x = group[f"baseline_{metric}"].to_numpy(dtype=float)
        y = group["improvement"].to_numpy(dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        x, y = x[ok], y[ok]
        if x.size < 2 or np.ptp(x) == 0.0:
            slope = intercept = rvalue = float("nan")
        else:
            fit = stats.linregress(x, y)
            slope, intercept, rvalue = float(fit.slope), float(fit.intercept), float(fit.rvalue)
        rows.append({"family": family, "label": label, "points": int(x.size),
                     "slope": slope, "intercept": intercept, "rvalue": rvalue})
    return pd.DataFrame(rows, columns=["family", "label", "points", "slope", "intercept", "rvalue"])


def sign_test(records: pd.DataFrame, label: str, metric: str) -> Dict[str, Any]:
    """
    Paired sign test of `label` against the baseline over replicates.

    Returns:
        dict with improved / worse counts (ties dropped) and the one-sided
        binomial p-value for improvement
    """
    scatter = improvement_scatter(records[records["label"].isin([BASELINE, label])], metric)
    diff = scatter["improvement"].to_numpy(dtype=float)
    diff = diff[np.isfinite(diff) & (diff != 0.0)]
    improved, worse = int(np.sum(diff > 0)), int(np.sum(diff < 0))
    p_value = float(stats.binomtest(improved, improved + worse, 0.5, alternative="greater").pvalue) \
        if improved + worse else float("nan")
    return {"label": label, "metric": metric, "improved": improved, "worse": worse, "p_value": p_value}


def sweep_trajectory(records: pd.DataFrame) -> pd.DataFrame:
    """
    Mean test MCB and TMCB per (penalty, gamma), starting at gamma = 0.

    One trajectory per penalty through the MCB-TMCB plane. The baseline
    stands in for gamma = 0 unless that penalty was finetuned at gamma = 0.
    """
    means = records.groupby(GROUP_COLUMNS, sort=False)[list(METRIC_COLUMNS)].mean().reset_index()
    base = means[means["label"] == BASELINE]
    rows = []
    for penalty in [p for p in means["penalty"].unique() if p != "none"]:
        path = means[means["penalty"] == penalty]
        if not (path["gamma"] == 0.0).any():
            for _, b in base.iterrows():
                rows.append({**b.to_dict(), "penalty": penalty, "gamma": 0.0})
        rows.extend(path.to_dict(orient="records"))
    frame = pd.DataFrame(rows, columns=list(means.columns))
    return frame.sort_values(["family", "penalty", "gamma"], kind="stable").reset_index(drop=True)
