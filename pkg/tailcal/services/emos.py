"""
EMOS: truncated-normal regression on the ensemble with seasonal harmonics.

    mu        = alpha + beta m + lambda_mu_s sin + lambda_mu_c cos
    log sigma = eta + delta s + lambda_sigma_s sin + lambda_sigma_c cos

Stations are grouped semi-locally: each station is summarised by K_q
empirical quantiles of its observations, k-means groups the stations, and
one parameter vector is fitted per cluster by minimizing a LossSpec
objective with the configured optimizer.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from sklearn.cluster import KMeans

from tailcal.infrastructure.logging import get_logger
from tailcal.models.dataset import WeatherDataset, season
from tailcal.models.forecast import ForecastSet
from tailcal.models.loss_spec import LossSpec
from tailcal.models.model_artifact import ModelArtifact
from tailcal.services.dist import TruncatedNormal
from tailcal.services.errors import (
    ConfigError,
    InsufficientDataError,
    OptimizationError,
    OptimizerAbortError,
    SchemaError,
    unknown_station,
)
from tailcal.services.loss import evaluate_loss
from tailcal.services.optim import OptimizerConfig, OptimResult, minimize


logger = get_logger(__name__)

LOG_SIGMA_CLIP = 18.0


@dataclass(frozen=True)
class EmosParams:
    """theta: location and log-scale coefficients."""

    alpha: float = 0.0
    beta: float = 1.0
    eta: float = 0.0
    delta: float = 0.0
    lambda_mu_s: float = 0.0
    lambda_mu_c: float = 0.0
    lambda_sigma_s: float = 0.0
    lambda_sigma_c: float = 0.0

    def to_vector(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @staticmethod
    def from_vector(theta: Any) -> "EmosParams":
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != 8:
            raise ConfigError("EMOS needs 8 parameters", context={"size": theta.size})
        return EmosParams(*(float(v) for v in theta))


def _link(theta: np.ndarray, ens_mean, ens_sd, doy) -> TruncatedNormal:
    """theta has shape (8,) or (n, 8) (one row per case)."""
    theta = np.asarray(theta, dtype=float)
    sin, cos = season(doy)
    t = theta.T
    mu = t[0] + t[1] * ens_mean + t[4] * sin + t[5] * cos
    log_sigma = t[2] + t[3] * ens_sd + t[6] * sin + t[7] * cos
    return TruncatedNormal(mu, np.exp(np.clip(log_sigma, -LOG_SIGMA_CLIP, LOG_SIGMA_CLIP)), 0.0)


def emos_link(params: EmosParams, ens_mean, ens_sd, doy) -> TruncatedNormal:
    """Predictive TN(mu, sigma, 0) for covariates (scalars or arrays)."""
    return _link(params.to_vector(), np.asarray(ens_mean, dtype=float),
                 np.asarray(ens_sd, dtype=float), np.asarray(doy, dtype=float))


# ============================================================================
# Station clustering
# ============================================================================

@dataclass(frozen=True, eq=False)
class StationClustering:
    """
    Attributes:
        stations: Station ids in feature-row order
        assignments: Cluster id per station
        centroids: Cluster centres in quantile-feature space, shape (k, K_q)
        k: Cluster count
        quantile_features: K_q
        inertia: Within-cluster sum of squares
    """

    stations: Tuple[str, ...]
    assignments: np.ndarray
    centroids: np.ndarray
    k: int
    quantile_features: int
    inertia: float = 0.0

    def cluster_of(self, station_index: np.ndarray) -> np.ndarray:
        station_index = np.asarray(station_index, dtype=int)
        bad = (station_index < 0) | (station_index >= len(self.stations))
        if np.any(bad):
            raise unknown_station(int(station_index[bad][0]), len(self.stations))
        return self.assignments[station_index]

    def members(self, cluster: int) -> Tuple[str, ...]:
        return tuple(s for s, c in zip(self.stations, self.assignments) if c == cluster)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "stations": list(self.stations),
            "assignments": self.assignments.tolist(),
            "centroids": self.centroids.tolist(),
            "k": self.k,
            "quantile_features": self.quantile_features,
            "inertia": self.inertia,
        }

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> "StationClustering":
        return StationClustering(
            stations=tuple(data["stations"]),
            assignments=np.asarray(data["assignments"], dtype=int),
            centroids=np.asarray(data["centroids"], dtype=float),
            k=int(data["k"]),
            quantile_features=int(data["quantile_features"]),
            inertia=float(data.get("inertia", 0.0)),
        )


def quantile_features(per_station_obs: Mapping[str, np.ndarray], count: int = 9) -> Tuple[Tuple[str, ...], np.ndarray]:
    """
    Empirical 1/(K+1), ..., K/(K+1) quantiles of each station's observations.

    Raises:
        InsufficientDataError: A station has fewer than `count` observations
    """
    stations = tuple(sorted(per_station_obs))
    levels = np.arange(1, count + 1) / (count + 1)
    rows = []
    for station in stations:
        obs = np.asarray(per_station_obs[station], dtype=float)
        if obs.size < count:
            raise InsufficientDataError(
                f"Station {station} has too few observations for clustering",
                context={"station": station, "observations": int(obs.size), "needed": count}
            )
        rows.append(np.quantile(obs, levels))
    return stations, np.vstack(rows)


def cluster_stations(
    per_station_obs: Mapping[str, np.ndarray], k: int = 4, quantile_count: int = 9, seed: int = 0
) -> StationClustering:
    """
    k-means (k-means++ seeding) on station quantile features.

    Raises:
        ConfigError: k outside [1, station count]
        InsufficientDataError: A station has fewer than K_q observations
    """
    stations, features = quantile_features(per_station_obs, quantile_count)
    if not 1 <= k <= len(stations):
        raise ConfigError("Cluster count must lie in [1, station count]",
                          context={"k": k, "stations": len(stations)})

    km = KMeans(n_clusters=k, init="k-means++", n_init=10, random_state=seed).fit(features)
    logger.info("stations_clustered", stations=len(stations), k=k, inertia=float(km.inertia_))
    return StationClustering(
        stations=stations,
        assignments=km.labels_.astype(int),
        centroids=km.cluster_centers_,
        k=k,
        quantile_features=quantile_count,
        inertia=float(km.inertia_),
    )


def elbow_report(
    per_station_obs: Mapping[str, np.ndarray], max_k: int = 8, quantile_count: int = 9, seed: int = 0
) -> pd.DataFrame:
    """Within-cluster sum of squares for k = 1..max_k (columns k, inertia)."""
    stations, features = quantile_features(per_station_obs, quantile_count)
    rows = []
    for k in range(1, min(max_k, len(stations)) + 1):
        km = KMeans(n_clusters=k, init="k-means++", n_init=10, random_state=seed).fit(features)
        rows.append({"k": k, "inertia": float(km.inertia_)})
    return pd.DataFrame(rows, columns=["k", "inertia"])


# ============================================================================
# Fitting
# ============================================================================

def initial_params(data: WeatherDataset) -> EmosParams:
    """
    Location from OLS of y on (1, m, sin, cos); eta from the log residual
    standard error; scale slope and scale harmonics start at zero.
    """
    sin, cos = data.season()
    X = np.column_stack([np.ones(len(data)), data.ens_mean, sin, cos])
    coef, *_ = np.linalg.lstsq(X, data.obs, rcond=None)
    resid = data.obs - X @ coef
    dof = max(len(data) - X.shape[1], 1)
    se = float(np.sqrt(np.sum(resid ** 2) / dof))
    return EmosParams(
        alpha=float(coef[0]),
        beta=float(coef[1]),
        eta=float(np.log(max(se, 1e-3))),
        lambda_mu_s=float(coef[2]),
        lambda_mu_c=float(coef[3]),
    )


def fit_cluster(
    data: WeatherDataset, spec: LossSpec, cfg: Optional[OptimizerConfig] = None,
    init: Optional[EmosParams] = None, cluster: Optional[int] = None,
) -> Tuple[EmosParams, OptimResult]:
    """
    Fit one parameter vector on a cluster's cases.

    Raises:
        OptimizerAbortError: Objective became non-finite; context names the cluster
    """
    cfg = cfg or OptimizerConfig()
    start = init or initial_params(data)

    def objective(theta: np.ndarray) -> float:
        forecast = _link(theta, data.ens_mean, data.ens_sd, data.doy)
        return evaluate_loss(ForecastSet(forecast, data.obs), spec).total

    try:
        result = minimize(objective, start.to_vector(), cfg)
    except OptimizationError as e:
        raise OptimizerAbortError(
            f"EMOS fit aborted: {e.message}",
            context={"cluster": cluster, **e.context}
        ) from e

    logger.info("emos_cluster_fitted", cluster=cluster, cases=len(data), value=result.final_value,
                iterations=result.iterations, fallback=result.fallback_used)
    return EmosParams.from_vector(result.params), result


@dataclass
class EmosModel:
    """Cluster parameter vectors plus the station clustering."""

    clustering: StationClustering
    params: Dict[int, EmosParams]
    loss_spec: LossSpec = field(default_factory=LossSpec)
    seed: int = 0
    fits: Dict[int, Dict[str, Any]] = field(default_factory=dict)

    def _theta_rows(self, station_index: np.ndarray) -> np.ndarray:
        clusters = self.clustering.cluster_of(station_index)
        table = np.vstack([self.params[c].to_vector() for c in range(self.clustering.k)])
        return table[clusters]

    def predict(self, data: WeatherDataset) -> TruncatedNormal:
        """
        Raises:
            UnknownStationError: A row's station was not clustered
        """
        if data.stations != self.clustering.stations:
            data = data.reindex(self.clustering.stations)
        return _link(self._theta_rows(data.station_index), data.ens_mean, data.ens_sd, data.doy)

    def forecast_set(self, data: WeatherDataset) -> ForecastSet:
        return ForecastSet(self.predict(data), data.obs, data.station_ids, data.dates)

    def to_artifact(self, provenance: Optional[Dict[str, Any]] = None) -> ModelArtifact:
        return ModelArtifact(
            family="emos",
            payload={
                "clusters": {str(c): p.to_vector().tolist() for c, p in self.params.items()},
                "clustering": self.clustering.to_dict(),
                "fits": self.fits,
            },
            loss_spec=self.loss_spec.to_dict(),
            seed=self.seed,
            gamma=self.loss_spec.gamma,
            provenance=dict(provenance or {}),
        )

    @staticmethod
    def from_artifact(artifact: ModelArtifact) -> "EmosModel":
        """
        Raises:
            SchemaError: Not an EMOS artifact or malformed payload
        """
        if artifact.family != "emos":
            raise SchemaError("Not an EMOS model", context={"family": artifact.family})
        try:
            clustering = StationClustering.from_dict(artifact.payload["clustering"])
            params = {int(c): EmosParams.from_vector(v) for c, v in artifact.payload["clusters"].items()}
        except (KeyError, TypeError, ValueError, ConfigError) as e:
            raise SchemaError("Malformed EMOS payload", context={"error": str(e)}) from e
        if sorted(params) != list(range(clustering.k)):
            raise SchemaError("EMOS payload misses cluster parameters",
                              context={"clusters": sorted(params), "k": clustering.k})
        spec = LossSpec.from_dict(artifact.loss_spec).unwrap() if artifact.loss_spec else LossSpec()
        return EmosModel(clustering, params, spec, artifact.seed, dict(artifact.payload.get("fits") or {}))


def emos_fit(
    data: WeatherDataset,
    spec: LossSpec,
    clustering: StationClustering,
    cfg: Optional[OptimizerConfig] = None,
    seed: int = 0,
    init: Optional[EmosModel] = None,
) -> EmosModel:
    """
    Fit every cluster independently.

    Args:
        init: Start each cluster from this model's parameters instead of OLS

    Raises:
        OptimizerAbortError: Any cluster fit aborted
    """
    if data.stations != clustering.stations:
        data = data.reindex(clustering.stations)
    clusters = clustering.cluster_of(data.station_index)

    params: Dict[int, EmosParams] = {}
    fits: Dict[int, Dict[str, Any]] = {}
    for c in range(clustering.k):
        rows = np.flatnonzero(clusters == c)
        if rows.size == 0:
            raise InsufficientDataError("Cluster has no training cases", context={"cluster": c})
        start = init.params[c] if init is not None else None
        params[c], result = fit_cluster(data.subset(rows), spec, cfg, start, cluster=c)
        fits[c] = result.to_dict()

    return EmosModel(clustering, params, spec, seed, fits)
