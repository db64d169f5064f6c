"""
Distributional regression network.

Inputs per case: standardized ensemble mean and spread, the seasonal
harmonics and a learned 2-d station embedding. Two hidden ReLU layers feed
a linear head whose outputs are mu and log sigma of a truncated normal
on [0, inf).

Pre-training minimizes the closed-form CRPS with minibatch Adam;
finetuning runs full-batch Adam on any LossSpec objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from tailcal.infrastructure.logging import get_logger
from tailcal.models.dataset import WeatherDataset
from tailcal.models.forecast import ForecastSet
from tailcal.models.loss_report import LossReport
from tailcal.models.loss_spec import LossSpec
from tailcal.models.model_artifact import ModelArtifact
from tailcal.services.dist import TruncatedNormal
from tailcal.services.errors import ConfigError, DivergenceError, SchemaError
from tailcal.services.loss import evaluate_loss, evaluate_loss_with_grad
from tailcal.services.nnet import EmbeddingTable, Mlp, Tape
from tailcal.services.optim import AdamState, adam_step
from tailcal.services.result import Result


logger = get_logger(__name__)

LOG_SIGMA_CLIP = 18.0
EMBEDDING_DIM = 2


@dataclass(frozen=True)
class NetConfig:
    """
    Training settings shared by the network families.

    Attributes:
        hidden: Hidden layer widths
        epochs: Pre-training epochs
        batch_size: Pre-training minibatch size
        learning_rate: Pre-training Adam step size
        finetune_steps: Full-batch finetuning steps
        finetune_learning_rate: Finetuning Adam step size
        members: Generated ensemble size (sample-based families)
        finetune_members: Ensemble size of the finetuning base score
        penalty_members: Ensemble size of smoothed penalties
        latent_dim: Noise dimension (sample-based families)
    """

    hidden: Tuple[int, ...] = (16, 16)
    epochs: int = 40
    batch_size: int = 2048
    learning_rate: float = 1e-2
    finetune_steps: int = 50
    finetune_learning_rate: float = 1e-3
    members: int = 100
    finetune_members: int = 50
    penalty_members: int = 250
    latent_dim: int = 2

    @staticmethod
    def from_dict(section: Mapping[str, Any]) -> Result["NetConfig"]:
        """Build from the `drn` / `cgm` config section."""
        defaults = NetConfig()
        try:
            cfg = NetConfig(
                hidden=tuple(int(h) for h in section.get("hidden", defaults.hidden)),
                epochs=int(section.get("epochs", defaults.epochs)),
                batch_size=int(section.get("batch_size", defaults.batch_size)),
                learning_rate=float(section.get("learning_rate", defaults.learning_rate)),
                finetune_steps=int(section.get("finetune_steps", defaults.finetune_steps)),
                finetune_learning_rate=float(section.get("finetune_learning_rate", defaults.finetune_learning_rate)),
                members=int(section.get("members", defaults.members)),
                finetune_members=int(section.get("finetune_members", defaults.finetune_members)),
                penalty_members=int(section.get("penalty_members", defaults.penalty_members)),
                latent_dim=int(section.get("latent_dim", defaults.latent_dim)),
            )
        except (TypeError, ValueError) as e:
            return Result.fail(ConfigError("Invalid network settings", context={"error": str(e)}))

        counts = {
            "epochs": cfg.epochs, "batch_size": cfg.batch_size, "members": cfg.members,
            "finetune_members": cfg.finetune_members, "penalty_members": cfg.penalty_members,
            "latent_dim": cfg.latent_dim,
        }
        for name, value in counts.items():
            if value < 1:
                return Result.fail(ConfigError(f"{name} must be at least 1", context={name: value}))
        if cfg.finetune_steps < 0:
            return Result.fail(ConfigError("finetune_steps must be nonnegative",
                                           context={"finetune_steps": cfg.finetune_steps}))
        if not cfg.hidden or min(cfg.hidden) < 1:
            return Result.fail(ConfigError("hidden layers must be positive", context={"hidden": cfg.hidden}))
        if not (cfg.learning_rate > 0 and cfg.finetune_learning_rate > 0):
            return Result.fail(ConfigError("learning rates must be positive"))
        return Result.ok(cfg)


@dataclass(frozen=True)
class InputScaler:
    """Standardization of ensemble mean and spread, fitted on training data."""

    mean_loc: float = 0.0
    mean_scale: float = 1.0
    sd_loc: float = 0.0
    sd_scale: float = 1.0

    @staticmethod
    def fit(data: WeatherDataset) -> "InputScaler":
        return InputScaler(
            mean_loc=float(np.mean(data.ens_mean)),
            mean_scale=float(np.std(data.ens_mean)) or 1.0,
            sd_loc=float(np.mean(data.ens_sd)),
            sd_scale=float(np.std(data.ens_sd)) or 1.0,
        )

    def features(self, data: WeatherDataset) -> np.ndarray:
        """(n, 4): scaled mean, scaled spread, sin, cos."""
        sin, cos = data.season()
        return np.column_stack([
            (data.ens_mean - self.mean_loc) / self.mean_scale,
            (data.ens_sd - self.sd_loc) / self.sd_scale,
            sin,
            cos,
        ])

    def to_dict(self) -> Dict[str, float]:
        return {"mean_loc": self.mean_loc, "mean_scale": self.mean_scale,
                "sd_loc": self.sd_loc, "sd_scale": self.sd_scale}


def align(data: WeatherDataset, stations: Tuple[str, ...]) -> WeatherDataset:
    return data if data.stations == stations else data.reindex(stations)


@dataclass
class DrnCache:
    """Forward intermediates for DrnModel.backward."""

    tape: Tape
    station_index: np.ndarray
    sigma: np.ndarray
    clipped: np.ndarray


@dataclass
class DrnModel:
    """Network trunk, station embedding and input scaling."""

    trunk: Mlp
    embedding: EmbeddingTable
    scaler: InputScaler
    stations: Tuple[str, ...]
    seed: int = 0
    loss_spec: LossSpec = field(default_factory=LossSpec)

    @staticmethod
    def init(data: WeatherDataset, hidden: Sequence[int] = (16, 16), seed: int = 0) -> "DrnModel":
        """
        Seeded He-uniform weights; output biases start at mean(y) and log sd(y)
        so the initial forecast is the climatological truncated normal.
        """
        rng = np.random.default_rng(seed)
        trunk = Mlp.init(rng, (4 + EMBEDDING_DIM, *hidden, 2))
        trunk.layers[-1].b = np.array([np.mean(data.obs), np.log(max(np.std(data.obs), 1e-3))])
        embedding = EmbeddingTable.init(rng, data.station_count, EMBEDDING_DIM)
        return DrnModel(trunk, embedding, InputScaler.fit(data), data.stations, seed)

    def forward(self, data: WeatherDataset) -> Tuple[TruncatedNormal, DrnCache]:
        data = align(data, self.stations)
        X = np.hstack([self.scaler.features(data), self.embedding.lookup(data.station_index)])
        out, tape = self.trunk.forward(X)
        log_sigma = out[:, 1]
        clipped = np.abs(log_sigma) > LOG_SIGMA_CLIP
        sigma = np.exp(np.clip(log_sigma, -LOG_SIGMA_CLIP, LOG_SIGMA_CLIP))
        return TruncatedNormal(out[:, 0], sigma, 0.0), DrnCache(tape, data.station_index, sigma, clipped)

    def predict(self, data: WeatherDataset) -> TruncatedNormal:
        """
        Raises:
            UnknownStationError: A row's station has no embedding
        """
        return self.forward(data)[0]

    def forecast_set(self, data: WeatherDataset) -> ForecastSet:
        return ForecastSet(self.predict(data), data.obs, data.station_ids, data.dates)

    def backward(self, cache: DrnCache, dmu: np.ndarray, dsigma: np.ndarray) -> np.ndarray:
        """Flat parameter gradient from forecast-parameter gradients."""
        d_log_sigma = np.where(cache.clipped, 0.0, dsigma * cache.sigma)
        grads, dX = self.trunk.backward(cache.tape, np.column_stack([dmu, d_log_sigma]))
        d_emb = self.embedding.backward(cache.station_index, dX[:, 4:])
        return np.concatenate([grads.flat(), d_emb.ravel()])

    # ------------------------------------------------------------------
    # Flat parameter vector
    # ------------------------------------------------------------------

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.trunk.flatten(), self.embedding.weights.ravel()])

    def with_params(self, flat: np.ndarray) -> "DrnModel":
        n_trunk = self.trunk.size
        return DrnModel(
            trunk=self.trunk.unflatten(flat[:n_trunk]),
            embedding=EmbeddingTable(np.asarray(flat[n_trunk:], dtype=float).reshape(self.embedding.weights.shape)),
            scaler=self.scaler,
            stations=self.stations,
            seed=self.seed,
            loss_spec=self.loss_spec,
        )

    def to_artifact(self, provenance: Optional[Dict[str, Any]] = None) -> ModelArtifact:
        return ModelArtifact(
            family="drn",
            payload={
                "trunk": self.trunk.to_dict(),
                "embedding": self.embedding.weights.tolist(),
                "scaler": self.scaler.to_dict(),
                "stations": list(self.stations),
            },
            loss_spec=self.loss_spec.to_dict(),
            seed=self.seed,
            gamma=self.loss_spec.gamma,
            provenance=dict(provenance or {}),
        )

    @staticmethod
    def from_artifact(artifact: ModelArtifact) -> "DrnModel":
        """
        Raises:
            SchemaError: Not a DRN artifact or malformed payload
        """
        if artifact.family != "drn":
            raise SchemaError("Not a DRN model", context={"family": artifact.family})
        p = artifact.payload
        try:
            model = DrnModel(
                trunk=Mlp.from_dict(p["trunk"]),
                embedding=EmbeddingTable(np.asarray(p["embedding"], dtype=float)),
                scaler=InputScaler(**p["scaler"]),
                stations=tuple(p["stations"]),
                seed=artifact.seed,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError("Malformed DRN payload", context={"error": str(e)}) from e
        if artifact.loss_spec:
            model.loss_spec = LossSpec.from_dict(artifact.loss_spec).unwrap()
        return model


def drn_loss_and_grad(
    model: DrnModel, data: WeatherDataset, spec: LossSpec
) -> Tuple[LossReport, np.ndarray]:
    """Objective value and its gradient in the flat parameter vector."""
    forecast, cache = model.forward(data)
    report, grad = evaluate_loss_with_grad(ForecastSet(forecast, data.obs), spec)
    return report, model.backward(cache, grad.dmu, grad.dsigma)


def _check_finite(report: LossReport, **where: Any) -> None:
    if not np.isfinite(report.total):
        raise DivergenceError("Training loss is not finite", context=dict(where, loss=report.total))


def drn_train(
    data: WeatherDataset, cfg: Optional[NetConfig] = None, seed: int = 0
) -> Tuple[DrnModel, pd.DataFrame]:
    """
    Minibatch Adam on the closed-form CRPS.

    Returns:
        (model, history) with history columns epoch, crps (full training CRPS)

    Raises:
        DivergenceError: Loss became NaN; context has epoch and batch
    """
    cfg = cfg or NetConfig()
    spec = LossSpec()
    rng = np.random.default_rng(seed)
    model = DrnModel.init(data, cfg.hidden, seed)
    params = model.get_params()
    state = AdamState.init(params, step_size=cfg.learning_rate)

    history = [(0, evaluate_loss(model.forecast_set(data), spec).total)]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(data))
        for batch, start in enumerate(range(0, len(data), cfg.batch_size)):
            rows = data.subset(order[start:start + cfg.batch_size])
            report, grad = drn_loss_and_grad(model, rows, spec)
            _check_finite(report, epoch=epoch, batch=batch)
            state, params = adam_step(state, params, grad)
            model = model.with_params(params)
        history.append((epoch, evaluate_loss(model.forecast_set(data), spec).total))
        logger.debug("drn_epoch", epoch=epoch, crps=history[-1][1])

    logger.info("drn_trained", seed=seed, epochs=cfg.epochs, crps_start=history[0][1], crps_end=history[-1][1])
    return model, pd.DataFrame(history, columns=["epoch", "crps"])


def drn_finetune(
    model: DrnModel, data: WeatherDataset, spec: LossSpec, steps: int = 50, learning_rate: float = 1e-3
) -> Tuple[DrnModel, pd.DataFrame]:
    """
    Full-batch Adam on a penalized objective, starting from a trained model.

    The input model is never modified. With gamma = 0 the objective is the
    base score alone, so a converged baseline stays near its optimum.

    Returns:
        (model, history) with history columns step, total, base, penalty

    Raises:
        ConfigError: The objective has no penalty
        DivergenceError: Loss became NaN; context has the step
    """
    if spec.penalty == "none":
        raise ConfigError("Finetuning needs a penalty", context={"penalty": spec.penalty})

    data = align(data, model.stations)
    params = model.get_params()
    model = model.with_params(params)
    state = AdamState.init(params, step_size=learning_rate)
    history = []
    for step in range(steps):
        report, grad = drn_loss_and_grad(model, data, spec)
        _check_finite(report, step=step)
        history.append((step, report.total, report.base_mean, report.penalty_value))
        state, params = adam_step(state, params, grad)
        model = model.with_params(params)

    model.loss_spec = spec
    final = evaluate_loss(model.forecast_set(data), spec)
    history.append((steps, final.total, final.base_mean, final.penalty_value))
    logger.info("drn_finetuned", penalty=spec.penalty, gamma=spec.gamma, steps=steps,
                start=history[0][1], end=final.total)
    return model, pd.DataFrame(history, columns=["step", "total", "base", "penalty"])
