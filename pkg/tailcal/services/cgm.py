"""
Conditional generative model.

Two branches share the station embedding and seasonal covariates:

    mean branch    covariates                      -> m(x)
    noise branch   [z * ens_sd, covariates]        -> e(x, z)
    member         softplus(m(x) + e(x, z)),  z ~ N(0, I)

Training minimizes the sample CRPS of generated ensembles with latent
draws held fixed within a step, so gradients flow through the members.
Finetuning uses the fair CRPS on a small ensemble plus a smoothed-PIT
penalty evaluated on a larger one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit

from tailcal.infrastructure.logging import get_logger
from tailcal.models.dataset import WeatherDataset
from tailcal.models.forecast import ForecastSet
from tailcal.models.loss_report import LossReport
from tailcal.models.loss_spec import LossSpec
from tailcal.models.model_artifact import ModelArtifact
from tailcal.services.dist import EnsembleForecast
from tailcal.services.drn import EMBEDDING_DIM, InputScaler, NetConfig, align
from tailcal.services.errors import ConfigError, DivergenceError, InvalidParameterError, SchemaError
from tailcal.services.loss import evaluate_loss, evaluate_loss_with_grad
from tailcal.services.nnet import EmbeddingTable, Mlp, Tape
from tailcal.services.optim import AdamState, adam_step


logger = get_logger(__name__)

N_COVARIATES = 4 + EMBEDDING_DIM


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


@dataclass
class CgmCache:
    """Forward intermediates for CgmModel.backward."""

    mean_tape: Tape
    noise_tape: Tape
    station_index: np.ndarray
    pre: np.ndarray


@dataclass
class CgmModel:
    """Mean and noise branches with a shared station embedding."""

    mean_branch: Mlp
    noise_branch: Mlp
    embedding: EmbeddingTable
    scaler: InputScaler
    stations: Tuple[str, ...]
    latent_dim: int = 2
    seed: int = 0
    loss_spec: LossSpec = field(default_factory=lambda: LossSpec(base="crps_sample"))

    @staticmethod
    def init(data: WeatherDataset, hidden: Sequence[int] = (16, 16), latent_dim: int = 2,
             seed: int = 0) -> "CgmModel":
        rng = np.random.default_rng(seed)
        mean_branch = Mlp.init(rng, (N_COVARIATES, *hidden, 1))
        noise_branch = Mlp.init(rng, (latent_dim + N_COVARIATES, *hidden, 1))
        # softplus^-1 of the climatological mean
        mean_branch.layers[-1].b = np.array([np.log(np.expm1(max(float(np.mean(data.obs)), 1e-3)))])
        embedding = EmbeddingTable.init(rng, data.station_count, EMBEDDING_DIM)
        return CgmModel(mean_branch, noise_branch, embedding, InputScaler.fit(data), data.stations,
                        latent_dim, seed)

    def draw_latent(self, rng: np.random.Generator, n: int, members: int) -> np.ndarray:
        return rng.standard_normal((n, members, self.latent_dim))

    def forward(self, data: WeatherDataset, z: np.ndarray) -> Tuple[np.ndarray, CgmCache]:
        """
        Members for fixed latent draws z of shape (n, M, latent_dim).

        Returns:
            (members (n, M) in draw order, cache)
        """
        data = align(data, self.stations)
        n, members = z.shape[0], z.shape[1]
        X = np.hstack([self.scaler.features(data), self.embedding.lookup(data.station_index)])

        mean_out, mean_tape = self.mean_branch.forward(X)
        noise_in = np.concatenate([
            z * data.ens_sd[:, None, None],
            np.broadcast_to(X[:, None, :], (n, members, N_COVARIATES)),
        ], axis=-1).reshape(n * members, -1)
        noise_out, noise_tape = self.noise_branch.forward(noise_in)

        pre = mean_out + noise_out.reshape(n, members)
        return softplus(pre), CgmCache(mean_tape, noise_tape, data.station_index, pre)

    def generate(self, data: WeatherDataset, members: int, rng: np.random.Generator) -> EnsembleForecast:
        """
        Raises:
            InvalidParameterError: members < 1
            UnknownStationError: A row's station has no embedding
        """
        if members < 1:
            raise InvalidParameterError("Ensemble size must be at least 1", context={"members": members})
        return EnsembleForecast(self.forward(data, self.draw_latent(rng, len(data), members))[0])

    def backward(self, cache: CgmCache, d_members: np.ndarray) -> np.ndarray:
        """Flat parameter gradient from member gradients (draw order)."""
        n, members = d_members.shape
        d_pre = d_members * expit(cache.pre)
        mean_grads, dX_mean = self.mean_branch.backward(cache.mean_tape, d_pre.sum(axis=1, keepdims=True))
        noise_grads, dX_noise = self.noise_branch.backward(cache.noise_tape, d_pre.reshape(n * members, 1))

        d_cov = dX_mean + dX_noise[:, self.latent_dim:].reshape(n, members, N_COVARIATES).sum(axis=1)
        d_emb = self.embedding.backward(cache.station_index, d_cov[:, 4:])
        return np.concatenate([mean_grads.flat(), noise_grads.flat(), d_emb.ravel()])

    # ------------------------------------------------------------------
    # Flat parameter vector
    # ------------------------------------------------------------------

    def get_params(self) -> np.ndarray:
        return np.concatenate([
            self.mean_branch.flatten(), self.noise_branch.flatten(), self.embedding.weights.ravel()
        ])

    def with_params(self, flat: np.ndarray) -> "CgmModel":
        a = self.mean_branch.size
        b = a + self.noise_branch.size
        return CgmModel(
            mean_branch=self.mean_branch.unflatten(flat[:a]),
            noise_branch=self.noise_branch.unflatten(flat[a:b]),
            embedding=EmbeddingTable(np.asarray(flat[b:], dtype=float).reshape(self.embedding.weights.shape)),
            scaler=self.scaler,
            stations=self.stations,
            latent_dim=self.latent_dim,
            seed=self.seed,
            loss_spec=self.loss_spec,
        )

    def to_artifact(self, provenance: Optional[Dict[str, Any]] = None) -> ModelArtifact:
        return ModelArtifact(
            family="cgm",
            payload={
                "mean_branch": self.mean_branch.to_dict(),
                "noise_branch": self.noise_branch.to_dict(),
                "embedding": self.embedding.weights.tolist(),
                "scaler": self.scaler.to_dict(),
                "stations": list(self.stations),
                "latent_dim": self.latent_dim,
            },
            loss_spec=self.loss_spec.to_dict(),
            seed=self.seed,
            gamma=self.loss_spec.gamma,
            provenance=dict(provenance or {}),
        )

    @staticmethod
    def from_artifact(artifact: ModelArtifact) -> "CgmModel":
        """
        Raises:
            SchemaError: Not a CGM artifact or malformed payload
        """
        if artifact.family != "cgm":
            raise SchemaError("Not a CGM model", context={"family": artifact.family})
        p = artifact.payload
        try:
            model = CgmModel(
                mean_branch=Mlp.from_dict(p["mean_branch"]),
                noise_branch=Mlp.from_dict(p["noise_branch"]),
                embedding=EmbeddingTable(np.asarray(p["embedding"], dtype=float)),
                scaler=InputScaler(**p["scaler"]),
                stations=tuple(p["stations"]),
                latent_dim=int(p["latent_dim"]),
                seed=artifact.seed,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError("Malformed CGM payload", context={"error": str(e)}) from e
        if artifact.loss_spec:
            model.loss_spec = LossSpec.from_dict(artifact.loss_spec).unwrap()
        return model


def cgm_loss_and_grad(
    model: CgmModel,
    data: WeatherDataset,
    spec: LossSpec,
    z: np.ndarray,
    z_penalty: Optional[np.ndarray] = None,
) -> Tuple[LossReport, np.ndarray]:
    """
    Objective and flat gradient for fixed latent draws.

    Args:
        z: Draws for the base-score ensemble
        z_penalty: Draws for a separate penalty ensemble
    """
    members, cache = model.forward(data, z)
    ensemble = EnsembleForecast(members)
    cases = ForecastSet(ensemble, data.obs)

    penalty_cases, p_ensemble, p_cache = None, None, None
    if z_penalty is not None:
        p_members, p_cache = model.forward(data, z_penalty)
        p_ensemble = EnsembleForecast(p_members)
        penalty_cases = ForecastSet(p_ensemble, data.obs)

    report, grad = evaluate_loss_with_grad(cases, spec, penalty_cases)
    flat = model.backward(cache, ensemble.unsort(grad.members))
    if grad.penalty_members is not None:
        flat = flat + model.backward(p_cache, p_ensemble.unsort(grad.penalty_members))
    return report, flat


def _check_finite(report: LossReport, **where: Any) -> None:
    if not np.isfinite(report.total):
        raise DivergenceError("Training loss is not finite", context=dict(where, loss=report.total))


def evaluate_cgm(model: CgmModel, data: WeatherDataset, spec: LossSpec, members: int, seed: int) -> LossReport:
    rng = np.random.default_rng(seed)
    return evaluate_loss(ForecastSet(model.generate(data, members, rng), data.obs), spec)


def cgm_train(
    data: WeatherDataset, cfg: Optional[NetConfig] = None, seed: int = 0
) -> Tuple[CgmModel, pd.DataFrame]:
    """
    Minibatch Adam on the sample CRPS of generated ensembles.

    Returns:
        (model, history) with history columns epoch, crps (training sample CRPS)

    Raises:
        DivergenceError: Loss became NaN; context has epoch and batch
    """
    cfg = cfg or NetConfig(epochs=20, batch_size=1024, learning_rate=3e-3)
    spec = LossSpec(base="crps_sample")
    rng = np.random.default_rng(seed)
    model = CgmModel.init(data, cfg.hidden, cfg.latent_dim, seed)
    params = model.get_params()
    state = AdamState.init(params, step_size=cfg.learning_rate)

    history = [(0, evaluate_cgm(model, data, spec, cfg.members, seed).total)]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(data))
        for batch, start in enumerate(range(0, len(data), cfg.batch_size)):
            rows = data.subset(order[start:start + cfg.batch_size])
            z = model.draw_latent(rng, len(rows), cfg.members)
            report, grad = cgm_loss_and_grad(model, rows, spec, z)
            _check_finite(report, epoch=epoch, batch=batch)
            state, params = adam_step(state, params, grad)
            model = model.with_params(params)
        history.append((epoch, evaluate_cgm(model, data, spec, cfg.members, seed).total))
        logger.debug("cgm_epoch", epoch=epoch, crps=history[-1][1])

    logger.info("cgm_trained", seed=seed, epochs=cfg.epochs, crps_start=history[0][1], crps_end=history[-1][1])
    return model, pd.DataFrame(history, columns=["epoch", "crps"])


def cgm_finetune(
    model: CgmModel,
    data: WeatherDataset,
    spec: LossSpec,
    steps: int = 50,
    learning_rate: float = 1e-3,
    members: int = 50,
    penalty_members: int = 250,
    seed: int = 0,
) -> Tuple[CgmModel, pd.DataFrame]:
    """
    Full-batch Adam on fair CRPS (M = members) plus a smoothed penalty
    evaluated on a separate ensemble (M = penalty_members).

    Returns:
        (model, history) with history columns step, total, base, penalty

    Raises:
        ConfigError: Base score other than the fair CRPS, or a calibration
            penalty without a smoothing width
        DivergenceError: Loss became NaN; context has the step
    """
    if spec.base != "fair_crps":
        raise ConfigError("Sample-based finetuning needs the fair CRPS", context={"base": spec.base})
    if spec.penalty in ("mcb", "tmcb", "cpit_mcb") and spec.nu is None:
        raise ConfigError("Sample-based finetuning needs a PIT smoothing width nu",
                          context={"penalty": spec.penalty})

    data = align(data, model.stations)
    rng = np.random.default_rng(seed)
    separate_penalty = spec.penalty in ("mcb", "tmcb", "cpit_mcb")
    params = model.get_params()
    model = model.with_params(params)
    state = AdamState.init(params, step_size=learning_rate)
    history = []
    for step in range(steps):
        z = model.draw_latent(rng, len(data), members)
        z_penalty = model.draw_latent(rng, len(data), penalty_members) if separate_penalty else None
        report, grad = cgm_loss_and_grad(model, data, spec, z, z_penalty)
        _check_finite(report, step=step)
        history.append((step, report.total, report.base_mean, report.penalty_value))
        state, params = adam_step(state, params, grad)
        model = model.with_params(params)

    model.loss_spec = spec
    logger.info("cgm_finetuned", penalty=spec.penalty, gamma=spec.gamma, steps=steps,
                start=history[0][1] if history else None, end=history[-1][1] if history else None)
    return model, pd.DataFrame(history, columns=["step", "total", "base", "penalty"])
