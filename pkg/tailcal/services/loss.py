"""
Composite training objectives.

    baseline        mean S(F_i, y_i)
    weighted        mean S + gamma * mean S_w (twCRPS, or censored likelihood for the log score)
    mcb             mean S + gamma * MCB
    tmcb            mean S + gamma * TMCB
    cpit_mcb        mean S + gamma * CPIT-MCB

Penalties are computed over the whole set of cases passed in. Sample-backed
forecasts may carry a separate, larger ensemble for the calibration penalty
(penalty_cases); with a smoothing width nu their PIT values are
sigmoid-smoothed and therefore differentiable in the members.

Gradients are returned per forecast parameter (ForecastGradient) and mapped
to model parameters by a ParamAdapter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol, Tuple

import numpy as np

from tailcal.models.forecast import CaseInput, ForecastSet, as_forecast_set
from tailcal.models.loss_report import LossReport
from tailcal.models.loss_spec import CALIBRATION_PENALTIES, LossSpec
from tailcal.services.calib import miscalibration_penalty, pit, smoothed_sf_grad
from tailcal.services.dist import Distribution, EnsembleForecast, TruncatedNormal
from tailcal.services.errors import (
    IncompatibleForecastError,
    LossError,
    NonDifferentiableConfigurationError,
)
from tailcal.services.scores import (
    WeightSpec,
    censored_likelihood_score,
    censored_likelihood_tn_grad,
    crps_quadrature,
    twcrps_closed_tn,
    log_score,
    log_score_tn_grad,
    sample_crps_grad,
    twcrps_tn_grad,
)


@dataclass
class ForecastGradient:
    """
    d total / d forecast parameters.

    Attributes:
        dmu, dsigma: Truncated-normal location and scale gradients, shape (n,)
        members: Ensemble member gradients, shape (n, M)
        penalty_members: Member gradients of the penalty ensemble, shape (n, M')

    Member gradients follow the ensemble's sorted member order;
    EnsembleForecast.unsort maps them back to the generating order.
    """

    dmu: Optional[np.ndarray] = None
    dsigma: Optional[np.ndarray] = None
    members: Optional[np.ndarray] = None
    penalty_members: Optional[np.ndarray] = None


class ParamAdapter(Protocol):
    """Maps forecast-parameter gradients back to model parameters."""

    def pullback(self, grad: ForecastGradient) -> np.ndarray:
        ...


class TruncatedNormalAdapter:
    """
    Free (mu_i, log sigma_i) per case.

    Parameter vector layout: [mu_1..mu_n, log_sigma_1..log_sigma_n].
    """

    def __init__(self, params: np.ndarray, lower: float = 0.0):
        self.params = np.asarray(params, dtype=float)
        self.n = self.params.size // 2
        self.lower = lower

    def forecast(self) -> TruncatedNormal:
        return TruncatedNormal(self.params[:self.n], np.exp(self.params[self.n:]), self.lower)

    def pullback(self, grad: ForecastGradient) -> np.ndarray:
        sigma = np.exp(self.params[self.n:])
        return np.concatenate([grad.dmu, grad.dsigma * sigma])


# ============================================================================
# Base scores
# ============================================================================

def _check_compatible(d: Distribution, spec: LossSpec) -> None:
    if spec.is_sample_based and not isinstance(d, EnsembleForecast):
        raise IncompatibleForecastError(
            f"Base score {spec.base} needs an ensemble", context={"forecast": type(d).__name__}
        )
    if spec.base == "log_score" and not d.has_density:
        raise IncompatibleForecastError(
            "Log score needs a forecast density", context={"forecast": type(d).__name__}
        )


def _base_scores(d: Distribution, y: np.ndarray, spec: LossSpec, w: Optional[WeightSpec]) -> np.ndarray:
    """Per-case base score (w=None) or weighted score."""
    if spec.base == "log_score":
        if w is None:
            return np.asarray(log_score(d, y))
        return np.asarray(censored_likelihood_score(d, y, w))
    if isinstance(d, EnsembleForecast):
        return sample_crps_grad(d, y, w=w, fair=spec.base == "fair_crps")[0]
    if isinstance(d, TruncatedNormal):
        t = -np.inf if w is None else w.threshold
        return twcrps_tn_grad(d, y, t)[0]
    return np.atleast_1d(crps_quadrature(d, y, w))


def _base_grad(
    d: Distribution, y: np.ndarray, spec: LossSpec, w: Optional[WeightSpec]
) -> Tuple[np.ndarray, ForecastGradient]:
    if isinstance(d, EnsembleForecast):
        score, grad = sample_crps_grad(d, y, w=w, fair=spec.base == "fair_crps")
        return score, ForecastGradient(members=grad)
    if not isinstance(d, TruncatedNormal):
        raise NonDifferentiableConfigurationError(
            "Analytic gradients exist for truncated normals and ensembles",
            context={"forecast": type(d).__name__}
        )
    if spec.base == "log_score":
        if w is None:
            score, dmu, dsigma = log_score_tn_grad(d, y)
        else:
            score, dmu, dsigma = censored_likelihood_tn_grad(d, y, w)
    else:
        t = -np.inf if w is None else w.threshold
        score, dmu, dsigma = twcrps_tn_grad(d, y, t)
    return score, ForecastGradient(dmu=dmu, dsigma=dsigma)


# ============================================================================
# Calibration penalty inputs
# ============================================================================

def _survival_values(
    d: Distribution,
    y: np.ndarray,
    spec: LossSpec,
    rng: Optional[np.random.Generator],
) -> Tuple[np.ndarray, np.ndarray, bool]:
    """sf_i(y_i), sf_i(t) and whether they are smoothed."""
    t = np.asarray(spec.threshold, dtype=float)
    if isinstance(d, EnsembleForecast) and spec.nu is not None:
        sf_y, _ = smoothed_sf_grad(d, y, spec.nu)
        sf_t, _ = smoothed_sf_grad(d, t, spec.nu)
        return np.atleast_1d(sf_y), np.broadcast_to(sf_t, y.shape), True

    if isinstance(d, EnsembleForecast) and spec.penalty == "mcb":
        sf_y = 1.0 - np.atleast_1d(pit(d, y, rng))
    else:
        sf_y = np.clip(np.atleast_1d(d._sf(y)), 0.0, 1.0)
    sf_t = np.clip(np.broadcast_to(d._sf(t), y.shape), 0.0, 1.0)
    return sf_y, sf_t, False


def _penalty_grad(
    d: Distribution, y: np.ndarray, spec: LossSpec
) -> Tuple[float, Optional[int], ForecastGradient, bool]:
    """Penalty value and its forecast-parameter gradient; last item marks ensemble gradients."""
    t = np.asarray(spec.threshold, dtype=float)
    exceed = y > spec.threshold

    if isinstance(d, EnsembleForecast):
        if spec.nu is None:
            raise NonDifferentiableConfigurationError(
                "Hard PIT penalties on ensembles are not differentiable; set nu",
                context={"penalty": spec.penalty}
            )
        sf_y, g_y = smoothed_sf_grad(d, y, spec.nu)
        sf_t, g_t = smoothed_sf_grad(d, t, spec.nu)
        pv = miscalibration_penalty(spec.penalty, sf_y, sf_t, exceed, spec.divergence,
                                    spec.estimator, smoothed=True, threshold=spec.threshold)
        members = pv.d_sf_obs[:, None] * g_y + pv.d_sf_threshold[:, None] * g_t
        return pv.value, pv.exceedances, ForecastGradient(members=members), True

    if not isinstance(d, TruncatedNormal):
        raise NonDifferentiableConfigurationError(
            "Analytic gradients exist for truncated normals and ensembles",
            context={"forecast": type(d).__name__}
        )
    sf_y, dmu_y, dsig_y = d.sf_grad(y)
    sf_t, dmu_t, dsig_t = d.sf_grad(t)
    sf_t, dmu_t, dsig_t = (np.broadcast_to(a, y.shape) for a in (sf_t, dmu_t, dsig_t))
    pv = miscalibration_penalty(spec.penalty, sf_y, sf_t, exceed, spec.divergence,
                                spec.estimator, threshold=spec.threshold)
    dmu = pv.d_sf_obs * dmu_y + pv.d_sf_threshold * dmu_t
    dsigma = pv.d_sf_obs * dsig_y + pv.d_sf_threshold * dsig_t
    return pv.value, pv.exceedances, ForecastGradient(dmu=dmu, dsigma=dsigma), False


# ============================================================================
# Public API
# ============================================================================

def evaluate_loss(
    cases: CaseInput,
    spec: LossSpec,
    rng: Optional[np.random.Generator] = None,
    penalty_cases: Optional[ForecastSet] = None,
) -> LossReport:
    """
    Evaluate a composite objective.

    Args:
        cases: Forecast cases scored by the base score
        spec: Objective
        rng: Tie randomization for hard ensemble PITs
        penalty_cases: Forecasts for the calibration penalty (defaults to cases)

    Raises:
        IncompatibleForecastError: Forecast family does not fit the base score
        CalibrationError: Degenerate or empty penalty sets
    """
    fs = as_forecast_set(cases)
    d, y = fs.forecast, fs.obs
    _check_compatible(d, spec)

    base_mean = float(np.mean(_base_scores(d, y, spec, None)))
    penalty_value, exceedances = 0.0, None

    if spec.penalty == "weighted":
        penalty_value = float(np.mean(_base_scores(d, y, spec, spec.weight_spec)))
    elif spec.penalty in CALIBRATION_PENALTIES:
        pfs = penalty_cases if penalty_cases is not None else fs
        sf_y, sf_t, smoothed = _survival_values(pfs.forecast, pfs.obs, spec, rng)
        pv = miscalibration_penalty(spec.penalty, sf_y, sf_t, pfs.obs > spec.threshold,
                                    spec.divergence, spec.estimator, smoothed=smoothed,
                                    threshold=spec.threshold)
        penalty_value, exceedances = pv.value, pv.exceedances

    return LossReport(
        total=base_mean + spec.gamma * penalty_value,
        base_mean=base_mean,
        penalty_value=penalty_value,
        gamma=spec.gamma,
        cases=len(fs),
        exceedances=exceedances,
    )


def evaluate_loss_with_grad(
    cases: CaseInput,
    spec: LossSpec,
    penalty_cases: Optional[ForecastSet] = None,
) -> Tuple[LossReport, ForecastGradient]:
    """
    Objective value with d total / d forecast parameters.

    Raises:
        NonDifferentiableConfigurationError: Hard PIT penalty on ensembles without nu,
            or forecasts without analytic gradients
    """
    fs = as_forecast_set(cases)
    d, y = fs.forecast, fs.obs
    _check_compatible(d, spec)
    n = len(fs)

    scores, grad = _base_grad(d, y, spec, None)
    base_mean = float(np.mean(scores))
    _scale(grad, 1.0 / n)
    penalty_value, exceedances = 0.0, None

    if spec.penalty == "weighted":
        w_scores, w_grad = _base_grad(d, y, spec, spec.weight_spec)
        penalty_value = float(np.mean(w_scores))
        _add(grad, w_grad, spec.gamma / n)
    elif spec.penalty in CALIBRATION_PENALTIES:
        pfs = penalty_cases if penalty_cases is not None else fs
        penalty_value, exceedances, p_grad, is_ensemble = _penalty_grad(pfs.forecast, pfs.obs, spec)
        if is_ensemble and penalty_cases is not None:
            grad.penalty_members = spec.gamma * p_grad.members
        else:
            _add(grad, p_grad, spec.gamma)

    report = LossReport(
        total=base_mean + spec.gamma * penalty_value,
        base_mean=base_mean,
        penalty_value=penalty_value,
        gamma=spec.gamma,
        cases=n,
        exceedances=exceedances,
    )
    return report, grad


def loss_gradient(
    cases: CaseInput,
    spec: LossSpec,
    adapter: ParamAdapter,
    penalty_cases: Optional[ForecastSet] = None,
) -> np.ndarray:
    """Gradient of the objective in the adapter's parameters."""
    _, grad = evaluate_loss_with_grad(cases, spec, penalty_cases)
    return adapter.pullback(grad)


def _scale(grad: ForecastGradient, factor: float) -> None:
    for name in ("dmu", "dsigma", "members"):
        value = getattr(grad, name)
        if value is not None:
            setattr(grad, name, value * factor)


def _add(grad: ForecastGradient, other: ForecastGradient, factor: float) -> None:
    for name in ("dmu", "dsigma", "members"):
        extra = getattr(other, name)
        if extra is None:
            continue
        current = getattr(grad, name)
        setattr(grad, name, factor * extra if current is None else current + factor * extra)


def combined_weight(spec: LossSpec) -> WeightSpec:
    """Weight 1 + gamma * 1{z > t} of the weighted objective as a single score."""
    return WeightSpec(spec.threshold, base_weight=1.0, tail_weight=spec.gamma)


def weighted_as_twcrps(cases: CaseInput, spec: LossSpec) -> float:
    """
    Mean twCRPS under combined_weight(spec).

    Equals evaluate_loss(cases, spec).total for a weighted CRPS objective.

    Raises:
        LossError: Log-score base, which has no single-weight form
    """
    if spec.base == "log_score":
        raise LossError("Combined weight needs a CRPS base", context={"base": spec.base})
    fs = as_forecast_set(cases)
    d, y = fs.forecast, fs.obs
    _check_compatible(d, spec)
    w = combined_weight(spec)

    if isinstance(d, EnsembleForecast):
        scores = sample_crps_grad(d, y, w=w, fair=spec.base == "fair_crps")[0]
    elif isinstance(d, TruncatedNormal):
        scores = twcrps_closed_tn(d, y, w)
    else:
        scores = crps_quadrature(d, y, w)
    return float(np.mean(scores))
