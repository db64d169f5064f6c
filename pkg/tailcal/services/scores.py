"""
Scoring rules.

All scores are negatively oriented (lower is better) and vectorized over the
forecast batch. Truncated-normal scores have closed forms together with
their derivatives in (mu, sigma); ensemble scores have member gradients.

Weights are indicator-based: w(z) = base_weight + tail_weight * 1{z > t},
with chaining function v(x) = base_weight * x + tail_weight * max(x, t).
The default WeightSpec(t) is the plain threshold weight 1{z > t}; the
combined objective CRPS + gamma * twCRPS is WeightSpec(t, 1.0, gamma).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Any, Optional, Tuple, Union

import numpy as np
from scipy import integrate, special

from tailcal.services.dist import (
    Distribution,
    EnsembleForecast,
    TruncatedNormal,
    _scalarize,
    norm_logpdf,
)
from tailcal.services.errors import (
    EnsembleSizeError,
    IncompatibleForecastError,
    QuadratureNotConvergedError,
    UnsupportedDistributionError,
)


DENSITY_FLOOR = 1e-300
SQRT2 = np.sqrt(2.0)
SQRT_PI = np.sqrt(np.pi)
# standardized arguments are capped here; every tail term has vanished long before
Z_CAP = 1e6

Members = Union[EnsembleForecast, np.ndarray]


@dataclass(frozen=True)
class WeightSpec:
    """
    Threshold weight w(z) = base_weight + tail_weight * 1{z > threshold}.

    Attributes:
        threshold: t
        base_weight: weight everywhere (0 for a pure threshold weight)
        tail_weight: extra weight above t
    """

    threshold: float
    base_weight: float = 0.0
    tail_weight: float = 1.0

    def weight(self, z: Any) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.base_weight + self.tail_weight * (z > self.threshold)

    def chain(self, x: Any) -> np.ndarray:
        """v(x); nondecreasing with v(x) - v(x') = integral of w over [x', x]."""
        x = np.asarray(x, dtype=float)
        return self.base_weight * x + self.tail_weight * np.maximum(x, self.threshold)

    def chain_derivative(self, x: Any) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.base_weight + self.tail_weight * (x > self.threshold)

    @property
    def is_indicator(self) -> bool:
        return self.base_weight == 0.0 and self.tail_weight == 1.0


def _as_weight(w: Union[WeightSpec, float, None]) -> Optional[WeightSpec]:
    if w is None or isinstance(w, WeightSpec):
        return w
    return WeightSpec(float(w))


# ============================================================================
# Log score and censored likelihood
# ============================================================================

def log_score(d: Distribution, y: Any, floor: float = DENSITY_FLOOR) -> Any:
    """
    -log f(y), with densities below `floor` floored (score caps near 690.8).

    Raises:
        UnsupportedDistributionError: For forecasts without a density
    """
    if not d.has_density:
        raise UnsupportedDistributionError(
            "Log score needs a density", context={"forecast": type(d).__name__}
        )
    logpdf = d._logpdf(np.asarray(y, dtype=float))
    return _scalarize(-np.maximum(logpdf, np.log(floor)))


def censored_likelihood_score(
    d: Distribution,
    y: Any,
    w: Union[WeightSpec, float],
    floor: float = DENSITY_FLOOR,
) -> Any:
    """
    -log f(y) for y > t; -log F(t) for y <= t.

    Both terms enter negatively, which keeps the score proper.
    """
    w = _as_weight(w)
    if not d.has_density:
        raise UnsupportedDistributionError(
            "Censored likelihood needs a density", context={"forecast": type(d).__name__}
        )
    y = np.asarray(y, dtype=float)
    t = w.threshold
    above = -np.maximum(d._logpdf(y), np.log(floor))
    with np.errstate(divide="ignore"):
        below = -np.log(np.maximum(d._cdf(np.asarray(t, dtype=float)), floor))
    return _scalarize(np.where(y > t, above, below))


def log_score_tn_grad(
    d: TruncatedNormal, y: Any, floor: float = DENSITY_FLOOR
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Log score of a truncated normal with derivatives in (mu, sigma)."""
    y = np.asarray(y, dtype=float)
    logpdf = d._logpdf(y)
    floored = logpdf < np.log(floor)
    score = -np.where(floored, np.log(floor), logpdf)

    z = (y - d.mu) / d.sigma
    alpha = d.alpha
    r = np.exp(norm_logpdf(alpha) - d.log_mass)
    dmu = (-z + r) / d.sigma
    dsigma = (1.0 - z * z + r * alpha) / d.sigma
    return score, np.where(floored, 0.0, dmu), np.where(floored, 0.0, dsigma)


def censored_likelihood_tn_grad(
    d: TruncatedNormal, y: Any, w: Union[WeightSpec, float], floor: float = DENSITY_FLOOR
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Censored likelihood score of a truncated normal with (mu, sigma) derivatives."""
    w = _as_weight(w)
    y = np.asarray(y, dtype=float)
    t = np.asarray(w.threshold, dtype=float)

    ls, ls_dmu, ls_dsigma = log_score_tn_grad(d, y, floor)

    sf_t, sf_dmu, sf_dsigma = d.sf_grad(t)
    cdf_t = 1.0 - sf_t
    floored = cdf_t < floor
    safe = np.where(floored, 1.0, cdf_t)
    with np.errstate(divide="ignore"):
        below = -np.log(np.maximum(cdf_t, floor))
    # d(-log F(t)) = dsf(t) / F(t)
    below_dmu = np.where(floored, 0.0, sf_dmu / safe)
    below_dsigma = np.where(floored, 0.0, sf_dsigma / safe)

    exceed = y > t
    return (
        np.where(exceed, ls, below),
        np.where(exceed, ls_dmu, below_dmu),
        np.where(exceed, ls_dsigma, below_dsigma),
    )


# ============================================================================
# Closed-form CRPS / twCRPS for the truncated normal
# ============================================================================

def twcrps_tn_grad(
    d: TruncatedNormal, y: Any, t: Any = -np.inf
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Threshold-weighted CRPS (weight 1{z > t}) of a truncated normal, with
    derivatives in (mu, sigma). t = -inf gives the CRPS.

    With a = (lower - mu)/sigma, c = 1 - Phi(a), tau = (max(t, lower) - mu)/sigma,
    eta = (y - mu)/sigma and eta' = max(tau, eta):

        twCRPS = sigma * [ int_tau^inf (Phibar/c)^2 + (eta' - tau)
                           - 2 int_tau^eta' Phibar/c ] + max(0, lower - max(t, y))

    Every ratio Phibar(s)/c and phi(s)/c is evaluated as exp(log_ndtr(-s) - log c)
    so forecasts with almost no mass above the truncation point stay finite.
    """
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    mu, sigma, lower = d.mu, d.sigma, d.lower

    alpha = (lower - mu) / sigma
    log_c = special.log_ndtr(-alpha)
    t_eff = np.maximum(t, lower)
    tau = np.minimum((t_eff - mu) / sigma, Z_CAP)
    eta = np.minimum((y - mu) / sigma, Z_CAP)
    eta_p = np.maximum(tau, eta)

    def ratio_sf(s):
        return np.exp(special.log_ndtr(-s) - log_c)

    def ratio_pdf(s):
        return np.exp(norm_logpdf(s) - log_c)

    R_t, P_t = ratio_sf(tau), ratio_pdf(tau)
    R_e, P_e = ratio_sf(eta_p), ratio_pdf(eta_p)
    Q = np.exp(special.log_ndtr(-SQRT2 * tau) - 2.0 * log_c) / SQRT_PI
    r = ratio_pdf(alpha)

    g1 = (eta_p * R_e - P_e) - (tau * R_t - P_t)   # [G1(eta') - G1(tau)] / c
    g2 = tau * R_t * R_t - 2.0 * P_t * R_t + Q     # G2(tau) / c^2, G2 = -int_tau^inf Phibar^2

    score = sigma * (-g2 + (eta_p - tau) - 2.0 * g1) + np.maximum(0.0, lower - np.maximum(t, y))
    dmu = -2.0 * ((R_t - R_e) - r * g1) + 2.0 * (0.5 * R_t * R_t + r * g2)
    dsigma = -2.0 * ((P_t - P_e) - r * alpha * g1) + 2.0 * (P_t * R_t - 0.5 * Q + r * alpha * g2)

    return np.maximum(score, 0.0), dmu, dsigma


def crps_closed_tn(d: TruncatedNormal, y: Any) -> Any:
    """Closed-form CRPS of a truncated normal."""
    if not isinstance(d, TruncatedNormal):
        raise IncompatibleForecastError(
            "Closed-form CRPS needs a truncated normal", context={"forecast": type(d).__name__}
        )
    return _scalarize(twcrps_tn_grad(d, y)[0])


def twcrps_closed_tn(d: TruncatedNormal, y: Any, w: Union[WeightSpec, float]) -> Any:
    """
    Closed-form twCRPS of a truncated normal.

    A WeightSpec with base_weight b and tail_weight g evaluates
    b * CRPS + g * twCRPS(t) by linearity in the weight.
    """
    if not isinstance(d, TruncatedNormal):
        raise IncompatibleForecastError(
            "Closed-form twCRPS needs a truncated normal", context={"forecast": type(d).__name__}
        )
    w = _as_weight(w)
    value = w.tail_weight * twcrps_tn_grad(d, y, w.threshold)[0]
    if w.base_weight:
        value = value + w.base_weight * twcrps_tn_grad(d, y)[0]
    return _scalarize(value)


# ============================================================================
# Quadrature oracle
# ============================================================================

def crps_quadrature(
    d: Distribution,
    y: Any,
    w: Union[WeightSpec, float, None] = None,
    tol: float = 1e-8,
    limit: int = 400,
) -> Any:
    """
    Integral of w(x) * (F(x) - 1{y <= x})^2 by adaptive Gauss-Kronrod (scipy.integrate.quad).

    The domain spans the 1e-10 and 1 - 1e-10 quantiles, widened to contain y,
    and is split at y, t and the forecast's breakpoints.

    Raises:
        QuadratureNotConvergedError: If the error estimate exceeds tol
    """
    w = _as_weight(w)
    y = np.asarray(y, dtype=float)
    if d.batch_shape:
        y = np.broadcast_to(y, d.batch_shape)
        flat = [
            crps_quadrature(d[idx], float(y[idx]), w, tol, limit)
            for idx in np.ndindex(*d.batch_shape)
        ]
        return np.asarray(flat).reshape(d.batch_shape)

    y = float(y)
    if isinstance(d, EnsembleForecast):
        lo_q, hi_q = float(d.members[0]), float(d.members[-1])
        median = lo_q
    else:
        lo_q, hi_q = float(d.quantile(1e-10)), float(d.quantile(1.0 - 1e-10))
        median = float(d.quantile(0.5))
    lo, hi = min(lo_q, y), max(hi_q, y)

    if w is not None and w.base_weight == 0.0:
        lo = max(lo, w.threshold)
    if w is not None and w.tail_weight == 0.0 and w.base_weight == 0.0:
        return 0.0
    if lo >= hi:
        return 0.0

    def integrand(x: float) -> float:
        diff = float(d._cdf(np.asarray(x))) - (1.0 if y <= x else 0.0)
        weight = 1.0 if w is None else float(w.weight(x))
        return weight * diff * diff

    split = {y, median, *d.breakpoints()}
    if w is not None:
        split.add(w.threshold)
    points = sorted(p for p in split if lo < p < hi)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        out = integrate.quad(
            integrand, lo, hi,
            points=points or None,
            epsabs=tol, epsrel=0.0,
            limit=max(limit, 4 * len(points) + 50),
            full_output=1,
        )
    value, abserr = out[0], out[1]
    if len(out) > 3 and abserr > tol:
        raise QuadratureNotConvergedError(
            "Quadrature did not reach tolerance",
            context={"abserr": abserr, "tol": tol, "message": out[3]}
        )
    return value


# ============================================================================
# Ensemble scores
# ============================================================================

def _member_array(e: Members) -> np.ndarray:
    if isinstance(e, EnsembleForecast):
        return e.members
    return np.atleast_1d(np.asarray(e, dtype=float))


def sample_crps_grad(
    members: Members,
    y: Any,
    w: Union[WeightSpec, float, None] = None,
    fair: bool = False,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sample (or fair) CRPS of ensembles with member gradients.

    For members sorted ascending,
        CRPS = mean|x - y| - sum_i (2i - M - 1) x_(i) / M^2
    and the fair version divides the spread term by M(M - 1) instead. With a
    weight, members and observation pass through the chaining function first.
    Member order of the gradient matches the input order.

    Raises:
        EnsembleSizeError: fair=True with fewer than two members
    """
    w = _as_weight(w)
    x = _member_array(members)
    y = np.asarray(y, dtype=float)
    M = x.shape[-1]
    if fair and M < 2:
        raise EnsembleSizeError("Fair CRPS needs at least two members", context={"members": M})

    if w is not None:
        vx, vy, dv = w.chain(x), w.chain(y), w.chain_derivative(x)
    else:
        vx, vy, dv = x, y, None

    order = np.argsort(vx, axis=-1, kind="stable")
    sorted_vx = np.take_along_axis(vx, order, axis=-1)
    coef = 2.0 * np.arange(1, M + 1) - M - 1.0
    denom = float(M * (M - 1)) if fair else float(M * M)

    diff = vx - np.asarray(vy)[..., None]
    abs_term = np.mean(np.abs(diff), axis=-1)
    spread = np.sum(coef * sorted_vx, axis=-1) / denom

    if fair:
        spread = _extended_precision_spread(sorted_vx, coef, denom, spread)

    score = abs_term - spread

    grad_sorted = np.broadcast_to(-coef / denom, sorted_vx.shape)
    grad = np.empty_like(vx)
    np.put_along_axis(grad, order, grad_sorted, axis=-1)
    grad = grad + np.sign(diff) / M
    if dv is not None:
        grad = grad * dv
    return score, grad


def _extended_precision_spread(
    sorted_vx: np.ndarray, coef: np.ndarray, denom: float, spread: np.ndarray
) -> np.ndarray:
    """Recompute the spread in long double where all but one member coincide."""
    if sorted_vx.shape[-1] < 2:
        return spread
    head_flat = np.abs(sorted_vx[..., -2] - sorted_vx[..., 0]) <= 1e-12
    tail_flat = np.abs(sorted_vx[..., -1] - sorted_vx[..., 1]) <= 1e-12
    degenerate = head_flat | tail_flat
    if not np.any(degenerate):
        return spread
    precise = np.sum(coef.astype(np.longdouble) * sorted_vx.astype(np.longdouble), axis=-1)
    precise = (precise / np.longdouble(denom)).astype(float)
    return np.where(degenerate, precise, spread)


def crps_sample(e: Members, y: Any) -> Any:
    """(1/M) sum|x_i - y| - (1/(2M^2)) sum sum |x_i - x_j|."""
    return _scalarize(sample_crps_grad(e, y)[0])


def twcrps_sample(e: Members, y: Any, w: Union[WeightSpec, float]) -> Any:
    """Sample CRPS of the chained members and observation."""
    return _scalarize(sample_crps_grad(e, y, w=w)[0])


def fair_crps(e: Members, y: Any) -> Any:
    """(1/M) sum|x_i - y| - (1/(2M(M-1))) sum sum |x_i - x_j|; may be negative."""
    return _scalarize(sample_crps_grad(e, y, fair=True)[0])


def fair_twcrps(e: Members, y: Any, w: Union[WeightSpec, float]) -> Any:
    """Fair CRPS of the chained members and observation."""
    return _scalarize(sample_crps_grad(e, y, w=w, fair=True)[0])


def normal_crps(mu: Any, sigma: Any, y: Any) -> Any:
    """Closed-form CRPS of an untruncated normal."""
    z = (np.asarray(y, dtype=float) - mu) / sigma
    value = sigma * (z * (2.0 * special.ndtr(z) - 1.0) + 2.0 * np.exp(norm_logpdf(z)) - 1.0 / SQRT_PI)
    return _scalarize(value)
