"""
Calibration diagnostics.

PIT and conditional PIT (CPIT) values, calibration curves, and the
miscalibration measures used both for evaluation and as training penalties:

    MCB        divergence of the PIT empirical CDF from the identity
    TMCB       divergence of R-hat_t(u) = #{i in I_t : z_i <= u} / sum_i (1 - F_i(t))
               from the identity, where I_t = {i : y_i > t}
    CPIT-MCB   divergence of the CPIT empirical CDF from the identity

Every curve is a step function with heights scale * k between consecutive
order statistics, so the divergences have exact piecewise closed forms.
The order-statistic average mean|scale * z_(i) - i/N| is available as the
"order" estimator (N = number of values) and "order_n" (N = n, TMCB only).

Penalty functions return gradients with respect to the survival values
sf_i(y_i) and sf_i(t); the loss module chains them to model parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from tailcal.infrastructure.logging import get_logger
from tailcal.models.calibration_curve import CalibrationCurve
from tailcal.models.forecast import CaseInput, as_forecast_set
from tailcal.services.dist import Distribution, EnsembleForecast, _scalarize
from tailcal.services.errors import (
    DomainError,
    EmptyPitSetError,
    PreconditionError,
    degenerate_exceedance,
)
from tailcal.services.result import Result


logger = get_logger(__name__)

DIVERGENCES = ("w1", "cramer", "ks")
ESTIMATORS = ("exact", "order", "order_n")
# floor of the smoothed exceedance probability in the CPIT denominator
SMOOTH_FLOOR = 1e-9

Members = Union[EnsembleForecast, np.ndarray]


def default_u_grid(points: int = 101) -> np.ndarray:
    return np.linspace(0.0, 1.0, points)


@dataclass(frozen=True, eq=False)
class PitSet:
    """
    PIT or CPIT values.

    Attributes:
        values: Values in [0, 1]
        kind: unconditional | conditional
        threshold: t for conditional sets
    """

    values: np.ndarray
    kind: str = "unconditional"
    threshold: Optional[float] = None

    @staticmethod
    def create(values: Any, kind: str = "unconditional", threshold: Optional[float] = None) -> Result["PitSet"]:
        arr = np.atleast_1d(np.asarray(values, dtype=float))
        if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
            return Result.fail(DomainError("PIT values must lie in [0, 1]"))
        if kind not in ("unconditional", "conditional"):
            return Result.fail(DomainError(f"Unknown PIT kind: {kind}"))
        return Result.ok(PitSet(values=arr, kind=kind, threshold=threshold))

    def __len__(self) -> int:
        return int(self.values.size)


# ============================================================================
# PIT / CPIT
# ============================================================================

def pit(d: Distribution, y: Any, rng: Optional[np.random.Generator] = None) -> Any:
    """
    Probability integral transform F(y).

    Ensembles use randomized ranks: with r members below y and s ties,
    the rank is r + 1 + floor(u * (s + 1)) and PIT = rank / (M + 1).
    Without ties no draw is needed; without rng ties take u = 0.5.
    """
    y = np.asarray(y, dtype=float)
    if not isinstance(d, EnsembleForecast):
        return d.cdf(y)

    members = d.members
    below = np.sum(members < y[..., None], axis=-1)
    ties = np.sum(members == y[..., None], axis=-1)
    if rng is not None and np.any(ties > 0):
        u = rng.random(np.shape(ties))
    else:
        u = np.full(np.shape(ties), 0.5)
    rank = below + 1 + np.floor(u * (ties + 1))
    rank = np.minimum(rank, below + ties + 1)
    return _scalarize(rank / (d.size + 1.0))


def cpit(d: Distribution, y: Any, t: Any) -> Any:
    """
    Conditional PIT F_t(y) = 1 - sf(y) / sf(t) for y > t; 1 where sf(t) = 0.

    Raises:
        PreconditionError: Any y <= t
    """
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(y <= t):
        raise PreconditionError(
            "CPIT is defined on exceedances only",
            context={"violations": int(np.sum(np.broadcast_to(y <= t, np.broadcast_shapes(y.shape, t.shape))))}
        )
    sf_t = np.clip(d._sf(t), 0.0, 1.0)
    sf_y = np.clip(d._sf(y), 0.0, 1.0)
    safe = np.where(sf_t > 0.0, sf_t, 1.0)
    z = np.where(sf_t > 0.0, 1.0 - sf_y / safe, 1.0)
    return _scalarize(np.clip(z, 0.0, 1.0))


def pit_set(cases: CaseInput, rng: Optional[np.random.Generator] = None) -> PitSet:
    fs = as_forecast_set(cases)
    values = np.atleast_1d(pit(fs.forecast, fs.obs, rng))
    return PitSet(values=np.clip(values, 0.0, 1.0))


def cpit_set(cases: CaseInput, t: float) -> PitSet:
    """CPIT values of the exceedance set I_t (possibly empty)."""
    fs = as_forecast_set(cases)
    exceed = fs.obs > t
    if not np.any(exceed):
        return PitSet(values=np.empty(0), kind="conditional", threshold=float(t))
    sub = fs.subset(exceed)
    values = np.atleast_1d(cpit(sub.forecast, sub.obs, t))
    return PitSet(values=values, kind="conditional", threshold=float(t))


# ============================================================================
# Divergences of step curves from the identity
# ============================================================================

def _abs_antiderivative(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * np.abs(x)


def step_divergence(
    z: Any, scale: float, div: str = "w1"
) -> Tuple[float, np.ndarray, float]:
    """
    Divergence between H(u) = scale * #{z_i <= u} and u on [0, 1].

    Returns:
        (value, d value / d z in input order, d value / d scale)

    w1 is int |H - u|, cramer is int (H - u)^2, ks is sup |H - u|.
    An empty z gives 1/2, 1/3 and 1 respectively.
    """
    if div not in DIVERGENCES:
        raise DomainError(f"Unknown divergence: {div}", context={"valid": DIVERGENCES})

    z = np.clip(np.atleast_1d(np.asarray(z, dtype=float)), 0.0, 1.0)
    m = z.size
    order = np.argsort(z, kind="stable")
    zs = z[order]
    edges = np.concatenate([[0.0], zs, [1.0]])
    a, b = edges[:-1], edges[1:]
    k = np.arange(m + 1, dtype=float)
    h = scale * k

    if div == "w1":
        value = np.sum(_abs_antiderivative(b - h) - _abs_antiderivative(a - h))
        dz_sorted = np.abs(zs - h[:-1]) - np.abs(zs - h[1:])
        dscale = np.sum(k * (np.abs(a - h) - np.abs(b - h)))
    elif div == "cramer":
        value = np.sum(((b - h) ** 3 - (a - h) ** 3) / 3.0)
        dz_sorted = (zs - h[:-1]) ** 2 - (zs - h[1:]) ** 2
        dscale = np.sum(k * ((a - h) ** 2 - (b - h) ** 2))
    else:
        left, right = a - h, b - h
        candidates = np.concatenate([np.abs(left), np.abs(right)])
        best = int(np.argmax(candidates))
        value = candidates[best]
        dz_sorted = np.zeros(m)
        # subgradient of the active endpoint
        if best <= m:
            seg, sign = best, np.sign(left[best])
            if seg >= 1:
                dz_sorted[seg - 1] = sign
        else:
            seg = best - (m + 1)
            sign = np.sign(right[seg])
            if seg < m:
                dz_sorted[seg] = sign
        dscale = -sign * k[seg]

    dz = np.empty(m)
    dz[order] = dz_sorted
    return float(value), dz, float(dscale)


def order_statistic_divergence(
    z: Any, scale: float, norm: float
) -> Tuple[float, np.ndarray, float]:
    """
    mean_i |scale * z_(i) - i / norm| over the m sorted values.

    Returns (value, d/dz in input order, d/dscale); 1/2 for an empty set.
    """
    z = np.clip(np.atleast_1d(np.asarray(z, dtype=float)), 0.0, 1.0)
    m = z.size
    if m == 0:
        return 0.5, np.empty(0), 0.0
    order = np.argsort(z, kind="stable")
    zs = z[order]
    diff = scale * zs - np.arange(1, m + 1) / norm
    sign = np.sign(diff)
    dz = np.empty(m)
    dz[order] = sign * scale / m
    return float(np.mean(np.abs(diff))), dz, float(np.sum(sign * zs) / m)


# ============================================================================
# Miscalibration measures
# ============================================================================

@dataclass(frozen=True)
class PenaltyValue:
    """
    Penalty value with gradients in the survival values.

    Attributes:
        value: The miscalibration measure
        d_sf_obs: d value / d sf_i(y_i), shape (n,)
        d_sf_threshold: d value / d sf_i(t), shape (n,)
        exceedances: |I_t| (n for MCB)
        occurrence_ratio: O-hat (1 for MCB and CPIT-MCB)
    """

    value: float
    d_sf_obs: np.ndarray
    d_sf_threshold: np.ndarray
    exceedances: int
    occurrence_ratio: float = 1.0


def _conditional_z(
    sf_obs: np.ndarray, sf_threshold: np.ndarray, smoothed: bool
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """CPIT values and their derivatives in sf(y) and sf(t)."""
    if smoothed:
        denom = np.maximum(sf_threshold, SMOOTH_FLOOR)
        z = (sf_threshold - sf_obs) / denom
        dz_dy = -1.0 / denom
        dz_dt = np.where(sf_threshold > SMOOTH_FLOOR, sf_obs / denom ** 2, 1.0 / denom)
        return np.clip(z, 0.0, 1.0), dz_dy, dz_dt

    positive = sf_threshold > 0.0
    safe = np.where(positive, sf_threshold, 1.0)
    z = np.where(positive, 1.0 - sf_obs / safe, 1.0)
    dz_dy = np.where(positive, -1.0 / safe, 0.0)
    dz_dt = np.where(positive, sf_obs / safe ** 2, 0.0)
    return np.clip(z, 0.0, 1.0), dz_dy, dz_dt


def miscalibration_penalty(
    kind: str,
    sf_obs: Any,
    sf_threshold: Any = None,
    exceed: Any = None,
    div: str = "w1",
    estimator: str = "exact",
    smoothed: bool = False,
    threshold: Optional[float] = None,
) -> PenaltyValue:
    """
    MCB, TMCB or CPIT-MCB from survival values, with gradients.

    Args:
        kind: mcb | tmcb | cpit_mcb
        sf_obs: sf_i(y_i) for all n cases
        sf_threshold: sf_i(t) for all n cases (tmcb, cpit_mcb)
        exceed: Boolean mask of I_t (tmcb, cpit_mcb)
        smoothed: CPIT from sigmoid-smoothed survival values

    Raises:
        EmptyPitSetError: No cases (mcb) or no exceedances (cpit_mcb)
        DegenerateExceedanceError: sum_i sf_i(t) = 0 (tmcb)
    """
    if estimator not in ESTIMATORS:
        raise DomainError(f"Unknown estimator: {estimator}", context={"valid": ESTIMATORS})

    sf_obs = np.atleast_1d(np.asarray(sf_obs, dtype=float))
    n = sf_obs.size
    d_obs = np.zeros(n)
    d_thr = np.zeros(n)

    if kind == "mcb":
        if n == 0:
            raise EmptyPitSetError("MCB needs at least one PIT value")
        z = np.clip(1.0 - sf_obs, 0.0, 1.0)
        if estimator == "exact":
            value, dz, _ = step_divergence(z, 1.0 / n, div)
        else:
            value, dz, _ = order_statistic_divergence(z, 1.0, n)
        return PenaltyValue(value=value, d_sf_obs=-dz, d_sf_threshold=d_thr, exceedances=n)

    if kind not in ("tmcb", "cpit_mcb"):
        raise DomainError(f"Unknown penalty: {kind}")

    sf_threshold = np.atleast_1d(np.asarray(sf_threshold, dtype=float))
    exceed = np.atleast_1d(np.asarray(exceed, dtype=bool))
    idx = np.flatnonzero(exceed)
    m = idx.size
    z, dz_dy, dz_dt = _conditional_z(sf_obs[idx], sf_threshold[idx], smoothed)

    if kind == "cpit_mcb":
        if m == 0:
            raise EmptyPitSetError("CPIT-MCB needs at least one exceedance",
                                   context={"threshold": threshold, "cases": n})
        if estimator == "exact":
            value, dz, _ = step_divergence(z, 1.0 / m, div)
        else:
            value, dz, _ = order_statistic_divergence(z, 1.0, m)
        d_obs[idx] = dz * dz_dy
        d_thr[idx] = dz * dz_dt
        return PenaltyValue(value=value, d_sf_obs=d_obs, d_sf_threshold=d_thr, exceedances=m)

    total = float(np.sum(sf_threshold))
    if not total > 0.0:
        raise degenerate_exceedance(threshold, n)
    ohat = m / total

    if estimator == "exact":
        value, dz, dscale = step_divergence(z, 1.0 / total, div)
        d_total = dscale * (-1.0 / total ** 2)
    else:
        norm = m if estimator == "order" else n
        value, dz, dscale = order_statistic_divergence(z, ohat, max(norm, 1))
        d_total = dscale * (-m / total ** 2)

    d_thr += d_total
    if m:
        d_obs[idx] = dz * dz_dy
        d_thr[idx] += dz * dz_dt
    return PenaltyValue(value=value, d_sf_obs=d_obs, d_sf_threshold=d_thr,
                        exceedances=m, occurrence_ratio=ohat)


def mcb(p: Union[PitSet, Sequence[float], np.ndarray], div: str = "w1", estimator: str = "exact") -> float:
    """
    Miscalibration of a PIT set.

    Raises:
        EmptyPitSetError: Empty set
    """
    values = p.values if isinstance(p, PitSet) else np.atleast_1d(np.asarray(p, dtype=float))
    return miscalibration_penalty("mcb", 1.0 - values, div=div, estimator=estimator).value


def _tail_inputs(cases: CaseInput, t: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    fs = as_forecast_set(cases)
    d = fs.forecast
    exceed = fs.obs > t
    sf_t = np.clip(np.atleast_1d(d._sf(np.asarray(t, dtype=float))), 0.0, 1.0)
    sf_t = np.broadcast_to(sf_t, fs.obs.shape)
    sf_y = np.clip(np.atleast_1d(d._sf(fs.obs)), 0.0, 1.0)
    return sf_y, sf_t, exceed


def tmcb(cases: CaseInput, t: float, div: str = "w1", estimator: str = "exact") -> float:
    """
    Tail miscalibration: divergence of R-hat_t from the identity.

    An empty I_t with positive total exceedance probability gives the
    divergence of the zero curve (0.5 for w1).

    Raises:
        DegenerateExceedanceError: sum_i (1 - F_i(t)) = 0
    """
    sf_y, sf_t, exceed = _tail_inputs(cases, t)
    return miscalibration_penalty("tmcb", sf_y, sf_t, exceed, div, estimator, threshold=t).value


def cpit_mcb(cases: CaseInput, t: float, div: str = "w1", estimator: str = "exact") -> float:
    """
    Divergence of the CPIT empirical CDF from the identity (ignores O-hat).

    Raises:
        EmptyPitSetError: No exceedances of t
    """
    sf_y, sf_t, exceed = _tail_inputs(cases, t)
    return miscalibration_penalty("cpit_mcb", sf_y, sf_t, exceed, div, estimator, threshold=t).value


# ============================================================================
# Curves
# ============================================================================

def _ecdf_counts(z: np.ndarray, u_grid: np.ndarray) -> np.ndarray:
    return np.searchsorted(np.sort(z), u_grid, side="right").astype(float)


def pit_curve(p: PitSet, u_grid: Optional[np.ndarray] = None) -> CalibrationCurve:
    """Empirical CDF of a PIT or CPIT set; the zero curve for an empty set."""
    u_grid = default_u_grid() if u_grid is None else np.asarray(u_grid, dtype=float)
    kind = "pit" if p.kind == "unconditional" else "cpit"
    if len(p) == 0:
        logger.warning("empty_pit_set", kind=kind, threshold=p.threshold)
        return CalibrationCurve(u_grid=u_grid, values=np.zeros_like(u_grid), kind=kind,
                                threshold=p.threshold, empty=True)
    values = _ecdf_counts(p.values, u_grid) / len(p)
    return CalibrationCurve(u_grid=u_grid, values=values, kind=kind, threshold=p.threshold)


def rhat_curve(cases: CaseInput, t: float, u_grid: Optional[np.ndarray] = None) -> CalibrationCurve:
    """
    R-hat_t(u) = O-hat * H_z(u), with O-hat = |I_t| / sum_i (1 - F_i(t)).

    Raises:
        DegenerateExceedanceError: sum_i (1 - F_i(t)) = 0
    """
    u_grid = default_u_grid() if u_grid is None else np.asarray(u_grid, dtype=float)
    fs = as_forecast_set(cases)
    sf_t = np.broadcast_to(np.atleast_1d(fs.forecast.sf(t)), fs.obs.shape)
    total = float(np.sum(sf_t))
    if not total > 0.0:
        raise degenerate_exceedance(t, len(fs))

    z = cpit_set(fs, t).values
    m = z.size
    ohat = m / total
    if m == 0:
        logger.warning("empty_exceedance_set", threshold=t, cases=len(fs))
        return CalibrationCurve(u_grid=u_grid, values=np.zeros_like(u_grid), occurrence_ratio=0.0,
                                kind="rhat", threshold=float(t), empty=True)
    values = ohat * (_ecdf_counts(z, u_grid) / m)
    return CalibrationCurve(u_grid=u_grid, values=values, occurrence_ratio=ohat,
                            kind="rhat", threshold=float(t))


# ============================================================================
# Smoothed PIT for sample-backed forecasts
# ============================================================================

def _members(e: Members) -> np.ndarray:
    if isinstance(e, EnsembleForecast):
        return e.members
    return np.atleast_1d(np.asarray(e, dtype=float))


def smoothed_pit(e: Members, y: Any, nu: float) -> Any:
    """(1/M) sum_i sigmoid((y - x_i) / nu)."""
    x = _members(e)
    y = np.asarray(y, dtype=float)
    return _scalarize(np.mean(special.expit((y[..., None] - x) / nu), axis=-1))


def smoothed_sf_grad(e: Members, x_eval: Any, nu: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Smoothed survival 1 - smoothed_pit(e, x_eval) and its member gradient.

    Returns:
        (sf, d sf / d members) with shapes batch and batch + (M,)
    """
    x = _members(e)
    s = special.expit((np.asarray(x_eval, dtype=float)[..., None] - x) / nu)
    M = x.shape[-1]
    return 1.0 - np.mean(s, axis=-1), s * (1.0 - s) / (nu * M)


def smoothed_tail_stats(e: Members, y: Any, t: Any, nu: float) -> Tuple[Any, Any]:
    """
    (smoothed CPIT, smoothed exceedance probability).

    CPIT = (F(y) - F(t)) / max(1 - F(t), 1e-9) with F the smoothed PIT.
    """
    f_y = np.asarray(smoothed_pit(e, y, nu))
    f_t = np.asarray(smoothed_pit(e, t, nu))
    exceedance = 1.0 - f_t
    z = (f_y - f_t) / np.maximum(exceedance, SMOOTH_FLOOR)
    return _scalarize(z), _scalarize(exceedance)
