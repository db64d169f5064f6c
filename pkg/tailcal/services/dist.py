"""
Predictive distributions.

Every distribution is batched: parameters are numpy arrays sharing a batch
shape, and cdf/sf/pdf/quantile broadcast their argument against it. A single
forecast is simply a distribution with batch shape ().

Families:
    TruncatedNormal         N(mu, sigma) truncated below at `lower`
    NormalMixture           finite mixture of normals (Normal is the K=1 case)
    PiecewiseScaleNormal    scale 1 above zero, scale 2 below zero
    EnsembleForecast        empirical distribution of M sorted members
    MixtureOfForecasts      a * first + (1 - a) * second
    ExcessDistribution      F conditioned on exceeding a threshold

Standard-normal functions come from scipy.special (ndtr, ndtri, log_ndtr).
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Any, List, Sequence, Tuple, Union

import numpy as np
from scipy import special

from tailcal.services.errors import (
    DomainError,
    InvalidParameterError,
    UnsupportedDistributionError,
)


ArrayLike = Union[float, Sequence[float], np.ndarray]

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
MIN_SIGMA = 1e-8


def _scalarize(value: np.ndarray) -> Any:
    """0-d results come back as plain floats."""
    value = np.asarray(value)
    if value.ndim == 0:
        return float(value)
    return value


def _check_probability(p: np.ndarray) -> None:
    if np.any(~np.isfinite(p)) or np.any(p <= 0.0) or np.any(p >= 1.0):
        raise DomainError(
            "Quantile level must lie strictly inside (0, 1)",
            context={"min": float(np.min(p)), "max": float(np.max(p))}
        )


def norm_logpdf(z: np.ndarray) -> np.ndarray:
    return -0.5 * z * z - LOG_SQRT_2PI


def norm_pdf(z: np.ndarray) -> np.ndarray:
    return np.exp(norm_logpdf(z))


class Distribution(ABC):
    """Batched univariate predictive distribution."""

    has_density: bool = True

    @property
    @abstractmethod
    def batch_shape(self) -> Tuple[int, ...]:
        ...

    @abstractmethod
    def _cdf(self, x: np.ndarray) -> np.ndarray:
        ...

    def _sf(self, x: np.ndarray) -> np.ndarray:
        return 1.0 - self._cdf(x)

    def _pdf(self, x: np.ndarray) -> np.ndarray:
        raise UnsupportedDistributionError(
            f"{type(self).__name__} has no density"
        )

    def _logpdf(self, x: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self._pdf(x))

    @abstractmethod
    def _quantile(self, p: np.ndarray) -> np.ndarray:
        ...

    def _isf(self, q: np.ndarray) -> np.ndarray:
        return self._quantile(1.0 - q)

    @abstractmethod
    def __getitem__(self, index) -> "Distribution":
        ...

    def breakpoints(self) -> List[float]:
        """Points where a scalar forecast's cdf has a kink or jump."""
        return []

    # Public API -----------------------------------------------------------

    def cdf(self, x: ArrayLike) -> Any:
        return _scalarize(np.clip(self._cdf(np.asarray(x, dtype=float)), 0.0, 1.0))

    def sf(self, x: ArrayLike) -> Any:
        return _scalarize(np.clip(self._sf(np.asarray(x, dtype=float)), 0.0, 1.0))

    def pdf(self, x: ArrayLike) -> Any:
        if not self.has_density:
            raise UnsupportedDistributionError(
                f"{type(self).__name__} has no density"
            )
        return _scalarize(self._pdf(np.asarray(x, dtype=float)))

    def logpdf(self, x: ArrayLike) -> Any:
        if not self.has_density:
            raise UnsupportedDistributionError(
                f"{type(self).__name__} has no density"
            )
        return _scalarize(self._logpdf(np.asarray(x, dtype=float)))

    def quantile(self, p: ArrayLike) -> Any:
        p = np.asarray(p, dtype=float)
        _check_probability(p)
        return _scalarize(self._quantile(p))

    def isf(self, q: ArrayLike) -> Any:
        """Inverse survival function: x with sf(x) = q."""
        q = np.asarray(q, dtype=float)
        _check_probability(q)
        return _scalarize(self._isf(q))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """
        Draw n values per batch element; shape batch_shape + (n,).

        Inverse-transform sampling keeps draws deterministic given rng.
        """
        u = rng.random(self.batch_shape + (int(n),))
        u = np.clip(u, 1e-300, 1.0 - 1e-16)
        return self._quantile_batched(u)

    def _quantile_batched(self, u: np.ndarray) -> np.ndarray:
        """Quantiles for u of shape batch_shape + (n,)."""
        expanded = self._expand_last()
        return expanded._quantile(u)

    def _expand_last(self) -> "Distribution":
        """Same distribution with parameters broadcastable over a trailing axis."""
        raise NotImplementedError

    def excess_distribution(self, t: ArrayLike) -> "ExcessDistribution":
        return ExcessDistribution(self, t)

    def __len__(self) -> int:
        shape = self.batch_shape
        if not shape:
            raise TypeError("scalar distribution has no length")
        return shape[0]


# ============================================================================
# Truncated normal
# ============================================================================

class TruncatedNormal(Distribution):
    """
    Normal(mu, sigma) truncated to [lower, inf).

    All tail quantities are evaluated in log space
    (sf(x) = exp(log_ndtr(-z) - log_ndtr(-alpha))) so upper-tail
    probabilities keep full relative precision.
    """

    def __init__(self, mu: ArrayLike, sigma: ArrayLike, lower: ArrayLike = 0.0):
        mu = np.asarray(mu, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        lower = np.asarray(lower, dtype=float)
        mu, sigma, lower = np.broadcast_arrays(mu, sigma, lower)

        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise InvalidParameterError("TruncatedNormal parameters must be finite")
        if np.any(sigma < MIN_SIGMA):
            raise InvalidParameterError(
                "TruncatedNormal sigma below minimum",
                context={"min_sigma": float(np.min(sigma)), "floor": MIN_SIGMA}
            )
        if not np.all(np.isfinite(lower)):
            raise InvalidParameterError("TruncatedNormal lower bound must be finite")

        self.mu = mu
        self.sigma = sigma
        self.lower = lower

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return self.mu.shape

    @property
    def alpha(self) -> np.ndarray:
        return (self.lower - self.mu) / self.sigma

    @property
    def log_mass(self) -> np.ndarray:
        """log(1 - Phi(alpha)), the log mass of the untruncated normal above lower."""
        return special.log_ndtr(-self.alpha)

    def _z(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mu) / self.sigma

    def _sf(self, x: np.ndarray) -> np.ndarray:
        z = np.maximum(self._z(x), self.alpha)
        sf = np.exp(special.log_ndtr(-z) - self.log_mass)
        return np.where(x < self.lower, 1.0, np.minimum(sf, 1.0))

    def _cdf(self, x: np.ndarray) -> np.ndarray:
        return 1.0 - self._sf(x)

    def sf_grad(self, x: ArrayLike) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Survival function with its derivatives in (mu, sigma).

        With s = (x - mu)/sigma, r = phi(alpha)/c:
            dsf/dmu    = (phi(s) - r * Phibar(s)) / (sigma * c)
            dsf/dsigma = (s * phi(s) - r * alpha * Phibar(s)) / (sigma * c)
        Both vanish below the truncation point.
        """
        x = np.asarray(x, dtype=float)
        alpha = self.alpha
        log_c = self.log_mass
        s = np.maximum(self._z(x), alpha)
        ratio_sf = np.exp(special.log_ndtr(-s) - log_c)
        ratio_pdf = np.exp(norm_logpdf(s) - log_c)
        r = np.exp(norm_logpdf(alpha) - log_c)

        below = x < self.lower
        sf = np.where(below, 1.0, np.minimum(ratio_sf, 1.0))
        dmu = np.where(below, 0.0, (ratio_pdf - r * ratio_sf) / self.sigma)
        dsigma = np.where(below, 0.0, (s * ratio_pdf - r * alpha * ratio_sf) / self.sigma)
        return sf, dmu, dsigma

    def _logpdf(self, x: np.ndarray) -> np.ndarray:
        z = self._z(x)
        value = norm_logpdf(z) - np.log(self.sigma) - self.log_mass
        return np.where(x < self.lower, -np.inf, value)

    def _pdf(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self._logpdf(x))

    def _isf(self, q: np.ndarray) -> np.ndarray:
        z = -special.ndtri(q * np.exp(self.log_mass))
        x = np.maximum(self.mu + self.sigma * z, self.lower)
        return self._polish(x, q, upper=True)

    def _quantile(self, p: np.ndarray) -> np.ndarray:
        # Phi(z) = Phi(alpha) + p * (1 - Phi(alpha)), solved on whichever side is precise
        mass = np.exp(self.log_mass)
        target = special.ndtr(self.alpha) + p * mass
        z_low = special.ndtri(np.clip(target, 0.0, 1.0))
        z_high = -special.ndtri(np.clip((1.0 - p) * mass, 0.0, 1.0))
        z = np.where(target < 0.5, z_low, z_high)
        x = np.maximum(self.mu + self.sigma * z, self.lower)
        return self._polish(x, p, upper=False)

    def _polish(self, x: np.ndarray, level: np.ndarray, upper: bool) -> np.ndarray:
        """Two Newton steps on cdf(x) = level (or sf(x) = level) where the density is usable."""
        for _ in range(2):
            dens = self._pdf(x)
            usable = np.isfinite(x) & (dens > 1e-300)
            if upper:
                residual = level - self._sf(x)
            else:
                residual = self._cdf(x) - level
            step = np.where(usable, residual / np.where(usable, dens, 1.0), 0.0)
            x = np.maximum(x - step, self.lower)
        return x

    def _expand_last(self) -> "TruncatedNormal":
        return TruncatedNormal(self.mu[..., None], self.sigma[..., None], self.lower[..., None])

    def __getitem__(self, index) -> "TruncatedNormal":
        return TruncatedNormal(self.mu[index], self.sigma[index], self.lower[index])

    def breakpoints(self) -> List[float]:
        return [float(self.lower)]

    def __repr__(self) -> str:
        return f"TruncatedNormal(batch_shape={self.batch_shape})"


# ============================================================================
# Normal mixtures
# ============================================================================

class NormalMixture(Distribution):
    """
    Mixture of K normals; component axis is the last axis of each array.

    Args:
        weights, means, sds: arrays of shape batch_shape + (K,)
    """

    def __init__(self, weights: ArrayLike, means: ArrayLike, sds: ArrayLike):
        weights = np.asarray(weights, dtype=float)
        means = np.asarray(means, dtype=float)
        sds = np.asarray(sds, dtype=float)
        weights, means, sds = np.broadcast_arrays(weights, means, sds)

        if weights.ndim == 0:
            raise InvalidParameterError("NormalMixture needs a component axis")
        if np.any(weights < 0.0) or np.any(np.abs(weights.sum(axis=-1) - 1.0) > 1e-9):
            raise InvalidParameterError("Mixture weights must be nonnegative and sum to 1")
        if np.any(~np.isfinite(means)) or np.any(~(sds > 0.0)):
            raise InvalidParameterError("Mixture components need finite means and sd > 0")

        self.weights = weights
        self.means = means
        self.sds = sds

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return self.weights.shape[:-1]

    def _components(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x)[..., None] - self.means) / self.sds

    def _cdf(self, x: np.ndarray) -> np.ndarray:
        return np.sum(self.weights * special.ndtr(self._components(x)), axis=-1)

    def _sf(self, x: np.ndarray) -> np.ndarray:
        return np.sum(self.weights * special.ndtr(-self._components(x)), axis=-1)

    def _pdf(self, x: np.ndarray) -> np.ndarray:
        z = self._components(x)
        return np.sum(self.weights * norm_pdf(z) / self.sds, axis=-1)

    def _quantile(self, p: np.ndarray) -> np.ndarray:
        # vectorized bisection bracketed by the extreme component quantiles
        spread = 40.0 * np.max(self.sds, axis=-1)
        lo = np.min(self.means, axis=-1) - spread
        hi = np.max(self.means, axis=-1) + spread
        lo, hi, p = np.broadcast_arrays(lo, hi, p)
        lo = lo.copy()
        hi = hi.copy()
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            below = self._cdf(mid) < p
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        x = 0.5 * (lo + hi)
        for _ in range(2):
            dens = self._pdf(x)
            usable = dens > 1e-300
            x = x - np.where(usable, (self._cdf(x) - p) / np.where(usable, dens, 1.0), 0.0)
        return x

    def _expand_last(self) -> "NormalMixture":
        return NormalMixture(self.weights[..., None, :], self.means[..., None, :], self.sds[..., None, :])

    def __getitem__(self, index) -> "NormalMixture":
        return NormalMixture(self.weights[index], self.means[index], self.sds[index])

    def __repr__(self) -> str:
        return f"NormalMixture(batch_shape={self.batch_shape}, components={self.weights.shape[-1]})"


class Normal(NormalMixture):
    """Single normal; closed-form quantiles."""

    def __init__(self, mu: ArrayLike, sigma: ArrayLike):
        mu = np.asarray(mu, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        mu, sigma = np.broadcast_arrays(mu, sigma)
        super().__init__(np.ones(mu.shape + (1,)), mu[..., None], sigma[..., None])

    @property
    def mu(self) -> np.ndarray:
        return self.means[..., 0]

    @property
    def sigma(self) -> np.ndarray:
        return self.sds[..., 0]

    def _quantile(self, p: np.ndarray) -> np.ndarray:
        return self.mu + self.sigma * special.ndtri(p)

    def _isf(self, q: np.ndarray) -> np.ndarray:
        return self.mu - self.sigma * special.ndtri(q)

    def _expand_last(self) -> "Normal":
        return Normal(self.mu[..., None], self.sigma[..., None])

    def __getitem__(self, index) -> "Normal":
        return Normal(self.mu[index], self.sigma[index])


# ============================================================================
# Piecewise-scale forecaster
# ============================================================================

class PiecewiseScaleNormal(Distribution):
    """
    cdf(x) = Phi((x - mu) / inner) for x >= 0, Phi((x - mu) / outer) for x < 0.

    Evaluated exactly as written; for mu > 0 the cdf drops at 0 and the
    density does not integrate to one. Quantiles use the generalized
    inverse inf{x : cdf(x) >= p}.
    """

    def __init__(self, mu: ArrayLike, inner_scale: float = 1.0, outer_scale: float = 2.0):
        mu = np.asarray(mu, dtype=float)
        if not np.all(np.isfinite(mu)):
            raise InvalidParameterError("PiecewiseScaleNormal location must be finite")
        if inner_scale <= 0 or outer_scale <= 0:
            raise InvalidParameterError(
                "Scales must be positive",
                context={"inner_scale": inner_scale, "outer_scale": outer_scale}
            )
        self.mu = mu
        self.inner_scale = float(inner_scale)
        self.outer_scale = float(outer_scale)

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return self.mu.shape

    def _scale(self, x: np.ndarray) -> np.ndarray:
        return np.where(x >= 0.0, self.inner_scale, self.outer_scale)

    def _cdf(self, x: np.ndarray) -> np.ndarray:
        return special.ndtr((x - self.mu) / self._scale(x))

    def _sf(self, x: np.ndarray) -> np.ndarray:
        return special.ndtr(-(x - self.mu) / self._scale(x))

    def _pdf(self, x: np.ndarray) -> np.ndarray:
        scale = self._scale(x)
        return norm_pdf((x - self.mu) / scale) / scale

    def _quantile(self, p: np.ndarray) -> np.ndarray:
        left_limit = special.ndtr(-self.mu / self.outer_scale)
        left = self.mu + self.outer_scale * special.ndtri(p)
        right = np.maximum(0.0, self.mu + self.inner_scale * special.ndtri(p))
        return np.where(p < left_limit, left, right)

    def _expand_last(self) -> "PiecewiseScaleNormal":
        return PiecewiseScaleNormal(self.mu[..., None], self.inner_scale, self.outer_scale)

    def __getitem__(self, index) -> "PiecewiseScaleNormal":
        return PiecewiseScaleNormal(self.mu[index], self.inner_scale, self.outer_scale)

    def breakpoints(self) -> List[float]:
        return [0.0]


# ============================================================================
# Ensembles
# ============================================================================

class EnsembleForecast(Distribution):
    """
    Empirical distribution of M members (last axis), stored sorted.

    cdf(x) = #(members <= x) / M.
    """

    has_density = False

    def __init__(self, members: ArrayLike):
        members = np.asarray(members, dtype=float)
        if members.ndim == 0:
            members = members[None]
        if members.shape[-1] < 1:
            raise InvalidParameterError("Ensemble needs at least one member")
        if not np.all(np.isfinite(members)):
            raise InvalidParameterError("Ensemble members must be finite")
        self.order = np.argsort(members, axis=-1, kind="stable")
        self.members = np.take_along_axis(members, self.order, axis=-1)

    @property
    def size(self) -> int:
        return self.members.shape[-1]

    def unsort(self, values: np.ndarray) -> np.ndarray:
        """Map per-member values from sorted order back to the input member order."""
        out = np.empty_like(values)
        np.put_along_axis(out, np.broadcast_to(self.order, values.shape), values, axis=-1)
        return out

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return self.members.shape[:-1]

    def _count_le(self, x: np.ndarray) -> np.ndarray:
        return np.sum(self.members <= np.asarray(x)[..., None], axis=-1)

    def _cdf(self, x: np.ndarray) -> np.ndarray:
        return self._count_le(x) / self.size

    def _sf(self, x: np.ndarray) -> np.ndarray:
        return (self.size - self._count_le(x)) / self.size

    def _quantile(self, p: np.ndarray) -> np.ndarray:
        k = np.clip(np.ceil(p * self.size).astype(int) - 1, 0, self.size - 1)
        k = np.broadcast_to(k, np.broadcast_shapes(np.shape(k), self.batch_shape))
        members = np.broadcast_to(self.members, k.shape + (self.size,))
        return np.take_along_axis(members, k[..., None], axis=-1)[..., 0]

    def _quantile_batched(self, u: np.ndarray) -> np.ndarray:
        k = np.clip(np.ceil(u * self.size).astype(int) - 1, 0, self.size - 1)
        return np.take_along_axis(self.members, k, axis=-1)

    def __getitem__(self, index) -> "EnsembleForecast":
        if isinstance(index, tuple):
            raise IndexError("index the batch axis only")
        return EnsembleForecast(self.members[index])

    def breakpoints(self) -> List[float]:
        return [float(v) for v in np.ravel(self.members)]

    def __repr__(self) -> str:
        return f"EnsembleForecast(batch_shape={self.batch_shape}, members={self.size})"


# ============================================================================
# Combinations
# ============================================================================

class MixtureOfForecasts(Distribution):
    """a * first + (1 - a) * second."""

    def __init__(self, a: ArrayLike, first: Distribution, second: Distribution):
        a = np.asarray(a, dtype=float)
        if np.any(a < 0.0) or np.any(a > 1.0):
            raise InvalidParameterError("Mixing weight must lie in [0, 1]", context={"a": a.tolist()})
        self.a = a
        self.first = first
        self.second = second
        self.has_density = first.has_density and second.has_density

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return np.broadcast_shapes(self.a.shape, self.first.batch_shape, self.second.batch_shape)

    def _cdf(self, x: np.ndarray) -> np.ndarray:
        return self.a * self.first._cdf(x) + (1.0 - self.a) * self.second._cdf(x)

    def _sf(self, x: np.ndarray) -> np.ndarray:
        return self.a * self.first._sf(x) + (1.0 - self.a) * self.second._sf(x)

    def _pdf(self, x: np.ndarray) -> np.ndarray:
        return self.a * self.first._pdf(x) + (1.0 - self.a) * self.second._pdf(x)

    def _quantile(self, p: np.ndarray) -> np.ndarray:
        q1 = self.first._quantile(p)
        q2 = self.second._quantile(p)
        lo = np.minimum(q1, q2) - 1e-9 * (1.0 + np.abs(np.minimum(q1, q2)))
        hi = np.maximum(q1, q2) + 1e-9 * (1.0 + np.abs(np.maximum(q1, q2)))
        lo, hi, p = np.broadcast_arrays(lo, hi, p)
        lo = lo.copy()
        hi = hi.copy()
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            below = self._cdf(mid) < p
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return hi

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        a = self.a[..., None] if self.a.ndim else self.a
        pick_first = rng.random(self.batch_shape + (int(n),)) < a
        first = self.first.sample(rng, n)
        second = self.second.sample(rng, n)
        return np.where(pick_first, first, second)

    def _expand_last(self) -> "MixtureOfForecasts":
        a = self.a[..., None] if self.a.ndim else self.a
        return MixtureOfForecasts(a, self.first._expand_last(), self.second._expand_last())

    def __getitem__(self, index) -> "MixtureOfForecasts":
        a = self.a[index] if self.a.ndim else self.a
        return MixtureOfForecasts(a, self.first[index], self.second[index])

    def breakpoints(self) -> List[float]:
        return sorted(set(self.first.breakpoints()) | set(self.second.breakpoints()))


class ExcessDistribution(Distribution):
    """
    F_t(x) = (F(x) - F(t)) / (1 - F(t)) for x >= t, 0 below t.

    When F(t) = 1 the excess distribution is the constant F_t = 1.
    Computed as 1 - sf(x) / sf(t).
    """

    def __init__(self, base: Distribution, t: ArrayLike):
        self.base = base
        self.t = np.asarray(t, dtype=float)
        self.has_density = base.has_density

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return np.broadcast_shapes(self.base.batch_shape, self.t.shape)

    @property
    def tail_mass(self) -> np.ndarray:
        return self.base._sf(self.t)

    def _cdf(self, x: np.ndarray) -> np.ndarray:
        mass = self.tail_mass
        ratio = self.base._sf(np.maximum(x, self.t)) / np.where(mass > 0.0, mass, 1.0)
        value = np.clip(1.0 - ratio, 0.0, 1.0)
        value = np.where(x < self.t, 0.0, value)
        return np.where(mass > 0.0, value, 1.0)

    def _pdf(self, x: np.ndarray) -> np.ndarray:
        mass = self.tail_mass
        dens = self.base._pdf(x) / np.where(mass > 0.0, mass, 1.0)
        return np.where((x > self.t) & (mass > 0.0), dens, 0.0)

    def _quantile(self, p: np.ndarray) -> np.ndarray:
        mass = self.tail_mass
        q = np.clip((1.0 - p) * mass, 1e-300, 1.0 - 1e-16)
        x = self.base._isf(q)
        return np.where(mass > 0.0, np.maximum(x, self.t), self.t)

    def _expand_last(self) -> "ExcessDistribution":
        t = self.t[..., None] if self.t.ndim else self.t
        return ExcessDistribution(self.base._expand_last(), t)

    def __getitem__(self, index) -> "ExcessDistribution":
        t = self.t[index] if self.t.ndim else self.t
        return ExcessDistribution(self.base[index], t)

    def breakpoints(self) -> List[float]:
        return sorted(set(self.base.breakpoints()) | {float(v) for v in np.unique(self.t)})


# ============================================================================
# Batch helpers
# ============================================================================

def stack(distributions: Sequence[Distribution]) -> Distribution:
    """
    Concatenate scalar or 1-D batched distributions of one family along the batch axis.

    Raises:
        InvalidParameterError: Empty input or mixed families
    """
    if not distributions:
        raise InvalidParameterError("Cannot stack an empty list of forecasts")

    kind = type(distributions[0])
    if any(type(d) is not kind for d in distributions):
        raise InvalidParameterError(
            "Cannot stack forecasts of different families",
            context={"families": sorted({type(d).__name__ for d in distributions})}
        )

    def cat(arrays):
        return np.concatenate([np.atleast_1d(a) for a in arrays])

    def cat_rows(arrays):
        return np.concatenate([a.reshape((-1, a.shape[-1])) for a in arrays], axis=0)

    if kind is TruncatedNormal:
        return TruncatedNormal(
            cat([d.mu for d in distributions]),
            cat([d.sigma for d in distributions]),
            cat([d.lower for d in distributions]),
        )
    if kind is Normal:
        return Normal(cat([d.mu for d in distributions]), cat([d.sigma for d in distributions]))
    if kind is NormalMixture:
        return NormalMixture(
            cat_rows([d.weights for d in distributions]),
            cat_rows([d.means for d in distributions]),
            cat_rows([d.sds for d in distributions]),
        )
    if kind is PiecewiseScaleNormal:
        first = distributions[0]
        return PiecewiseScaleNormal(
            cat([d.mu for d in distributions]), first.inner_scale, first.outer_scale
        )
    if kind is EnsembleForecast:
        sizes = {d.size for d in distributions}
        if len(sizes) != 1:
            raise InvalidParameterError("Ensembles must share a member count", context={"sizes": sorted(sizes)})
        return EnsembleForecast(cat_rows([d.members for d in distributions]))
    if kind is MixtureOfForecasts:
        n_each = [int(np.prod(d.batch_shape)) if d.batch_shape else 1 for d in distributions]
        a = cat([np.broadcast_to(d.a, (k,)) for d, k in zip(distributions, n_each)])
        return MixtureOfForecasts(
            a,
            stack([d.first for d in distributions]),
            stack([d.second for d in distributions]),
        )

    raise InvalidParameterError(f"Cannot stack {kind.__name__}")
