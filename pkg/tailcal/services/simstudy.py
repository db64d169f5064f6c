"""
Mixture-forecaster simulation study.

Latent mean mu ~ N(0, 1), a sign tau = +-1 with equal probability and the
outcome y | mu ~ N(mu, 1). Two forecasters see mu and tau:

    F1 = 0.5 N(mu, 1) + 0.5 N(mu + tau, 1)       calibrated, not tail calibrated
    F2 = piecewise-scale normal at mu              tail calibrated, not calibrated
    F_a = a F1 + (1 - a) F2

The mixing weight a is fitted by minimizing the mean log score of F_a plus
gamma times a penalty (censored likelihood, MCB or TMCB). Every quantity of
F_a is linear in a given the component values at the observations and at
the threshold, so those are computed once per record set.

Usage:
    records = simulate(100_000, seed=7)
    a_hat = estimate_a(records)
    sweep = gamma_sweep(records, ["cls", "mcb", "tmcb"], log_gamma_grid(1e-2, 1e4, 25))
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from tailcal.infrastructure.logging import get_logger
from tailcal.models.calibration_curve import CalibrationCurve
from tailcal.models.forecast import ForecastSet
from tailcal.services.calib import DIVERGENCES, ESTIMATORS, PitSet, miscalibration_penalty, pit_curve, rhat_curve
from tailcal.services.dist import MixtureOfForecasts, NormalMixture, PiecewiseScaleNormal
from tailcal.services.errors import CalibrationError, ConfigError, InsufficientDataError, TailCalError
from tailcal.services.optim import OptimizerConfig, minimize_scalar_bounded
from tailcal.services.result import Result
from tailcal.services.scores import DENSITY_FLOOR


logger = get_logger(__name__)

PENALTIES = ("none", "cls", "mcb", "tmcb")
# reference setting; the 95% quantile of Y ~ N(0, 2) itself is about 2.326
DEFAULT_THRESHOLD = 3.29
SWEEP_COLUMNS = ("penalty", "gamma", "a_hat", "objective", "log_score", "cls", "mcb", "tmcb", "ohat")
LOG_FLOOR = np.log(DENSITY_FLOOR)


@dataclass(frozen=True)
class SimRecord:
    mu: float
    tau: int
    y: float


@dataclass(frozen=True, eq=False)
class SimRecords:
    """
    Simulated records in batched form.

    Attributes:
        mu: Latent means, shape (n,)
        tau: Signs in {-1, +1}, shape (n,)
        y: Outcomes, shape (n,)
    """

    mu: np.ndarray
    tau: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def __iter__(self) -> Iterator[SimRecord]:
        for mu, tau, y in zip(self.mu, self.tau, self.y):
            yield SimRecord(mu=float(mu), tau=int(tau), y=float(y))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"mu": self.mu, "tau": self.tau, "y": self.y})


def simulate(n: int, seed: int) -> SimRecords:
    """
    Draw n independent records.

    Raises:
        ConfigError: n < 1
    """
    if n < 1:
        raise ConfigError("Simulation size must be >= 1", context={"n": n})
    rng = np.random.default_rng(seed)
    mu = rng.standard_normal(n)
    tau = np.where(rng.random(n) < 0.5, -1, 1)
    y = mu + rng.standard_normal(n)
    logger.info("records_simulated", n=n, seed=seed)
    return SimRecords(mu=mu, tau=tau, y=y)


def forecasters(record: Any) -> Tuple[NormalMixture, PiecewiseScaleNormal]:
    """F1 and F2 for one SimRecord, or batched over SimRecords."""
    mu = np.asarray(record.mu, dtype=float)
    tau = np.asarray(record.tau, dtype=float)
    means = np.stack([mu, mu + tau], axis=-1)
    f1 = NormalMixture(np.full(means.shape, 0.5), means, np.ones(means.shape))
    return f1, PiecewiseScaleNormal(mu)


def mixture_forecast(records: SimRecords, a: float) -> MixtureOfForecasts:
    f1, f2 = forecasters(records)
    return MixtureOfForecasts(a, f1, f2)


# ============================================================================
# Mixture terms
# ============================================================================

@dataclass(frozen=True, eq=False)
class MixtureTerms:
    """
    Component values of F1 and F2 at the observations and the threshold.

    Attributes:
        pdf: Densities at y, shape (2, n)
        sf_obs: Survival values at y, shape (2, n)
        sf_threshold: Survival values at t, shape (2, n)
        exceed: y > t
        threshold: t
    """

    pdf: np.ndarray
    sf_obs: np.ndarray
    sf_threshold: np.ndarray
    exceed: np.ndarray
    threshold: float

    @staticmethod
    def build(records: SimRecords, t: float = DEFAULT_THRESHOLD) -> "MixtureTerms":
        if len(records) == 0:
            raise InsufficientDataError("Simulation study needs at least one record")
        f1, f2 = forecasters(records)
        t_arr = np.full(records.y.shape, float(t))
        return MixtureTerms(
            pdf=np.stack([f1._pdf(records.y), f2._pdf(records.y)]),
            sf_obs=np.stack([f1._sf(records.y), f2._sf(records.y)]),
            sf_threshold=np.stack([f1._sf(t_arr), f2._sf(t_arr)]),
            exceed=records.y > t,
            threshold=float(t),
        )

    @staticmethod
    def _mix(values: np.ndarray, a: float) -> np.ndarray:
        return a * values[0] + (1.0 - a) * values[1]

    def log_scores(self, a: float) -> np.ndarray:
        return -np.maximum(np.log(np.maximum(self._mix(self.pdf, a), DENSITY_FLOOR)), LOG_FLOOR)

    def log_score(self, a: float) -> float:
        return float(np.mean(self.log_scores(a)))

    def cls(self, a: float) -> float:
        """Mean censored likelihood score at t."""
        cdf_t = np.clip(1.0 - self._mix(self.sf_threshold, a), DENSITY_FLOOR, None)
        below = -np.log(cdf_t)
        return float(np.mean(np.where(self.exceed, self.log_scores(a), below)))

    def sf(self, a: float) -> Tuple[np.ndarray, np.ndarray]:
        return (np.clip(self._mix(self.sf_obs, a), 0.0, 1.0),
                np.clip(self._mix(self.sf_threshold, a), 0.0, 1.0))

    def mcb(self, a: float, div: str = "w1", estimator: str = "exact") -> float:
        sf_obs, _ = self.sf(a)
        return miscalibration_penalty("mcb", sf_obs, div=div, estimator=estimator).value

    def tmcb(self, a: float, div: str = "w1", estimator: str = "exact") -> float:
        sf_obs, sf_t = self.sf(a)
        return miscalibration_penalty("tmcb", sf_obs, sf_t, self.exceed, div, estimator,
                                      threshold=self.threshold).value

    def ohat(self, a: float) -> float:
        _, sf_t = self.sf(a)
        total = float(np.sum(sf_t))
        return float(np.sum(self.exceed)) / total if total > 0 else float("nan")

    def penalty(self, name: str, a: float, div: str = "w1", estimator: str = "exact") -> float:
        if name == "none":
            return 0.0
        if name == "cls":
            return self.cls(a)
        if name == "mcb":
            return self.mcb(a, div, estimator)
        return self.tmcb(a, div, estimator)


# ============================================================================
# Estimation
# ============================================================================

def _check_objective(penalty: str, gamma: float, div: str, estimator: str) -> None:
    if penalty not in PENALTIES:
        raise ConfigError(f"Unknown simulation penalty: {penalty}", context={"valid": PENALTIES})
    if not gamma >= 0:
        raise ConfigError("gamma must be nonnegative", context={"gamma": gamma})
    if div not in DIVERGENCES:
        raise ConfigError(f"Unknown divergence: {div}", context={"valid": DIVERGENCES})
    if estimator not in ESTIMATORS:
        raise ConfigError(f"Unknown estimator: {estimator}", context={"valid": ESTIMATORS})


def fit_mixture(
    terms: MixtureTerms,
    penalty: str = "none",
    gamma: float = 0.0,
    div: str = "w1",
    estimator: str = "exact",
    cfg: Optional[OptimizerConfig] = None,
) -> Tuple[float, float]:
    """
    Minimize mean log score + gamma * penalty over a in [0, 1].

    Returns:
        (a_hat, objective value)
    """
    _check_objective(penalty, gamma, div, estimator)
    penalized = penalty != "none" and gamma > 0.0

    def objective(a: float) -> float:
        value = terms.log_score(a)
        if penalized:
            value += gamma * terms.penalty(penalty, a, div, estimator)
        return value

    result = minimize_scalar_bounded(objective, 0.0, 1.0, cfg or OptimizerConfig(kind="brent-1d", tolerance=1e-6))
    return float(result.params[0]), float(result.final_value)


def estimate_a(
    records: SimRecords,
    penalty: str = "none",
    gamma: float = 0.0,
    t: float = DEFAULT_THRESHOLD,
    div: str = "w1",
    estimator: str = "exact",
) -> float:
    """
    Fitted mixing weight of F_a.

    Raises:
        ConfigError: Unknown penalty, divergence or estimator, or gamma < 0
        InsufficientDataError: No records
    """
    a_hat, _ = fit_mixture(MixtureTerms.build(records, t), penalty, gamma, div, estimator)
    logger.info("mixture_fitted", penalty=penalty, gamma=gamma, a_hat=round(a_hat, 6))
    return a_hat


# ============================================================================
# Sweep
# ============================================================================

def log_gamma_grid(lo: float = 1e-2, hi: float = 1e4, points: int = 25) -> np.ndarray:
    """Log-spaced penalty weights; gamma = 0 is added by the sweep."""
    if not 0 < lo < hi or points < 2:
        raise ConfigError("Gamma grid needs 0 < min < max and at least 2 points",
                          context={"min": lo, "max": hi, "points": points})
    return np.geomspace(lo, hi, points)


@dataclass(frozen=True)
class SimStudySettings:
    """
    Attributes:
        n: Records per run
        threshold: Tail threshold t
        penalties: Penalties swept over gamma
        gamma_grid: Positive penalty weights
        divergence: MCB / TMCB divergence
        estimator: MCB / TMCB estimator
    """

    n: int = 100_000
    threshold: float = DEFAULT_THRESHOLD
    penalties: Tuple[str, ...] = ("cls", "mcb", "tmcb")
    gamma_grid: Tuple[float, ...] = tuple(log_gamma_grid())
    divergence: str = "w1"
    estimator: str = "exact"

    @staticmethod
    def from_config(config: Mapping[str, Any]) -> Result["SimStudySettings"]:
        section = dict(config.get("simulation") or {})
        grid = section.get("gamma_grid", {})
        try:
            if isinstance(grid, Mapping):
                gammas = log_gamma_grid(float(grid.get("min", 1e-2)), float(grid.get("max", 1e4)),
                                    int(grid.get("points", 25)))
            else:
                gammas = np.asarray([float(g) for g in grid])
            settings = SimStudySettings(
                n=int(section.get("n", 100_000)),
                threshold=float(section.get("threshold", DEFAULT_THRESHOLD)),
                penalties=tuple(str(p) for p in section.get("penalties", ["cls", "mcb", "tmcb"])),
                gamma_grid=tuple(float(g) for g in gammas),
                divergence=str(section.get("divergence", "w1")),
                estimator=str(section.get("estimator", "exact")),
            )
        except ConfigError as e:
            return Result.fail(e)
        except (TypeError, ValueError) as e:
            return Result.fail(ConfigError("Invalid simulation settings", context={"error": str(e)}))

        if settings.n < 1:
            return Result.fail(ConfigError("Simulation size must be >= 1", context={"n": settings.n}))
        if not np.isfinite(settings.threshold):
            return Result.fail(ConfigError("Simulation threshold must be finite"))
        try:
            for p in settings.penalties:
                _check_objective(p, 0.0, settings.divergence, settings.estimator)
        except ConfigError as e:
            return Result.fail(e)
        if any(g < 0 for g in settings.gamma_grid):
            return Result.fail(ConfigError("gamma_grid must be nonnegative", context={"grid": settings.gamma_grid}))
        return Result.ok(settings)


@dataclass
class SweepResult:
    """
    Attributes:
        table: One row per (penalty, gamma) cell, SWEEP_COLUMNS
        curves: PIT and R-hat curves by name (pit_f1, rhat_f1, pit_f2, ..., pit_tmcb_g10)
        reference: Mean scores and calibration of F1, F2 and the unpenalized fit
        failures: Failed cells
    """

    table: pd.DataFrame
    curves: Dict[str, CalibrationCurve] = field(default_factory=dict)
    reference: Dict[str, Dict[str, float]] = field(default_factory=dict)
    failures: List[Dict[str, Any]] = field(default_factory=list)


def cell_label(penalty: str, gamma: float) -> str:
    return f"{penalty}_g{gamma:g}"


def _cell_row(terms: MixtureTerms, penalty: str, gamma: float, a_hat: float, objective: float,
              div: str, estimator: str) -> Dict[str, Any]:
    return {
        "penalty": penalty,
        "gamma": float(gamma),
        "a_hat": a_hat,
        "objective": objective,
        "log_score": terms.log_score(a_hat),
        "cls": terms.cls(a_hat),
        "mcb": terms.mcb(a_hat, div, estimator),
        "tmcb": terms.tmcb(a_hat, div, estimator),
        "ohat": terms.ohat(a_hat),
    }


def _run_cell(terms: MixtureTerms, penalty: str, gamma: float, div: str, estimator: str) -> Result[Dict[str, Any]]:
    try:
        a_hat, objective = fit_mixture(terms, penalty, gamma, div, estimator)
        return Result.ok(_cell_row(terms, penalty, gamma, a_hat, objective, div, estimator))
    except TailCalError as e:
        e.context.update({"penalty": penalty, "gamma": gamma})
        return Result.fail(e)


def _curves(records: SimRecords, terms: MixtureTerms, name: str, a: float) -> Dict[str, CalibrationCurve]:
    sf_obs, _ = terms.sf(a)
    cases = ForecastSet(forecast=mixture_forecast(records, a), obs=records.y)
    out = {f"pit_{name}": pit_curve(PitSet(values=1.0 - sf_obs))}
    try:
        out[f"rhat_{name}"] = rhat_curve(cases, terms.threshold)
    except CalibrationError as e:
        logger.warning("rhat_undefined", curve=name, error=e.message)
    return out


def reference_scores(terms: MixtureTerms, a_hat: float, div: str = "w1",
                     estimator: str = "exact") -> Dict[str, Dict[str, float]]:
    """Mean log score, MCB and TMCB of F1 (a = 1), F2 (a = 0) and F_a_hat."""
    return {
        name: {
            "a": a,
            "log_score": terms.log_score(a),
            "mcb": terms.mcb(a, div, estimator),
            "tmcb": terms.tmcb(a, div, estimator),
        }
        for name, a in (("f1", 1.0), ("f2", 0.0), ("mixture", a_hat))
    }


def gamma_sweep(
    records: SimRecords,
    penalties: Sequence[str],
    gammas: Sequence[float],
    t: float = DEFAULT_THRESHOLD,
    div: str = "w1",
    estimator: str = "exact",
    curves: bool = True,
    max_workers: int = 1,
) -> SweepResult:
    """
    Fit F_a for every penalty over gamma = 0 plus the grid.

    The gamma = 0 fit is shared, so its row is identical for every penalty.
    Failed cells are recorded in `failures` and the sweep continues.

    Raises:
        ConfigError: Unknown penalty
        InsufficientDataError: No records
    """
    for p in penalties:
        _check_objective(p, 0.0, div, estimator)
    terms = MixtureTerms.build(records, t)

    a0, objective0 = fit_mixture(terms, "none", 0.0, div, estimator)
    base_row = _cell_row(terms, "none", 0.0, a0, objective0, div, estimator)
    positive = sorted({float(g) for g in gammas if g > 0})
    cells = [(p, g) for p in penalties for g in positive]

    logger.info("sweep_started", penalties=len(penalties), gammas=len(positive), n=len(records), workers=max_workers)
    results = Parallel(n_jobs=max_workers, prefer="threads")(
        delayed(_run_cell)(terms, p, g, div, estimator) for p, g in cells
    )

    rows: List[Dict[str, Any]] = [{**base_row, "penalty": p} for p in penalties]
    failures: List[Dict[str, Any]] = []
    for (p, g), result in zip(cells, results):
        if result.is_ok():
            rows.append(result.unwrap())
            continue
        error = result.unwrap_err()
        logger.warning("sweep_cell_failed", penalty=p, gamma=g, error=error.message)
        failures.append({"label": cell_label(p, g), "error": type(error).__name__, "message": str(error)})

    table = pd.DataFrame(rows, columns=list(SWEEP_COLUMNS))
    order = {p: i for i, p in enumerate(penalties)}
    table = table.sort_values(["penalty", "gamma"], key=lambda s: s.map(order) if s.name == "penalty" else s,
                              kind="stable").reset_index(drop=True)

    result = SweepResult(table=table, reference=reference_scores(terms, a0, div, estimator), failures=failures)
    if curves:
        result.curves.update(_curves(records, terms, "f1", 1.0))
        result.curves.update(_curves(records, terms, "f2", 0.0))
        result.curves.update(_curves(records, terms, "fitted", a0))
        for row in table.itertuples(index=False):
            if row.gamma > 0:
                result.curves.update(_curves(records, terms, cell_label(row.penalty, row.gamma), row.a_hat))

    logger.info("sweep_completed", cells=len(cells), failed=len(failures), a_hat=round(a0, 6))
    return result
