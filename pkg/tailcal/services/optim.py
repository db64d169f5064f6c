"""
Optimizers.

    nelder-mead     scipy Nelder-Mead simplex
    bfgs-numeric    scipy BFGS on central-difference gradients, falling back
                    to Nelder-Mead from the best point when BFGS fails
    adam            Adam on central-difference gradients
    brent-1d        scipy Brent for one-dimensional problems

Every run tracks the best point evaluated, so the returned point is never
worse than x0 and final_value is an exact evaluation at the returned point.
Network training uses adam_step directly with backprop gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import optimize

from tailcal.infrastructure.logging import get_logger
from tailcal.services.errors import ConfigError, ObjectiveNotFiniteError
from tailcal.services.result import Result


logger = get_logger(__name__)

KINDS = ("nelder-mead", "bfgs-numeric", "adam", "brent-1d")

Objective = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class OptimizerConfig:
    """
    Attributes:
        kind: nelder-mead | bfgs-numeric | adam | brent-1d
        max_iters: Iteration cap
        tolerance: Function-value and step tolerance
        fd_step: Relative finite-difference step h
        step_size: Adam learning rate
        beta1, beta2: Adam moment decay
        eps: Adam denominator offset
    """

    kind: str = "bfgs-numeric"
    max_iters: int = 5000
    tolerance: float = 1e-8
    fd_step: float = 1e-6
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> Result["OptimizerConfig"]:
        if self.kind not in KINDS:
            return Result.fail(ConfigError(f"Unknown optimizer: {self.kind}", context={"valid": KINDS}))
        positive = {
            "max_iters": self.max_iters,
            "tolerance": self.tolerance,
            "fd_step": self.fd_step,
            "step_size": self.step_size,
            "eps": self.eps,
        }
        for name, value in positive.items():
            if not value > 0:
                return Result.fail(ConfigError(f"{name} must be positive", context={name: value}))
        for name, value in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 <= value < 1.0:
                return Result.fail(ConfigError(f"{name} must lie in [0, 1)", context={name: value}))
        return Result.ok(self)

    @staticmethod
    def from_dict(section: Mapping[str, Any]) -> Result["OptimizerConfig"]:
        """Build from the `optim` config section (adam settings nested under `adam`)."""
        adam = dict(section.get("adam") or {})
        try:
            cfg = OptimizerConfig(
                kind=str(section.get("kind", "bfgs-numeric")),
                max_iters=int(section.get("max_iters", 5000)),
                tolerance=float(section.get("tolerance", 1e-8)),
                fd_step=float(section.get("fd_step", 1e-6)),
                step_size=float(adam.get("step_size", 1e-3)),
                beta1=float(adam.get("beta1", 0.9)),
                beta2=float(adam.get("beta2", 0.999)),
                eps=float(adam.get("eps", 1e-8)),
            )
        except (TypeError, ValueError) as e:
            return Result.fail(ConfigError("Invalid optimizer settings", context={"error": str(e)}))
        return cfg.validate()


@dataclass
class OptimResult:
    """
    Attributes:
        params: Best point found
        final_value: Objective at params
        iterations: Optimizer iterations
        converged: Whether the optimizer reported convergence
        fallback_used: BFGS failed and Nelder-Mead took over
        evaluations: Objective evaluations (finite-difference probes included)
        trace: (iteration, value) pairs
    """

    params: np.ndarray
    final_value: float
    iterations: int
    converged: bool
    fallback_used: bool = False
    evaluations: int = 0
    kind: str = ""
    message: str = ""
    trace: List[Tuple[int, float]] = field(default_factory=list)

    def trace_frame(self) -> pd.DataFrame:
        """Iteration trace with columns iter, value."""
        return pd.DataFrame(self.trace, columns=["iter", "value"])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "final_value": self.final_value,
            "iterations": self.iterations,
            "converged": self.converged,
            "fallback_used": self.fallback_used,
            "evaluations": self.evaluations,
            "message": self.message,
        }


class TrackedObjective:
    """Counts evaluations, remembers the best point and rejects non-finite values."""

    def __init__(self, objective: Objective):
        self.objective = objective
        self.evaluations = 0
        self.iteration = 0
        self.best_x: Optional[np.ndarray] = None
        self.best_value = np.inf
        self.trace: List[Tuple[int, float]] = []

    def __call__(self, x: np.ndarray) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        value = float(self.objective(x))
        self.evaluations += 1
        if not np.isfinite(value):
            raise ObjectiveNotFiniteError(iteration=self.iteration, point=x, value=value)
        if value < self.best_value:
            self.best_value = value
            self.best_x = x.copy()
        return value

    def next_iteration(self, *_: Any) -> None:
        self.iteration += 1
        self.trace.append((self.iteration, self.best_value))


# ============================================================================
# Finite differences
# ============================================================================

def numeric_gradient(f: Objective, x: Any, h: float = 1e-6) -> np.ndarray:
    """
    Central differences with steps h * max(1, |x_i|).

    Raises:
        ObjectiveNotFiniteError: f is not finite at a probe; context names the coordinate
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    grad = np.empty_like(x)
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        up, down = x.copy(), x.copy()
        up[i] += step
        down[i] -= step
        f_up, f_down = float(f(up)), float(f(down))
        if not (np.isfinite(f_up) and np.isfinite(f_down)):
            raise ObjectiveNotFiniteError(
                "Objective not finite in the finite-difference neighbourhood",
                point=x, coordinate=i
            )
        grad[i] = (f_up - f_down) / (up[i] - down[i])
    return grad


# ============================================================================
# Adam
# ============================================================================

@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def init(params: np.ndarray, step_size: float = 1e-3, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        zeros = np.zeros_like(np.asarray(params, dtype=float))
        return AdamState(m=zeros, v=zeros.copy(), step_size=step_size, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> Tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update; returns the new state and parameters."""
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.step_size * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, t=t), new_params


# ============================================================================
# Drivers
# ============================================================================

def _nelder_mead(tracked: TrackedObjective, x0: np.ndarray, cfg: OptimizerConfig):
    return optimize.minimize(
        tracked, x0, method="Nelder-Mead", callback=tracked.next_iteration,
        options={"maxiter": cfg.max_iters, "xatol": cfg.tolerance, "fatol": cfg.tolerance},
    )


def _bfgs(tracked: TrackedObjective, x0: np.ndarray, cfg: OptimizerConfig):
    return optimize.minimize(
        tracked, x0, method="BFGS",
        jac=lambda x: numeric_gradient(tracked, x, cfg.fd_step),
        callback=tracked.next_iteration,
        options={"maxiter": cfg.max_iters, "gtol": max(cfg.tolerance, 1e-6)},
    )


def _adam(tracked: TrackedObjective, x0: np.ndarray, cfg: OptimizerConfig) -> Tuple[bool, str]:
    state = AdamState.init(x0, cfg.step_size, cfg.beta1, cfg.beta2, cfg.eps)
    params = x0.copy()
    for _ in range(cfg.max_iters):
        grad = numeric_gradient(tracked, params, cfg.fd_step)
        state, new_params = adam_step(state, params, grad)
        tracked.next_iteration()
        if np.max(np.abs(new_params - params)) < cfg.tolerance:
            tracked(new_params)
            return True, "step below tolerance"
        params = new_params
    tracked(params)
    return False, "iteration limit reached"


def minimize(objective: Objective, x0: Any, cfg: Optional[OptimizerConfig] = None) -> OptimResult:
    """
    Minimize an objective from x0.

    Raises:
        ObjectiveNotFiniteError: Objective non-finite at x0 or during iteration
    """
    cfg = cfg or OptimizerConfig()
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    tracked = TrackedObjective(objective)
    tracked(x0)

    fallback_used = False
    if cfg.kind == "nelder-mead":
        res = _nelder_mead(tracked, x0, cfg)
        converged, message = bool(res.success), str(res.message)
    elif cfg.kind == "bfgs-numeric":
        res = _bfgs(tracked, x0, cfg)
        converged, message = bool(res.success), str(res.message)
        if not res.success:
            logger.info("bfgs_fallback", message=res.message, value=tracked.best_value)
            fallback_used = True
            res = _nelder_mead(tracked, tracked.best_x, cfg)
            converged, message = bool(res.success), str(res.message)
    elif cfg.kind == "adam":
        converged, message = _adam(tracked, x0, cfg)
    elif cfg.kind == "brent-1d":
        if x0.size != 1:
            raise ConfigError("brent-1d needs a scalar parameter", context={"size": x0.size})
        res = optimize.minimize_scalar(
            lambda a: tracked(np.array([a])), bracket=(x0[0], x0[0] + 1.0), method="brent",
            options={"xtol": cfg.tolerance, "maxiter": cfg.max_iters},
        )
        tracked.iteration = int(res.nit)
        converged, message = bool(res.success), str(getattr(res, "message", ""))
    else:
        raise ConfigError(f"Unknown optimizer: {cfg.kind}", context={"valid": KINDS})

    return OptimResult(
        params=tracked.best_x,
        final_value=tracked.best_value,
        iterations=tracked.iteration,
        converged=converged,
        fallback_used=fallback_used,
        evaluations=tracked.evaluations,
        kind=cfg.kind,
        message=message,
        trace=tracked.trace,
    )


def minimize_scalar_bounded(
    objective: Callable[[float], float], lo: float, hi: float, cfg: Optional[OptimizerConfig] = None
) -> OptimResult:
    """
    Bounded golden-section/parabolic minimization on [lo, hi].

    The endpoints are evaluated as well so boundary minima are returned exactly.

    Raises:
        ConfigError: lo >= hi
        ObjectiveNotFiniteError: Objective non-finite inside the interval
    """
    cfg = cfg or OptimizerConfig(kind="brent-1d")
    if not lo < hi:
        raise ConfigError("Bounded minimization needs lo < hi", context={"lo": lo, "hi": hi})

    tracked = TrackedObjective(lambda x: objective(float(x[0])))
    res = optimize.minimize_scalar(
        lambda a: tracked(np.array([a])), bounds=(lo, hi), method="bounded",
        options={"xatol": cfg.tolerance, "maxiter": cfg.max_iters},
    )
    for endpoint in (lo, hi):
        value = float(objective(endpoint))
        tracked.evaluations += 1
        if np.isfinite(value) and value < tracked.best_value:
            tracked.best_value = value
            tracked.best_x = np.array([endpoint])

    return OptimResult(
        params=tracked.best_x,
        final_value=tracked.best_value,
        iterations=int(res.nit),
        converged=bool(res.success),
        evaluations=tracked.evaluations,
        kind="brent-1d",
        message=str(getattr(res, "message", "")),
    )
