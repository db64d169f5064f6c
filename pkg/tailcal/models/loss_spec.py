"""
Loss specification.

A LossSpec names one training objective: a base score, an optional penalty
(weighted score, MCB, TMCB or CPIT-MCB), its weight gamma, the threshold t,
the divergence used by calibration penalties and, for sample-backed bases,
the sigmoid width nu of the smoothed PIT.

JSON form (config files, model artifacts):
    {"base": "crps", "penalty": "tmcb", "gamma": 5.0, "threshold": 12.5,
     "divergence": "w1", "nu": null, "estimator": "exact"}
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, Mapping, Optional

from tailcal.services.errors import ConfigError
from tailcal.services.result import Result
from tailcal.services.scores import WeightSpec


BASES = ("crps", "crps_sample", "fair_crps", "log_score")
SAMPLE_BASES = ("crps_sample", "fair_crps")
PENALTIES = ("none", "weighted", "mcb", "tmcb", "cpit_mcb")
CALIBRATION_PENALTIES = ("mcb", "tmcb", "cpit_mcb")
DIVERGENCES = ("w1", "cramer", "ks")
ESTIMATORS = ("exact", "order", "order_n")


@dataclass(frozen=True)
class LossSpec:
    """
    Immutable training objective.

    Attributes:
        base: crps | crps_sample | fair_crps | log_score
        penalty: none | weighted | mcb | tmcb | cpit_mcb
        gamma: penalty weight (>= 0)
        threshold: t of the weighted score and tail penalties
        divergence: w1 | cramer | ks
        nu: sigmoid width of the smoothed PIT (sample-backed calibration penalties)
        estimator: exact step-curve divergence, or the order-statistic
            average normalized by the exceedance count (order) or by n (order_n)
    """

    base: str = "crps"
    penalty: str = "none"
    gamma: float = 0.0
    threshold: float = 12.5
    divergence: str = "w1"
    nu: Optional[float] = None
    estimator: str = "exact"

    @staticmethod
    def create(
        base: str = "crps",
        penalty: str = "none",
        gamma: float = 0.0,
        threshold: float = 12.5,
        divergence: str = "w1",
        nu: Optional[float] = None,
        estimator: str = "exact",
    ) -> Result["LossSpec"]:
        """
        Create a LossSpec with validation.

        Returns:
            Result[LossSpec]: Spec or ConfigError
        """
        spec = LossSpec(
            base=str(base).lower(),
            penalty=str(penalty).lower(),
            gamma=float(gamma),
            threshold=float(threshold),
            divergence=str(divergence).lower(),
            nu=None if nu is None else float(nu),
            estimator=str(estimator).lower(),
        )
        return spec.validate()

    def validate(self) -> Result["LossSpec"]:
        if self.base not in BASES:
            return Result.fail(ConfigError(f"Unknown base score: {self.base}", context={"valid": BASES}))
        if self.penalty not in PENALTIES:
            return Result.fail(ConfigError(f"Unknown penalty: {self.penalty}", context={"valid": PENALTIES}))
        if self.divergence not in DIVERGENCES:
            return Result.fail(ConfigError(
                f"Unknown divergence: {self.divergence}", context={"valid": DIVERGENCES}))
        if self.estimator not in ESTIMATORS:
            return Result.fail(ConfigError(
                f"Unknown estimator: {self.estimator}", context={"valid": ESTIMATORS}))
        if self.estimator != "exact" and self.divergence != "w1":
            return Result.fail(ConfigError(
                "Order-statistic estimators exist for w1 only",
                context={"estimator": self.estimator, "divergence": self.divergence}))
        if not (self.gamma >= 0.0) or not math.isfinite(self.gamma):
            return Result.fail(ConfigError("gamma must be a finite nonnegative number",
                                           context={"gamma": self.gamma}))
        if not math.isfinite(self.threshold):
            return Result.fail(ConfigError("threshold must be finite", context={"threshold": self.threshold}))
        if self.nu is not None and not self.nu > 0.0:
            return Result.fail(ConfigError("nu must be positive", context={"nu": self.nu}))
        if self.is_sample_based and self.penalty in CALIBRATION_PENALTIES and self.nu is None:
            return Result.fail(ConfigError(
                "Sample-backed calibration penalties need a PIT smoothing width nu",
                context={"base": self.base, "penalty": self.penalty}
            ))
        return Result.ok(self)

    @property
    def is_sample_based(self) -> bool:
        return self.base in SAMPLE_BASES

    @property
    def weight_spec(self) -> WeightSpec:
        return WeightSpec(self.threshold)

    @property
    def label(self) -> str:
        """Short name for file names and table rows, e.g. tmcb_g5."""
        if self.penalty == "none":
            return "baseline"
        return f"{self.penalty}_g{self.gamma:g}"

    def with_penalty(self, penalty: str, gamma: float) -> "LossSpec":
        return replace(self, penalty=penalty, gamma=float(gamma))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> Result["LossSpec"]:
        unknown = set(data) - {"base", "penalty", "gamma", "threshold", "divergence", "nu", "estimator"}
        if unknown:
            return Result.fail(ConfigError("Unknown loss keys", context={"keys": sorted(unknown)}))
        try:
            return LossSpec.create(**dict(data))
        except (TypeError, ValueError) as e:
            return Result.fail(ConfigError("Invalid loss specification", context={"error": str(e)}))
