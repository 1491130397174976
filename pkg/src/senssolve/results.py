"""Result record shared by every test procedure."""

from __future__ import annotations

import math
from dataclasses import dataclass

METHODS = ("perm_t", "dbar", "ktilde", "binary_ip")


@dataclass(frozen=True)
class SensitivityResult:
    method: str
    gamma: float
    tau0: float
    statistic: float
    worst_case_expectation: float
    se: float
    deviate: float
    p_value: float
    alpha: float | None = None
    alternative: str = "greater"

    @property
    def reject(self) -> bool | None:
        if self.alpha is None:
            return None
        return self.p_value <= self.alpha

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "gamma": self.gamma,
            "tau0": self.tau0,
            "statistic": self.statistic,
            "expectation_bound": self.worst_case_expectation,
            "se": self.se,
            "deviate": _finite_or_none(self.deviate),
            "p_value": self.p_value,
            "reject": self.reject,
            "alpha": self.alpha,
            "alternative": self.alternative,
        }


def _finite_or_none(x: float):
    return x if math.isfinite(x) else None
