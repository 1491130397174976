"""Test statistics for the weak null of a given average effect.

Every statistic here is built from the penalized stratum difference
``d_stat(x, g) = x - (g - 1)/(1 + g) * |x|`` applied to ``tau_hat_i - tau0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .design import StratumSummary
from .errors import InfeasibleRestriction
from .separable import GammaModel


def d_stat(tau_hat_minus_tau0, gamma_eff):
    """Penalized difference, evaluated piecewise to avoid cancellation."""
    x = np.asarray(tau_hat_minus_tau0, dtype=float)
    g = np.asarray(gamma_eff, dtype=float)
    if np.any(g < 1.0):
        raise ValueError("effective gamma must be >= 1")
    out = np.where(x >= 0, 2.0 * x / (1.0 + g), 2.0 * g * x / (1.0 + g))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class IntervalRestriction:
    """Per-stratum probability boxes ``1/kappa_i <= rho_ij <= gamma_i/kappa_i``."""

    kappa: np.ndarray
    gamma: np.ndarray

    @classmethod
    def whole_model(cls, sizes, model: GammaModel) -> IntervalRestriction:
        """The box implied by the sensitivity model itself, with inflated gamma per size."""
        sizes = np.asarray(sizes)
        return cls(np.asarray(model.kappa_tilde(sizes), dtype=float),
                   np.asarray(model.gamma_n(sizes), dtype=float))

    @classmethod
    def concordant(cls, sizes, model: GammaModel) -> IntervalRestriction:
        """``kappa_i = n_i(1 + gamma)/2``, a strict sub-model once n_i > 2."""
        sizes = np.asarray(sizes, dtype=float)
        return cls(sizes * (1.0 + model.gamma) / 2.0, np.full(sizes.shape, model.gamma))

    def check(self, sizes) -> None:
        sizes = np.asarray(sizes, dtype=float)
        kappa = np.broadcast_to(np.asarray(self.kappa, dtype=float), sizes.shape)
        gamma = np.broadcast_to(np.asarray(self.gamma, dtype=float), sizes.shape)
        slack = 1e-12 * np.maximum(1.0, kappa)
        if np.any(gamma < 1.0) or np.any(kappa <= 0):
            raise InfeasibleRestriction("kappa must be positive and gamma at least 1")
        if np.any(kappa < sizes - slack) or np.any(kappa > sizes * gamma + slack):
            raise InfeasibleRestriction("need n_i <= kappa_i <= n_i * gamma_i for a feasible box")


def _arrays(summaries: Sequence[StratumSummary]):
    tau_hat = np.array([s.tau_hat for s in summaries], dtype=float)
    sizes = np.array([s.n for s in summaries], dtype=float)
    return tau_hat, sizes


def k_weighted_average(summaries: Sequence[StratumSummary], tau0: float,
                       restriction: IntervalRestriction) -> float:
    """``N^-1 sum_i kappa_i d_stat(tau_hat_i - tau0, gamma_i)``."""
    tau_hat, sizes = _arrays(summaries)
    restriction.check(sizes)
    return float(np.sum(restriction.kappa * d_stat(tau_hat - tau0, restriction.gamma)) / sizes.sum())


def ktilde_terms(tau_hat, sizes, tau0: float, model: GammaModel) -> np.ndarray:
    """Per-stratum contributions to the always-valid statistic."""
    sizes = np.asarray(sizes, dtype=float)
    N = sizes.sum()
    return model.kappa_tilde(sizes) / N * d_stat(np.asarray(tau_hat) - tau0, model.gamma_n(sizes))


def dbar_terms(tau_hat, sizes, tau0: float, model: GammaModel) -> np.ndarray:
    """Per-stratum contributions ``(n_i/N) d_stat(tau_hat_i - tau0, gamma)``."""
    sizes = np.asarray(sizes, dtype=float)
    return sizes / sizes.sum() * d_stat(np.asarray(tau_hat) - tau0, model.gamma)


def ktilde(summaries: Sequence[StratumSummary], tau0: float, model: GammaModel) -> float:
    """Statistic whose expectation is at most zero over the entire weak null."""
    tau_hat, sizes = _arrays(summaries)
    return float(ktilde_terms(tau_hat, sizes, tau0, model).sum())


def dbar(summaries: Sequence[StratumSummary], tau0: float, model: GammaModel) -> float:
    """Size-weighted penalized difference at the raw gamma."""
    tau_hat, sizes = _arrays(summaries)
    return float(dbar_terms(tau_hat, sizes, tau0, model).sum())


def ipw_equivalent(tau_hat_minus_tau0: float, n_i: int, restriction: IntervalRestriction) -> float:
    """Worst-case inverse-probability-weighted stratum estimate over the box.

    Minimizes ``x / (n_i p)`` over ``p`` in ``[1/kappa, gamma/kappa]``; the
    objective is monotone in p so only the endpoints matter.
    """
    kappa = float(np.asarray(restriction.kappa))
    gamma = float(np.asarray(restriction.gamma))
    restriction.check(np.array([n_i]))
    lo, hi = 1.0 / kappa, gamma / kappa
    x = float(tau_hat_minus_tau0)
    return min(x / (n_i * lo), x / (n_i * hi))


def worst_case_probability_map(deltas, tau0: float, model: GammaModel) -> tuple[np.ndarray, float]:
    """Per-unit probabilities that weight each potential difference adversely.

    Positive ``delta - tau0`` gets the largest allowed probability and
    negative gets the smallest; zero uses the largest. The returned sum
    generally differs from one, which is the incompatibility that makes
    weak-null analyses conservative under a constant effect.
    """
    d = np.asarray(deltas, dtype=float) - tau0
    lo, hi = model.probability_box(d.size)
    weights = np.where(d >= 0, hi, lo)
    return weights, float(weights.sum())


def penalized_expectation(q, u, gamma: float) -> float:
    """Exact expectation of ``sum_j Z_j d_stat(q_j, gamma)`` for a confounder ``u``."""
    q = np.asarray(q, dtype=float)
    w = np.exp(np.log(gamma) * np.asarray(u, dtype=float))
    return float(np.dot(w, d_stat(q, gamma)) / w.sum())
