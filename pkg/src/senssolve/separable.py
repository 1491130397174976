"""Per-stratum worst-case moments and the permutational t sensitivity analysis.

Within a stratum, the expectation of ``Z^T q`` under a hidden confounder is
maximized by a binary confounder that is 0 on the ``a`` smallest q values
and 1 on the rest. Each stratum is solved on its own over those ``n - 1``
candidates; expectation ties go to the larger variance, then to the
candidate with the most ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .design import MatchedDesign, _deltas_from_adjusted, gather, size_groups
from .errors import DegenerateVariance, LengthTooSmall, ProbabilityRowInvalid
from .normal import norm_sf
from .results import SensitivityResult

TIE_RTOL = 1e-12


@dataclass(frozen=True)
class GammaModel:
    """Odds-ratio bound on treatment assignment within a stratum."""

    gamma: float

    def __post_init__(self):
        if not (self.gamma >= 1.0 and math.isfinite(self.gamma)):
            raise ValueError(f"gamma must be a finite number >= 1, got {self.gamma!r}")

    @property
    def log_gamma(self) -> float:
        return math.log(self.gamma)

    def kappa_tilde(self, n):
        """``gamma * (n - 1) + 1``: reciprocal of the smallest assignment probability."""
        return self.gamma * (np.asarray(n, dtype=float) - 1.0) + 1.0

    def gamma_n(self, n):
        """Effective odds bound for a stratum of size ``n``.

        Equals gamma for pairs and tends to gamma**2 as n grows.
        """
        m = np.asarray(n, dtype=float) - 1.0
        g = self.gamma
        return g * (g * m + 1.0) / (m + g)

    def probability_box(self, n) -> tuple:
        """Smallest and largest assignment probability allowed in a stratum of size ``n``."""
        m = np.asarray(n, dtype=float) - 1.0
        return 1.0 / (self.gamma * m + 1.0), self.gamma / (m + self.gamma)


@dataclass(frozen=True)
class StratumWorstCase:
    mu: float
    nu: float
    ones_count: int


def _candidate_moments(sorted_q: np.ndarray, gamma: float):
    """Expectations and variances for every sorted binary candidate.

    ``sorted_q`` is (m, n) sorted ascending along rows. Column ``a - 1``
    corresponds to the candidate with ``a`` zeros. Values are returned
    centered on the row mean, together with that mean and the row scale.
    """
    n = sorted_q.shape[1]
    center = sorted_q.mean(axis=1, keepdims=True)
    x = sorted_q - center
    low = np.cumsum(x, axis=1)[:, :-1]
    low2 = np.cumsum(x * x, axis=1)[:, :-1]
    high = x.sum(axis=1, keepdims=True) - low
    high2 = (x * x).sum(axis=1, keepdims=True) - low2
    zeros = np.arange(1, n, dtype=float)
    denom = zeros + gamma * (n - zeros)
    mu = (low + gamma * high) / denom
    second = (low2 + gamma * high2) / denom
    var = np.maximum(second - mu * mu, 0.0)
    scale = np.abs(x).max(axis=1)
    return mu, var, center[:, 0], scale


def _select(mu: np.ndarray, var: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Column index of the chosen candidate in each row."""
    tol = TIE_RTOL * scale[:, None]
    best = mu.max(axis=1, keepdims=True)
    tied = mu >= best - tol
    masked = np.where(tied, var, -np.inf)
    vbest = masked.max(axis=1, keepdims=True)
    tied &= var >= vbest - TIE_RTOL * scale[:, None] ** 2
    return np.argmax(tied, axis=1)


def worst_case_block(q: np.ndarray, gamma: float, return_u: bool = False):
    """Worst-case moments for a block of equal-size strata.

    Parameters
    ----------
    q : (m, n) array, one stratum per row.
    gamma : odds-ratio bound.
    return_u : also return the attaining binary confounder, in the
        original (unsorted) unit order.

    Returns
    -------
    mu, nu, ones_count[, u]
    """
    q = np.asarray(q, dtype=float)
    m, n = q.shape
    order = np.argsort(q, axis=1, kind="stable")
    sq = np.take_along_axis(q, order, axis=1)
    mu_all, var_all, center, scale = _candidate_moments(sq, gamma)
    col = _select(mu_all, var_all, scale)
    rows = np.arange(m)
    mu = mu_all[rows, col] + center
    nu = var_all[rows, col]
    ones = n - (col + 1)
    if not return_u:
        return mu, nu, ones
    u = np.zeros((m, n))
    sorted_u = (np.arange(n)[None, :] >= (col + 1)[:, None]).astype(float)
    np.put_along_axis(u, order, sorted_u, axis=1)
    return mu, nu, ones, u


def worst_case_moments(q: Sequence[float], model: GammaModel) -> StratumWorstCase:
    """Worst-case expectation and tie-broken variance of ``Z^T q`` in one stratum."""
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or q.size < 2:
        raise LengthTooSmall("a stratum needs at least two units")
    mu, nu, ones = worst_case_block(q[None, :], model.gamma)
    return StratumWorstCase(float(mu[0]), float(nu[0]), int(ones[0]))


def worst_case_flat(values: np.ndarray, sizes: np.ndarray, offsets: np.ndarray, gamma: float,
                    return_u: bool = False):
    """Per-stratum worst-case moments for a flat per-unit array over a whole design."""
    B = len(sizes)
    mu = np.empty(B)
    nu = np.empty(B)
    ones = np.empty(B, dtype=np.int64)
    u = np.empty(len(values)) if return_u else None
    for n, idx in size_groups(sizes).items():
        block = gather(values, offsets, idx, n)
        out = worst_case_block(block, gamma, return_u=return_u)
        mu[idx], nu[idx], ones[idx] = out[0], out[1], out[2]
        if return_u:
            u[offsets[idx][:, None] + np.arange(n)] = out[3]
    if return_u:
        return mu, nu, ones, u
    return mu, nu, ones


def _upper_p(statistic: float, expectation: float, variance: float) -> tuple[float, float, float]:
    """(se, deviate, p) for a normal reference, with the degenerate-variance convention."""
    if variance <= 0.0:
        if statistic <= expectation:
            return 0.0, -math.inf, 1.0
        return 0.0, math.inf, 0.0
    se = math.sqrt(variance)
    dev = (statistic - expectation) / se
    return se, dev, norm_sf(dev)


def separable_pvalue(statistic_value: float, per_stratum_q: Sequence[Sequence[float]],
                     model: GammaModel) -> float:
    """Normal-approximation worst-case p-value for a greater-than alternative.

    Raises DegenerateVariance when the summed worst-case variance is zero;
    callers then report p = 1 if the statistic does not exceed the summed
    expectation and p = 0 otherwise.
    """
    moments = [worst_case_moments(q, model) for q in per_stratum_q]
    total_mu = sum(m.mu for m in moments)
    total_nu = sum(m.nu for m in moments)
    if total_nu <= 0.0:
        raise DegenerateVariance("worst-case variance is zero")
    return norm_sf((statistic_value - total_mu) / math.sqrt(total_nu))


def sharp_null_q(design: MatchedDesign, tau0: float) -> np.ndarray:
    """Flat q values ``(n_i/N)(delta_ij - tau0)`` imputed under a constant effect."""
    adj = design.outcomes - design.treatment * tau0
    q = np.empty(design.N)
    for n, idx in size_groups(design.sizes).items():
        cols = design.offsets[idx][:, None] + np.arange(n)
        q[cols] = _deltas_from_adjusted(adj[cols])
    weights = np.repeat(design.sizes / design.N, design.sizes)
    return weights * q


def perm_t_sensitivity(design: MatchedDesign, tau0: float, model: GammaModel,
                       alpha: float | None = None) -> SensitivityResult:
    """Sensitivity analysis for the difference in means assuming a constant effect."""
    q = sharp_null_q(design, tau0)
    mu, nu, _ = worst_case_flat(q, design.sizes, design.offsets, model.gamma)
    statistic = float(np.dot(design.sizes / design.N, design.tau_hat - tau0))
    expectation = float(mu.sum())
    se, dev, p = _upper_p(statistic, expectation, float(nu.sum()))
    return SensitivityResult("perm_t", model.gamma, tau0, statistic, expectation, se, dev, p, alpha)


def imputed_theta(r_treat: np.ndarray, r_control: np.ndarray, tau0: float, gamma: float) -> np.ndarray:
    """Constant-effect worst-case expectation when each unit in turn is treated.

    Inputs are (m, n) blocks of potential outcomes for equal-size strata.
    Entry (i, k) is the separable worst-case expectation of the imputed
    ``delta - tau0`` values that an analyst would compute had unit k of
    stratum i received treatment.
    """
    m, n = r_treat.shape
    adj = np.repeat(r_control[:, None, :], n, axis=1)
    diag = np.arange(n)
    adj[:, diag, diag] = r_treat - tau0
    deltas = _deltas_from_adjusted(adj).reshape(m * n, n)
    mu, _, _ = worst_case_block(deltas, gamma)
    return mu.reshape(m, n)


def _check_rho(rho: np.ndarray, sizes: np.ndarray, offsets: np.ndarray) -> None:
    if rho.shape != (int(sizes.sum()),) or np.any(rho < 0) or np.any(rho > 1):
        raise ProbabilityRowInvalid("assignment probabilities must lie in [0, 1], one per unit")
    sums = np.add.reduceat(rho, offsets)
    if np.any(np.abs(sums - 1.0) > 1e-9):
        raise ProbabilityRowInvalid("assignment probabilities must sum to one within each stratum")


def perm_t_bias_bound(potential, rho, tau0: float, model: GammaModel) -> float:
    """Upper bound on the expectation of the constant-effect-centered statistic.

    Computes ``sum_i n_i^2/{N(n_i-1)} sum_j rho_ij (1 - rho_ij)(tau_ij - tau0)``
    for known potential outcomes and assignment probabilities.
    """
    rho = np.asarray(rho, dtype=float)
    sizes, offsets = potential.sizes, potential.offsets
    _check_rho(rho, sizes, offsets)
    N = float(sizes.sum())
    per_unit = rho * (1.0 - rho) * (potential.tau - tau0)
    per_stratum = np.add.reduceat(per_unit, offsets)
    return float(np.sum(sizes**2 / (N * (sizes - 1)) * per_stratum))


def perm_t_expectation(potential, rho, tau0: float, model: GammaModel) -> float:
    """Exact expectation of the constant-effect-centered statistic under ``rho``.

    Enumerates the treated unit in every stratum; for each choice the
    centering term is the separable expectation from sharp-null imputation.
    """
    rho = np.asarray(rho, dtype=float)
    sizes, offsets = potential.sizes, potential.offsets
    _check_rho(rho, sizes, offsets)
    N = float(sizes.sum())
    total = 0.0
    for n, idx in size_groups(sizes).items():
        rt = gather(potential.r_treat, offsets, idx, n)
        rc = gather(potential.r_control, offsets, idx, n)
        theta = imputed_theta(rt, rc, tau0, model.gamma)
        delta = gather(potential.delta, offsets, idx, n)
        p = gather(rho, offsets, idx, n)
        total += float(np.sum((n / N) * p * (delta - tau0 - theta)))
    return total
