"""Sensitivity tests, changepoint search, and a biased-randomization reference distribution."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import binaryip
from .design import MatchedDesign
from .errors import DegenerateSE, NoCrossingBelowMax
from .results import METHODS, SensitivityResult
from .separable import GammaModel, _upper_p, perm_t_sensitivity, sharp_null_q
from .variance import DesignMatrixQ, default_q, se_q_squared
from .weakstats import d_stat, dbar_terms, ktilde_terms

__all__ = [
    "SensitivityResult",
    "ReferenceDistribution",
    "ChangepointResult",
    "test_dbar",
    "test_ktilde",
    "run_test",
    "changepoint",
    "randomization_reference",
    "randomization_test",
]


def _check_alpha(alpha):
    if alpha is not None and not 0.0 < alpha <= 0.5:
        raise ValueError(f"alpha must lie in (0, 0.5], got {alpha!r}")


def studentized_result(method, terms, expectation, q_matrix, gamma, tau0, alpha) -> SensitivityResult:
    """Normal-reference result for a statistic that is a sum of per-stratum terms."""
    statistic = float(np.sum(terms))
    variance = float(se_q_squared(terms, q_matrix))
    se, dev, p = _upper_p(statistic, expectation, variance)
    return SensitivityResult(method, gamma, tau0, statistic, expectation, se, dev, p, alpha)


def test_dbar(design: MatchedDesign, tau0: float, model: GammaModel, alpha: float | None = 0.05,
              q_matrix: DesignMatrixQ | None = None) -> SensitivityResult:
    """Studentized test with worst-case expectation zero; sharp under a constant effect."""
    _check_alpha(alpha)
    q_matrix = q_matrix or default_q(design)
    terms = dbar_terms(design.tau_hat, design.sizes, tau0, model)
    return studentized_result("dbar", terms, 0.0, q_matrix, model.gamma, tau0, alpha)


def test_ktilde(design: MatchedDesign, tau0: float, model: GammaModel, alpha: float | None = 0.05,
                q_matrix: DesignMatrixQ | None = None) -> SensitivityResult:
    """Studentized test valid over the entire weak null."""
    _check_alpha(alpha)
    q_matrix = q_matrix or default_q(design)
    terms = ktilde_terms(design.tau_hat, design.sizes, tau0, model)
    return studentized_result("ktilde", terms, 0.0, q_matrix, model.gamma, tau0, alpha)


def run_test(design: MatchedDesign, tau0: float, gamma: float, method: str,
             alpha: float | None = 0.05, alternative: str = "greater") -> SensitivityResult:
    """Dispatch to one of the four methods.

    The less-than alternative is the greater-than test on negated outcomes
    and a negated ``tau0``; the reported ``tau0`` is the caller's.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if alternative not in ("greater", "less"):
        raise ValueError(f"alternative must be 'greater' or 'less', got {alternative!r}")
    _check_alpha(alpha)
    model = GammaModel(gamma)
    d, t0 = (design, tau0) if alternative == "greater" else (design.negated(), -tau0)
    if method == "perm_t":
        res = perm_t_sensitivity(d, t0, model, alpha)
    elif method == "dbar":
        res = test_dbar(d, t0, model, alpha)
    elif method == "ktilde":
        res = test_ktilde(d, t0, model, alpha)
    else:
        res = binaryip.test_binary(d, t0, model, alpha)
    if alternative == "less":
        res = SensitivityResult(res.method, res.gamma, tau0, res.statistic, res.worst_case_expectation,
                                res.se, res.deviate, res.p_value, alpha, "less")
    return res


@dataclass
class ChangepointResult:
    gamma: float
    method: str
    alpha: float
    not_significant_at_one: bool = False
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "alpha": self.alpha,
            "changepoint": self.gamma,
            "not_significant_at_one": self.not_significant_at_one,
            "warnings": list(self.warnings),
        }


def changepoint(design: MatchedDesign, tau0: float, method: str, alpha: float = 0.05,
                gamma_max: float = 10.0, tol: float = 1e-4,
                alternative: str = "greater") -> ChangepointResult:
    """Smallest gamma at which the worst-case p-value reaches ``alpha``, by bisection.

    Raises NoCrossingBelowMax if the test still rejects at ``gamma_max``.
    """
    _check_alpha(alpha)

    def pval(g):
        return run_test(design, tau0, g, method, None, alternative).p_value

    if pval(1.0) >= alpha:
        return ChangepointResult(1.0, method, alpha, not_significant_at_one=True)
    if pval(gamma_max) < alpha:
        raise NoCrossingBelowMax(f"p-value stays below {alpha} up to gamma = {gamma_max}")
    lo, hi = 1.0, float(gamma_max)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pval(mid) >= alpha:
            hi = mid
        else:
            lo = mid
    result = ChangepointResult(hi, method, alpha)
    grid = np.linspace(1.0, gamma_max, 10)
    ps = np.array([pval(g) for g in grid])
    if np.any(np.diff(ps) < -1e-12):
        msg = "p-value is not monotone in gamma on the verification grid; changepoint may be unreliable"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        result.warnings.append(msg)
    return result


@dataclass(frozen=True)
class ReferenceDistribution:
    """Sorted draws of the studentized statistic under biased randomization."""

    draws: np.ndarray
    seed: int
    count: int
    discarded: int = 0

    def cdf(self, k: float) -> float:
        return float(np.searchsorted(self.draws, k, side="right")) / self.count

    def quantile(self, level: float) -> float:
        """Smallest draw whose empirical CDF is at least ``level``."""
        if not 0.0 < level <= 1.0:
            raise ValueError("level must lie in (0, 1]")
        k = max(int(math.ceil(level * self.count - 1e-9)), 1)
        return float(self.draws[k - 1])

    def upper_p(self, observed: float) -> float:
        """Fraction of draws at least as large as ``observed``."""
        return float(self.count - np.searchsorted(self.draws, observed, side="left")) / self.count


_BLOCK = 1024


def _uniform_block(seed: int, block: int, rows: int, B: int) -> np.ndarray:
    # one counter-based stream per (seed, block) keeps draws independent of scheduling
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))
    return gen.random((rows, B))


def categorical_draw(cum_global: np.ndarray, stratum_ends: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Treated-unit flat indices from per-stratum cumulative probabilities.

    ``cum_global`` is each unit's within-stratum cumulative probability
    plus its stratum index, so it increases across the whole design.
    """
    B = uniforms.shape[-1]
    target = uniforms + np.arange(B)
    idx = np.searchsorted(cum_global, target, side="right")
    return np.minimum(idx, stratum_ends)


def stratum_cumulative(rho: np.ndarray, sizes: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    stratum = np.repeat(np.arange(len(sizes)), sizes)
    cum = np.cumsum(rho)
    start = np.repeat(cum[offsets] - rho[offsets], sizes)
    return cum - start + stratum


def randomization_reference(design: MatchedDesign, tau0: float, model: GammaModel, m_draws: int = 10_000,
                            seed: int = 0, q_matrix: DesignMatrixQ | None = None) -> ReferenceDistribution:
    """Reference distribution from treatment assignments drawn at the constant-effect worst case.

    Draws with a zero standard error are discarded and replaced; more than
    1% discarded raises DegenerateSE.
    """
    if m_draws < 1000:
        raise ValueError("m_draws must be at least 1000")
    q_matrix = q_matrix or default_q(design)
    sizes, offsets = design.sizes, design.offsets
    N = design.N
    a = sharp_null_q(design, tau0) * np.repeat(N / sizes, sizes)
    u = (a >= 0).astype(float)
    w = np.exp(model.log_gamma * u)
    rho = w / np.repeat(np.add.reduceat(w, offsets), sizes)
    cum = stratum_cumulative(rho, sizes, offsets)
    ends = offsets + sizes - 1
    unit_terms = np.repeat(sizes / N, sizes) * d_stat(a, model.gamma)

    kept: list[np.ndarray] = []
    have = discarded = 0
    block = 0
    while have < m_draws:
        U = _uniform_block(seed, block, _BLOCK, design.B)
        block += 1
        terms = unit_terms[categorical_draw(cum, ends, U)]
        stat = terms.sum(axis=1)
        se2 = se_q_squared(terms, q_matrix)
        ok = se2 > 0
        discarded += int(np.count_nonzero(~ok[: m_draws - have]))
        vals = stat[ok] / np.sqrt(se2[ok])
        take = vals[: m_draws - have]
        kept.append(take)
        have += take.size
        if discarded > 0.01 * m_draws:
            raise DegenerateSE(f"{discarded} draws had zero standard error")
    draws = np.sort(np.concatenate(kept))
    return ReferenceDistribution(draws, int(seed), int(m_draws), discarded)


def randomization_test(design: MatchedDesign, tau0: float, model: GammaModel, alpha: float = 0.05,
                       m_draws: int = 10_000, seed: int = 0) -> tuple[SensitivityResult, ReferenceDistribution]:
    """The size-weighted test referred to the biased-randomization distribution."""
    _check_alpha(alpha)
    base = test_dbar(design, tau0, model, alpha)
    ref = randomization_reference(design, tau0, model, m_draws, seed)
    p = ref.upper_p(base.deviate)
    res = SensitivityResult("dbar", model.gamma, tau0, base.statistic, 0.0, base.se, base.deviate, p, alpha)
    return res, ref
