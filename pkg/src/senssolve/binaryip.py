"""Worst-case expectation of the size-weighted statistic over the weak null for binary outcomes.

Strata are grouped by their observed table. Each group's possible
completions of the missing potential outcomes are enumerated by counts,
and an exact dynamic program over the total unit-level effect picks one
completion per stratum so that the average effect equals ``tau0`` while
the summed worst-case expectation is as large as possible.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .design import MatchedDesign
from .errors import InfeasibleTau0, NonBinaryOutcome, NonIntegerTarget
from .results import SensitivityResult
from .separable import GammaModel, _upper_p, worst_case_block
from .variance import default_q, se_q_squared
from .weakstats import d_stat, dbar_terms

TARGET_TOL = 1e-9


@dataclass(frozen=True)
class ObservedTableGroup:
    n_i: int
    treated_outcome: int
    control_ones: int
    multiplicity: int = 1

    def __post_init__(self):
        if self.n_i < 2 or self.treated_outcome not in (0, 1):
            raise ValueError("need n_i >= 2 and a 0/1 treated outcome")
        if not 0 <= self.control_ones <= self.n_i - 1:
            raise ValueError("control_ones must lie in [0, n_i - 1]")


@dataclass(frozen=True)
class CompletionCandidate:
    """One completed stratum table.

    ``table`` maps ``(r_T, r_C)`` to the number of units of that type.
    """

    table: tuple[tuple[tuple[int, int], int], ...]
    effect_sum: int
    worst_case_mu: float

    @property
    def counts(self) -> dict[tuple[int, int], int]:
        return dict(self.table)


def observed_groups(design: MatchedDesign) -> list[ObservedTableGroup]:
    """Distinct observed tables with their multiplicities, in first-appearance order."""
    if not design.is_binary:
        raise NonBinaryOutcome("outcomes must all be 0 or 1")
    keys = Counter()
    for s in design.strata:
        y = np.asarray(s.outcomes)
        t = int(y[s.treated_index])
        keys[(s.n, t, int(round(y.sum())) - t)] += 1
    return [ObservedTableGroup(n, t, c, m) for (n, t, c), m in keys.items()]


def _completion_units(group: ObservedTableGroup, treated_rc: int, k1: int, k0: int):
    """Per-unit (r_T, r_C) arrays; the treated unit comes first."""
    n, c = group.n_i, group.control_ones
    rest = n - 1 - c
    r_t = [group.treated_outcome] + [1] * k1 + [0] * (c - k1) + [1] * k0 + [0] * (rest - k0)
    r_c = [treated_rc] + [1] * c + [0] * rest
    return np.array(r_t, dtype=float), np.array(r_c, dtype=float)


def enumerate_completions(group: ObservedTableGroup, tau0: float, model: GammaModel,
                          weight: float) -> list[CompletionCandidate]:
    """Every completion of a group's observed table, up to permutation of units.

    The free quantities are the treated unit's control outcome and, among
    controls with each observed outcome, how many have a treated outcome of 1.
    """
    n, c = group.n_i, group.control_ones
    rest = n - 1 - c
    combos = [(rc, k1, k0) for rc in (0, 1) for k1 in range(c + 1) for k0 in range(rest + 1)]
    units = [_completion_units(group, *combo) for combo in combos]
    r_t = np.array([u[0] for u in units])
    r_c = np.array([u[1] for u in units])
    total_c = r_c.sum(axis=1, keepdims=True)
    deltas = r_t - (total_c - r_c) / (n - 1)
    q = weight * d_stat(deltas - tau0, model.gamma)
    mu, _, _ = worst_case_block(q, model.gamma)
    out = []
    for row in range(len(combos)):
        table = Counter(zip(r_t[row].astype(int).tolist(), r_c[row].astype(int).tolist()))
        out.append(CompletionCandidate(
            tuple(sorted(table.items())),
            int(round((r_t[row] - r_c[row]).sum())),
            float(mu[row]),
        ))
    return out


def effect_target(N: int, tau0: float) -> int:
    """Integer total effect ``N * tau0``; raises NonIntegerTarget if it is not one."""
    total = N * tau0
    t0 = round(total)
    if not math.isfinite(total) or abs(total - t0) > TARGET_TOL:
        raise NonIntegerTarget(f"N * tau0 = {total!r} is not an integer")
    if abs(t0) > N:
        raise InfeasibleTau0(f"total effect {t0} lies outside [-{N}, {N}]")
    return int(t0)


def ip_bound(design: MatchedDesign, tau0: float, model: GammaModel) -> float:
    """Largest worst-case expectation of the size-weighted statistic over the weak null.

    The maximum runs over every completion of the missing potential
    outcomes whose total effect is ``N * tau0`` and over every confounder
    allowed at ``model.gamma``.
    """
    groups = observed_groups(design)
    N = design.N
    t0 = effect_target(N, tau0)
    # best[s + N] holds the largest summed mu reaching total effect s
    best = np.full(2 * N + 1, -np.inf)
    best[N] = 0.0
    reach = 0
    for group in groups:
        cands = enumerate_completions(group, tau0, model, group.n_i / N)
        effects = np.array([cd.effect_sum for cd in cands])
        mus = np.array([cd.worst_case_mu for cd in cands])
        # keep only the best mu for each attainable effect sum
        uniq = np.unique(effects)
        top = np.array([mus[effects == e].max() for e in uniq])
        for _ in range(group.multiplicity):
            new = np.full_like(best, -np.inf)
            lo, hi = N - reach, N + reach + 1
            for e, m in zip(uniq, top):
                np.maximum(new[lo + e:hi + e], best[lo:hi] + m, out=new[lo + e:hi + e])
            best = new
            reach += group.n_i
    value = best[t0 + N]
    if not np.isfinite(value):
        raise InfeasibleTau0(f"no completion of the observed data has total effect {t0}")
    return float(value)


def test_binary(design: MatchedDesign, tau0: float, model: GammaModel,
                alpha: float | None = 0.05) -> SensitivityResult:
    """Studentized test centered at the weak-null worst-case expectation."""
    if alpha is not None and not 0.0 < alpha <= 0.5:
        raise ValueError(f"alpha must lie in (0, 0.5], got {alpha!r}")
    bound = ip_bound(design, tau0, model)
    terms = dbar_terms(design.tau_hat, design.sizes, tau0, model)
    statistic = float(terms.sum())
    variance = float(se_q_squared(terms, default_q(design)))
    se, dev, p = _upper_p(statistic, bound, variance)
    return SensitivityResult("binary_ip", model.gamma, tau0, statistic, bound, se, dev, p, alpha)
