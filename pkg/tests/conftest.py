import itertools

import numpy as np
import pytest

from senssolve.design import MatchedDesign, Stratum
from senssolve.weakstats import d_stat


def brute_worst_case(q, gamma, tol=1e-12):
    """Max expectation, then max variance, over every binary confounder."""
    q = np.asarray(q, dtype=float)
    best_mu, best_var = -np.inf, -np.inf
    scale = max(np.abs(q - q.mean()).max(), 1e-300)
    for u in itertools.product((0.0, 1.0), repeat=len(q)):
        w = np.power(gamma, np.array(u))
        p = w / w.sum()
        mu = float(p @ q)
        var = float(p @ (q - mu) ** 2)
        if mu > best_mu + tol * scale:
            best_mu, best_var = mu, var
        elif abs(mu - best_mu) <= tol * scale and var > best_var:
            best_var = var
    return best_mu, best_var


def binary_confounders(n):
    return [np.array(u, dtype=float) for u in itertools.product((0, 1), repeat=n)]


def probs(u, gamma):
    w = np.power(float(gamma), np.asarray(u, dtype=float))
    return w / w.sum()


def random_design(rng, B, n_max=5, shift=0.5, binary=False):
    strata = []
    for i in range(B):
        n = int(rng.integers(2, n_max + 1))
        y = rng.normal(0.0, 1.0, n)
        t = int(rng.integers(n))
        y[t] += rng.normal(shift, 1.0)
        if binary:
            y = (y > 0).astype(float)
        strata.append(Stratum(i, tuple(y.tolist()), t))
    return MatchedDesign(tuple(strata))


def _fill(stratum, bits):
    """Potential outcomes for one stratum with the missing entries set from ``bits``."""
    y = np.array(stratum.outcomes)
    rt, rc = y.copy(), y.copy()
    for j, b in enumerate(bits):
        if j == stratum.treated_index:
            rc[j] = b
        else:
            rt[j] = b
    return rt, rc


def _deltas(rt, rc):
    n = len(rt)
    return rt - (rc.sum() - rc) / (n - 1)


def brute_ip(design, tau0, gamma):
    """Exhaustive max over completions and binary confounders of the size-weighted expectation."""
    N = design.N
    target = round(N * tau0)
    per_stratum = []
    for s in design.strata:
        opts = {}
        for bits in itertools.product((0.0, 1.0), repeat=s.n):
            rt, rc = _fill(s, bits)
            q = s.n / N * d_stat(_deltas(rt, rc) - tau0, gamma)
            best = max(float(np.dot(gamma ** np.array(u), q) / np.sum(gamma ** np.array(u)))
                       for u in itertools.product((0.0, 1.0), repeat=s.n))
            e = int(round((rt - rc).sum()))
            opts[e] = max(opts.get(e, -np.inf), best)
        per_stratum.append(list(opts.items()))
    best = -np.inf
    for combo in itertools.product(*per_stratum):
        if sum(c[0] for c in combo) == target:
            best = max(best, sum(c[1] for c in combo))
    return best


def small_binary_design(rng, B, n_max):
    strata = []
    for i in range(B):
        n = int(rng.integers(2, n_max + 1))
        strata.append(Stratum(i, tuple(float(v) for v in rng.integers(0, 2, n)), int(rng.integers(n))))
    return MatchedDesign(tuple(strata))


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
