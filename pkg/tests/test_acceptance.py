"""Acceptance checks. Each prints one PASS/FAIL line with what it measured."""
import itertools
import math
import os
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import binary_confounders, brute_ip, brute_worst_case, probs, random_design, small_binary_design
from senssolve import binaryip as bip
from senssolve import inference as inf
from senssolve import simlab as sl
from senssolve import weakstats as ws
from senssolve.errors import InfeasibleTau0
from senssolve.separable import GammaModel, worst_case_moments

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} [{criterion}] {detail}")
        assert ok, detail
    return emit


def test_01_separable_matches_brute_force(report):
    rng = np.random.default_rng(101)
    cases = []
    for _ in range(10_000):
        n = int(rng.integers(2, 7))
        q = rng.normal(size=n) * rng.choice([1.0, 10.0])
        if rng.random() < 0.3:
            q = np.round(q)
        cases.append((q, float(rng.uniform(1, 10))))
    start = time.perf_counter()
    got = [worst_case_moments(q, GammaModel(g)) for q, g in cases]
    elapsed = time.perf_counter() - start
    worst = 0.0
    for (q, g), w in zip(cases, got):
        mu, var = brute_worst_case(q, g)
        worst = max(worst, abs(w.mu - mu), abs(w.nu - var))
    report("1 separable oracle", worst <= 1e-10 and elapsed < 10,
           f"max abs error {worst:.2e} over 10^4 strata, solve time {elapsed:.2f}s")


def test_02_worked_example_exact(report):
    model = GammaModel(2.0)
    lo, hi = model.probability_box(3)
    weights, total = ws.worst_case_probability_map([5.0, -2.0, -3.0], 0.0, model)
    # exact rational enumeration of the reweighted estimator's expectation
    w_exact = [Fraction(1, 2), Fraction(1, 5), Fraction(1, 5)]
    deltas = [5, -2, -3]
    best = None
    for u in itertools.product((0, 1), repeat=3):
        mass = [Fraction(2) ** k for k in u]
        e = sum(m / sum(mass) * Fraction(d) / (3 * w) for m, d, w in zip(mass, deltas, w_exact))
        best = e if best is None else max(best, e)
    ok = (
        Fraction(lo).limit_denominator(1000) == Fraction(1, 5) and abs(lo - 0.2) < 1e-15
        and Fraction(hi).limit_denominator(1000) == Fraction(1, 2) and abs(hi - 0.5) < 1e-15
        and all(abs(a - float(b)) < 1e-15 for a, b in zip(weights, w_exact))
        and abs(total - 0.9) < 1e-15
        and best < 0
    )
    report("2 worked example", ok,
           f"box [{lo:.6g}, {hi:.6g}], map {np.round(weights, 15).tolist()}, sum {total:.15g}, max E = {best}")


def test_03_ipw_identity(report):
    rng = np.random.default_rng(103)
    worst = 0.0
    for _ in range(10_000):
        n = int(rng.integers(2, 20))
        g = float(rng.uniform(1, 10))
        kappa = float(rng.uniform(n, n * g))
        x = float(rng.normal() * rng.choice([1e-2, 1.0, 1e2]))
        got = ws.ipw_equivalent(x, n, ws.IntervalRestriction(np.array(kappa), np.array(g)))
        want = kappa / n * (1 + g) / (2 * g) * ws.d_stat(x, g)
        worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    report("3 ipw identity", worst <= 1e-12, f"max relative error {worst:.2e} over 10^4 inputs")


def test_04_zero_sum_equality_case(report):
    rng = np.random.default_rng(104)
    at_sign, others = 0.0, -np.inf
    for _ in range(1000):
        n = int(rng.integers(2, 7))
        q = rng.normal(size=n)
        q -= q.mean()
        g = float(rng.uniform(1, 10))
        at_sign = max(at_sign, abs(ws.penalized_expectation(q, (q >= 0).astype(float), g)))
        for u in binary_confounders(n):
            others = max(others, ws.penalized_expectation(q, u, g))
    report("4 zero-sum equality", at_sign <= 1e-12 and others <= 1e-12,
           f"|E| at sign confounder {at_sign:.2e}, max over all confounders {others:.2e}")


def test_05_limiting_values(report):
    true_var, pooled = sl.limiting_variances(225.0, 1125.0, 900.0, 5)
    size = sl.limiting_size(0.05, true_var, pooled)
    report("5 limiting values", true_var == 1001.25 and pooled == 506.25 and 0.119 <= size <= 0.123,
           f"variances {true_var}, {pooled}; limiting size {size:.5f}")


def test_06_constant_effect_reference_misstated(report):
    low = sl.run_size_study(sl.scenario("appendixA", gamma=1.0, M=2000)).rows["perm_t"]
    high = sl.run_size_study(sl.scenario("appendixA", gamma=6.0, M=500)).rows["perm_t"]
    ok = abs(low["size"] - 0.12) <= 0.02 and abs(high["mean_deviate"] - 2.67) <= 0.15 and high["size"] >= 0.7
    report("6 misstated reference", ok,
           f"size at 1: {low['size']:.3f}; at 6: mean deviate {high['mean_deviate']:.3f}, size {high['size']:.3f}")


# reference signs of the bias columns; zero means exactly unbiased
BIAS_SIGNS = {
    "a": {"ktilde": -1, "dbar": 0, "perm_t": 0},
    "b": {"ktilde": -1, "dbar": -1, "perm_t": 1},
    "h": {"ktilde": -1, "dbar": 1, "perm_t": -1},
    "k": {"ktilde": -1, "dbar": -1, "perm_t": -1},
}


def _sign(x, tol=1e-8):
    return 0 if abs(x) < tol else int(math.copysign(1, x))


def test_07_size_study_rows(report):
    rows = {r: sl.run_size_study(sl.scenario(r, M=1000)).rows for r in BIAS_SIGNS}
    ok = all(rows[r]["ktilde"]["size"] <= 0.005 for r in rows)
    ok &= 0.07 <= rows["a"]["dbar"]["size"] <= 0.13
    ok &= rows["h"]["dbar"]["size"] >= 0.11
    ok &= rows["b"]["perm_t"]["size"] >= 0.30
    mismatched = [(r, s) for r, want in BIAS_SIGNS.items() for s, v in want.items()
                  if _sign(rows[r][s]["bias"]) != v]
    ok &= not mismatched
    detail = "; ".join(
        f"{r}: " + ", ".join(f"{s} size {rows[r][s]['size']:.3f} bias {rows[r][s]['bias']:+.3f}" for s in rows[r])
        for r in rows
    )
    report("7 size study", ok, detail + (f"; sign mismatches {mismatched}" if mismatched else ""))


def _fixture_oracle(g, c=1.0):
    # sharp-null centering from brute force over confounders, averaged over every assignment
    r_t = np.array([2 * c, 0, 0, -c, 0, 0, -c, 0, 0])
    u = np.array([1, 0, 0, 0, 1, 1, 0, 1, 1])
    total = 0.0
    for s in range(3):
        block = slice(3 * s, 3 * s + 3)
        p = probs(u[block], g)
        for j in range(3):
            y = np.zeros(3)
            y[j] = r_t[block][j]
            q = y - (y.sum() - y) / 2
            total += p[j] * (q[j] - brute_worst_case(q, g)[0])
    return total


def test_08_constant_effect_centering_bias(report):
    g_star = 1 + 3 / math.sqrt(2) + 0.1
    above = sl.theorem1_fixture(g_star)
    gap = max(abs(sl.theorem1_fixture(g) - _fixture_oracle(g)) for g in (1.0, 2.0, 3.0, 4.0))
    report("8 centering bias fixture", above > 0 and gap <= 1e-12,
           f"bias {above:.6f} at gamma {g_star:.4f}; max oracle gap {gap:.2e}")


def test_09_binary_integer_program(report):
    rng = np.random.default_rng(109)
    gap = 0.0
    for _ in range(200):
        d = small_binary_design(rng, int(rng.integers(1, 4)), 3)
        t0 = int(rng.integers(-d.N, d.N + 1))
        g = float(rng.uniform(1, 8))
        want = brute_ip(d, t0 / d.N, g)
        try:
            got = bip.ip_bound(d, t0 / d.N, GammaModel(g))
        except InfeasibleTau0:
            got = -np.inf
        gap = max(gap, 0.0 if got == want else abs(got - want))
    row_a = sl.run_size_study(sl.scenario("binary-a", M=500)).rows
    row_j = sl.run_size_study(sl.scenario("binary-j", M=500)).rows
    solve = max(row_a["binary_ip"]["max_time"], row_j["binary_ip"]["max_time"])
    ok = gap <= 1e-10 and row_a["binary_ip"]["size"] <= 0.05 and row_j["dbar"]["size"] >= 0.11 and solve < 1.0
    report("9 binary program", ok,
           f"oracle gap {gap:.2e}; binary-a IP size {row_a['binary_ip']['size']:.3f}; "
           f"binary-j dbar size {row_j['dbar']['size']:.3f} (IP {row_j['binary_ip']['size']:.3f}); "
           f"slowest solve {solve:.3f}s")


EXTRACTS = {k: os.environ.get(f"SENSSOLVE_NHANES_{k}") for k in ("1TO1", "1TO5")}
# published worst-case p-values as (method, gamma, p) and changepoints at 0.05 per method
REFERENCE = {
    "1TO1": (
        [("perm_t", 2.0, 0.0807), ("dbar", 2.0, 0.0478)],
        {"perm_t": 1.87, "dbar": 2.01, "ktilde": 2.01},
    ),
    "1TO5": (
        [("dbar", 1.25, 0.0134), ("dbar", 1.5, 0.0460), ("dbar", 1.75, 0.1136), ("dbar", 2.0, 0.2178),
         ("ktilde", 1.25, 0.0370)],
        {"ktilde": 1.29, "dbar": 1.52, "perm_t": 1.49},
    ),
}


@pytest.mark.skipif(not all(EXTRACTS.values()),
                    reason="matched extracts not supplied; set SENSSOLVE_NHANES_1TO1 and SENSSOLVE_NHANES_1TO5")
def test_10_matched_extracts(report):
    from senssolve.design import load_design

    ok, parts = True, []
    for key, (pvals, cps) in REFERENCE.items():
        d = load_design(EXTRACTS[key])
        for method, g, want in pvals:
            got = inf.run_test(d, 0.0, g, method).p_value
            ok &= abs(got - want) <= 5e-4
            parts.append(f"{key} {method} p({g}) {got:.4f}")
        for method, want in cps.items():
            got = inf.changepoint(d, 0.0, method, alpha=0.05).gamma
            ok &= abs(got - want) <= 0.01
            parts.append(f"{key} {method} changepoint {got:.3f}")
    report("10 matched extracts", ok, "; ".join(parts))


def test_11_p_values_monotone_in_gamma(report):
    rng = np.random.default_rng(111)
    grid = np.round(np.linspace(1.0, 5.0, 41), 10)
    violations = {m: 0 for m in ("perm_t", "dbar", "ktilde", "binary_ip")}
    for _ in range(100):
        d = random_design(rng, 40, shift=float(rng.uniform(0, 1)))
        b = random_design(rng, 40, shift=float(rng.uniform(0, 1)), binary=True)
        for method in violations:
            data = b if method == "binary_ip" else d
            ps = np.array([inf.run_test(data, 0.0, g, method).p_value for g in grid])
            violations[method] += bool(np.any(np.diff(ps) < -1e-12))
    report("11 monotone p-values", not any(violations.values()),
           "datasets with a decrease: " + ", ".join(f"{m} {v}/100" for m, v in violations.items()))
