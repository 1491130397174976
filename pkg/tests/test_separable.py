import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import binary_confounders, brute_worst_case, probs, random_design
from senssolve import separable as sep
from senssolve.errors import DegenerateVariance, LengthTooSmall, ProbabilityRowInvalid
from senssolve.simlab import PotentialOutcomes, exact_expectation
from senssolve.separable import GammaModel, worst_case_block, worst_case_moments


def test_hand_example():
    wc = worst_case_moments([1.0, 3.0, 5.0], GammaModel(2.0))
    assert wc.mu == pytest.approx(3.5, abs=1e-14)
    assert wc.nu == pytest.approx(2.75, abs=1e-14)
    assert wc.ones_count == 1


def test_gamma_one_ties_pick_most_ones():
    wc = worst_case_moments([1.0, 3.0, 5.0], GammaModel(1.0))
    assert wc.mu == pytest.approx(3.0)
    assert wc.ones_count == 2


def test_hand_pvalue():
    p = sep.separable_pvalue(5.0, [[1.0, 3.0, 5.0]], GammaModel(2.0))
    assert p == pytest.approx(0.5 * math.erfc(1.5 / math.sqrt(2.75) / math.sqrt(2)), abs=1e-15)
    assert p == pytest.approx(0.18287, abs=1e-4)


def test_degenerate_variance():
    with pytest.raises(DegenerateVariance):
        sep.separable_pvalue(1.0, [[2.0, 2.0]], GammaModel(3.0))
    assert sep._upper_p(1.0, 1.0, 0.0)[2] == 1.0
    assert sep._upper_p(1.5, 1.0, 0.0)[2] == 0.0


def test_too_short():
    with pytest.raises(LengthTooSmall):
        worst_case_moments([1.0], GammaModel(2.0))


@pytest.mark.parametrize("bad", [0.5, math.inf, math.nan, -1.0])
def test_gamma_validation(bad):
    with pytest.raises(ValueError):
        GammaModel(bad)


def test_gamma_model_quantities():
    m = GammaModel(3.0)
    assert m.kappa_tilde(2) == 4.0
    assert m.gamma_n(2) == pytest.approx(3.0)
    assert m.gamma_n(10**9) == pytest.approx(9.0, rel=1e-6)
    lo, hi = m.probability_box(3)
    assert (lo, hi) == (pytest.approx(1 / 7), pytest.approx(3 / 5))
    assert GammaModel(1.0).gamma_n(7) == 1.0


def test_random_strata_match_brute_force(rng):
    for _ in range(500):
        n = int(rng.integers(2, 7))
        q = rng.normal(size=n) * rng.choice([1e-3, 1.0, 1e3])
        g = float(rng.uniform(1.0, 10.0))
        wc = worst_case_moments(q, GammaModel(g))
        mu, var = brute_worst_case(q, g)
        scale = np.abs(q).max()
        assert wc.mu == pytest.approx(mu, abs=1e-10 * scale)
        assert wc.nu == pytest.approx(var, abs=1e-10 * scale**2)


def test_integer_ties_match_brute_force(rng):
    # repeated values make expectation ties common
    for _ in range(300):
        n = int(rng.integers(2, 7))
        q = rng.integers(-2, 3, size=n).astype(float)
        g = float(rng.choice([1.0, 2.0, 3.0]))
        wc = worst_case_moments(q, GammaModel(g))
        mu, var = brute_worst_case(q, g)
        assert wc.mu == pytest.approx(mu, abs=1e-12)
        assert wc.nu == pytest.approx(var, abs=1e-12)


def test_returned_confounder_attains_moments(rng):
    q = rng.normal(size=(50, 4))
    mu, nu, ones, u = worst_case_block(q, 2.5, return_u=True)
    for row, uu, m, v, k in zip(q, u, mu, nu, ones):
        p = probs(uu, 2.5)
        assert p @ row == pytest.approx(m, abs=1e-12)
        assert p @ (row - m) ** 2 == pytest.approx(v, abs=1e-12)
        assert uu.sum() == k


@settings(max_examples=80)
@given(
    st.lists(st.floats(-100, 100), min_size=2, max_size=6),
    st.floats(1.0, 10.0),
    st.floats(0.01, 100.0),
    st.floats(-50.0, 50.0),
)
def test_scale_and_shift_equivariance(q, g, a, b):
    q = np.array(q)
    base = worst_case_moments(q, GammaModel(g))
    moved = worst_case_moments(a * q + b, GammaModel(g))
    tol = 1e-9 * (1.0 + abs(a) * np.abs(q).max() + abs(b))
    assert moved.mu == pytest.approx(a * base.mu + b, abs=tol)
    assert moved.nu == pytest.approx(a * a * base.nu, abs=tol * (1 + a * a * np.abs(q).max()))


def test_expectation_increases_with_gamma(rng):
    for _ in range(100):
        q = rng.normal(size=int(rng.integers(2, 7)))
        mus = [worst_case_moments(q, GammaModel(g)).mu for g in np.linspace(1, 8, 15)]
        assert np.all(np.diff(mus) >= -1e-12)


def test_flat_matches_blocks(rng):
    d = random_design(rng, 30)
    q = sep.sharp_null_q(d, 0.2)
    mu, nu, _ = sep.worst_case_flat(q, d.sizes, d.offsets, 3.0)
    for i, s in enumerate(d.strata):
        wc = worst_case_moments(q[d.offsets[i]: d.offsets[i] + s.n], GammaModel(3.0))
        assert mu[i] == pytest.approx(wc.mu, abs=1e-14)
        assert nu[i] == pytest.approx(wc.nu, abs=1e-14)


def test_perm_t_gamma_one_is_centered(rng):
    d = random_design(rng, 40)
    res = sep.perm_t_sensitivity(d, 0.0, GammaModel(1.0))
    # sharp-null imputed deltas sum to zero in every stratum
    assert res.worst_case_expectation == pytest.approx(0.0, abs=1e-12)
    assert res.statistic == pytest.approx(float(np.dot(d.sizes / d.N, d.tau_hat)))


def _small_potential(rng, sizes):
    N = int(sum(sizes))
    rc = rng.normal(size=N)
    return PotentialOutcomes(rc + rng.normal(0.3, 1.0, N), rc, np.array(sizes))


def test_perm_t_expectation_matches_full_enumeration(rng):
    model = GammaModel(2.0)
    pot = _small_potential(rng, [2, 3, 3])
    tau0 = pot.tau_bar
    u = rng.integers(0, 2, pot.N).astype(float)
    rho = probs_by_stratum(u, pot.sizes, 2.0)
    total = 0.0
    ranges = [range(n) for n in pot.sizes]
    for pick in itertools.product(*ranges):
        design = pot.observe(np.array(pick))
        prob = np.prod([rho[o + k] for o, k in zip(pot.offsets, pick)])
        res = sep.perm_t_sensitivity(design, tau0, model)
        total += prob * (res.statistic - res.worst_case_expectation)
    assert sep.perm_t_expectation(pot, rho, tau0, model) == pytest.approx(total, abs=1e-12)


def probs_by_stratum(u, sizes, g):
    out = []
    start = 0
    for n in sizes:
        out.append(probs(u[start: start + n], g))
        start += n
    return np.concatenate(out)


def test_bias_bound_dominates_expectation_in_pairs(rng):
    # for pairs the bound is exact at gamma one and an upper bound otherwise
    model = GammaModel(1.0)
    pot = _small_potential(rng, [2] * 6)
    rho = np.full(pot.N, 0.5)
    ex = sep.perm_t_expectation(pot, rho, pot.tau_bar, model)
    assert ex == pytest.approx(0.0, abs=1e-12)
    assert sep.perm_t_bias_bound(pot, rho, pot.tau_bar, model) == pytest.approx(0.0, abs=1e-12)


def test_bias_bound_formula(rng):
    pot = _small_potential(rng, [2, 3])
    rho = np.array([0.5, 0.5, 0.2, 0.3, 0.5])
    tau = pot.tau
    want = (4 / (5 * 1)) * np.sum(0.25 * (tau[:2] - 0.1)) + (9 / (5 * 2)) * np.sum(
        rho[2:] * (1 - rho[2:]) * (tau[2:] - 0.1))
    assert sep.perm_t_bias_bound(pot, rho, 0.1, GammaModel(2.0)) == pytest.approx(want, abs=1e-14)


def test_rho_checks(rng):
    pot = _small_potential(rng, [2, 3])
    with pytest.raises(ProbabilityRowInvalid):
        sep.perm_t_bias_bound(pot, np.array([0.5, 0.5, 0.5, 0.5, 0.5]), 0.0, GammaModel(2.0))
    with pytest.raises(ProbabilityRowInvalid):
        sep.perm_t_expectation(pot, np.array([1.2, -0.2, 0.2, 0.3, 0.5]), 0.0, GammaModel(2.0))


def test_perm_t_expectation_agrees_with_simulation_helper(rng):
    from senssolve.simlab import ConfounderAssignment

    model = GammaModel(3.0)
    pot = _small_potential(rng, [3, 4, 2, 5])
    a = ConfounderAssignment.from_u(rng.integers(0, 2, pot.N), pot.sizes, 3.0)
    got = exact_expectation(pot, "perm_t", a, pot.tau_bar, model)
    assert got == pytest.approx(sep.perm_t_expectation(pot, a.rho, pot.tau_bar, model), abs=1e-14)


def test_all_confounders_respect_worst_case(rng):
    q = rng.normal(size=5)
    g = 4.0
    wc = worst_case_moments(q, GammaModel(g))
    assert max(probs(u, g) @ q for u in binary_confounders(5)) == pytest.approx(wc.mu, abs=1e-12)
