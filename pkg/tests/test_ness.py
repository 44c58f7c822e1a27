import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats
from scipy.special import gammaln

from harmonic_ness.model import ModelParams, negbin_pmf, stationary_distribution
from harmonic_ness.ness import (
    TruncationWarning,
    appendixA_check,
    f_product,
    f_weight,
    factorial_moment,
    factorial_moment_table,
    marginal_distribution,
    mixture_probability,
    mixture_probability_table,
    ness_probability,
    ness_probability_expansion,
    ness_probability_table,
    sample_mixture,
)


def _scaled_factorial(two_s, eta, xi):
    # eta!/(eta - xi)! * Gamma(2s)/Gamma(2s + xi), zero when xi > eta
    if xi > eta:
        return 0.0
    return math.exp(gammaln(eta + 1) - gammaln(eta - xi + 1) + gammaln(two_s) - gammaln(two_s + xi))


def test_f_weight_examples():
    p = ModelParams(0.5, 1, 0.0, 1.0)
    assert f_weight(p, 1, (1,)) == pytest.approx(0.5, rel=1e-15)
    assert f_weight(p, 1, (0,)) == 1.0
    # 2s = 1, N = 1, eta = 2: (1 + 2 - 1)(1 + 2 - 2)/((2 + 2 - 1)(2 + 2 - 2)) = 2/6
    assert f_weight(p, 1, (2,)) == pytest.approx(1 / 3, rel=1e-15)
    with pytest.raises(ValueError):
        f_weight(p, 2, (1,))


@given(st.sampled_from([0.5, 1.0, 1.5]), st.lists(st.integers(0, 6), min_size=1, max_size=4))
def test_f_product_is_moment_of_one_minus_v(s, eta):
    # F(eta) = E[prod (1 - V_i)^eta_i] with V the cumulative Dirichlet law
    p = ModelParams(s, len(eta), 0.0, 1.0)
    from harmonic_ness.ness import mixture_expectation
    e = np.asarray(eta, dtype=float)
    ref = mixture_expectation(p, lambda th: np.prod((1.0 - th) ** e, axis=1), sum(eta) // 2 + 2)
    assert f_product(p, eta) == pytest.approx(ref, rel=1e-11, abs=1e-15)


def test_factorial_moment_examples():
    p = ModelParams(0.5, 1, 0.0, 1.0)
    assert factorial_moment(p, (0,)) == pytest.approx(1.0, abs=1e-15)
    assert factorial_moment(p, (1,)) == pytest.approx(0.5, rel=1e-14)
    # exact value E[V_1 V_2] for Dirichlet(2, 2, 2)
    q = ModelParams(1.0, 2, 0.0, 1.0)
    assert factorial_moment(q, (1, 1)) == pytest.approx(5 / 21, rel=1e-13)


@given(st.sampled_from([0.5, 0.75, 1.0, 2.0]), st.integers(1, 5),
       st.floats(0.0, 0.9), st.floats(0.05, 1.0))
def test_first_moments_are_linear(s, N, rl, width):
    p = ModelParams(s, N, rl, rl + width)
    for i in range(N):
        xi = [0] * N
        xi[i] = 1
        expected = rl + width * (i + 1) / (N + 1)
        assert factorial_moment(p, xi) == pytest.approx(expected, rel=1e-12, abs=1e-14)


def test_factorial_moments_match_truncated_stationary_law():
    p = ModelParams(0.5, 2, 0.1, 0.5)
    cap = 45
    pi = stationary_distribution(p, cap).reshape(cap + 1, cap + 1)
    table = factorial_moment_table(p, 3)
    for xi in itertools.product(range(4), repeat=2):
        ref = sum(pi[a, b] * _scaled_factorial(1.0, a, xi[0]) * _scaled_factorial(1.0, b, xi[1])
                  for a in range(cap + 1) for b in range(cap + 1))
        assert table[xi] == pytest.approx(ref, rel=1e-9, abs=1e-12)
        assert factorial_moment(p, xi) == pytest.approx(table[xi], rel=1e-12)


def test_ness_probability_matches_frozen_value_and_mixture():
    p = ModelParams(0.5, 2, 0.2, 0.8)
    frozen = 0.456672094147681921772878196196  # (log 1.5 / 0.6)^2
    # near rho_r = 1 the alternating series needs extended precision
    res = ness_probability(p, (0, 0), xi_cap=110, dps=80)
    assert res.value == pytest.approx(frozen, abs=1e-11)
    assert mixture_probability(p, (0, 0)).value == pytest.approx(frozen, rel=1e-10)
    exp = ness_probability_expansion(p, 3)
    assert exp[0, 0] == pytest.approx(frozen, rel=1e-11)
    mix = mixture_probability_table(p, 3)
    assert np.max(np.abs(exp - mix)) < 1e-11


def test_float_series_matches_mixture_away_from_one():
    p = ModelParams(0.75, 2, 0.1, 0.5)
    series = ness_probability_table(p, 60, eta_cap=4)
    mix = mixture_probability_table(p, 4)
    assert np.max(np.abs(series - mix)) < 1e-10


def test_equilibrium_reduces_to_product_negbin():
    p = ModelParams(0.75, 1, 0.4, 0.4)
    for n in range(6):
        ref = negbin_pmf(0.75, 0.4, n)
        assert ness_probability(p, (n,), xi_cap=80).value == pytest.approx(ref, abs=1e-10)
        assert mixture_probability(p, (n,)).value == pytest.approx(ref, rel=1e-13)


def test_mixture_single_site_log_two():
    p = ModelParams(0.5, 1, 0.0, 1.0)
    assert mixture_probability(p, (0,)).value == pytest.approx(math.log(2), rel=1e-12)
    assert mixture_probability(p, (1,)).value == pytest.approx(
        0.193147180559945309417232121458, rel=1e-12)


def test_mixture_table_normalized():
    p = ModelParams(1.0, 3, 0.05, 0.6)
    tab = mixture_probability_table(p, 30, n_nodes=24)
    assert tab.sum() == pytest.approx(1.0, abs=1e-10)
    assert tab.min() >= -1e-15


def test_monte_carlo_mixture_within_error():
    p = ModelParams(0.5, 2, 0.2, 0.8)
    res = mixture_probability(p, (1, 0), method="mc", seed=3, quad_spec={"draws": 200_000})
    ref = mixture_probability(p, (1, 0)).value
    assert abs(res.value - ref) < 4 * res.error


def test_ness_series_warns_when_not_settled():
    p = ModelParams(0.5, 2, 0.2, 0.95)
    with pytest.warns(TruncationWarning):
        ness_probability_table(p, 6, eta_cap=1, tol=1e-14)


def test_sample_mixture_marginals_are_beta():
    p = ModelParams(1.0, 3, 0.0, 1.0)
    draw = sample_mixture(p, seed=11, size=20_000)
    th = draw.thetas
    assert np.all(np.diff(th, axis=1) >= 0)
    for i in range(3):
        a, b = 2.0 * (i + 1), 2.0 * (3 - i)
        assert stats.kstest(th[:, i], stats.beta(a, b).cdf).pvalue > 1e-3
    mean_eta = draw.eta.mean(axis=0)
    se = draw.eta.std(axis=0) / math.sqrt(len(th))
    assert np.all(np.abs(mean_eta - p.mean_profile()) < 4 * se)
    single = sample_mixture(p, seed=11)
    assert single.thetas.shape == (3,) and single.eta.shape == (3,)


def test_marginal_distribution():
    p = ModelParams(0.5, 1, 0.0, 1.0)
    m = marginal_distribution(p, 1, 5)
    assert m[0] == pytest.approx(math.log(2), rel=1e-12)
    q = ModelParams(1.0, 2, 0.0, 1.0)
    frozen = 0.592205557311457100226181916604
    assert marginal_distribution(q, 1, 0)[0] == pytest.approx(frozen, rel=1e-11)
    tab = mixture_probability_table(q, 200)
    m1 = marginal_distribution(q, 1, 10)
    m2 = marginal_distribution(q, 2, 10)
    assert np.allclose(m1, tab.sum(axis=1)[:11], atol=1e-9)
    assert np.allclose(m2, tab.sum(axis=0)[:11], atol=1e-9)
    r = ModelParams(0.75, 4, 0.1, 0.7)
    m3 = marginal_distribution(r, 3, 400)
    assert m3.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.dot(np.arange(401), m3) == pytest.approx(r.mean_profile()[2], rel=1e-8)


def test_moment_routes_agree_examples():
    p = ModelParams(0.5, 1, 0.0, 1.0)
    rep = appendixA_check(p, (2,))
    assert rep.moment_sum == pytest.approx(1 / 3, rel=1e-13)
    assert rep.max_gap < 1e-13
    rng = np.random.default_rng(5)
    for _ in range(5):
        rl, rr = np.sort(rng.uniform(0, 1, 2))
        q = ModelParams(1.0, 2, float(rl), float(rr))
        for xi in itertools.product(range(3), repeat=2):
            assert appendixA_check(q, xi).max_gap < 1e-9


@given(st.sampled_from([0.5, 1.0, 1.5]), st.lists(st.integers(0, 3), min_size=1, max_size=3),
       st.floats(0.0, 0.5), st.floats(0.0, 0.5))
def test_moment_routes_agree_property(s, xi, rl, width):
    p = ModelParams(s, len(xi), rl, rl + width)
    rep = appendixA_check(p, xi)
    assert rep.max_gap <= 1e-11 * max(1.0, abs(rep.integral))
