import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import digamma

from harmonic_ness.model import (
    Configuration,
    ModelParams,
    build_truncated_generator,
    equilibrium_product_measure,
    injection_rate,
    jump_rate,
    jump_rates,
    negbin_mgf,
    negbin_pmf,
    stationary_distribution,
    total_exit_rate,
)
from harmonic_ness.ness import mixture_probability_table

spins = st.sampled_from([0.25, 0.5, 0.65, 1.0, 1.5, 2.0, 3.0])


def test_params_validation_and_reflection():
    with pytest.raises(ValueError):
        ModelParams(0.5, 3, 0.8, 0.2)
    with pytest.raises(ValueError):
        ModelParams(0.0, 3, 0.2, 0.8)
    with pytest.raises(ValueError):
        ModelParams(0.5, 0, 0.2, 0.8)
    p = ModelParams.oriented(0.5, 3, 0.8, 0.2)
    assert (p.rho_l, p.rho_r, p.reflected) == (0.2, 0.8, True)
    assert ModelParams(1.0, 3, 0.0, 1.0).n_order == 7.0


def test_configuration_tail_counts():
    c = Configuration((1, 0, 2))
    assert c.N == 3 and c.total == 3
    assert [c.tail_count(i) for i in (1, 2, 3)] == [3, 2, 2]
    with pytest.raises(ValueError):
        Configuration((1, -1))


def test_jump_rate_examples():
    assert jump_rate(0.5, 3, 7) == pytest.approx(1 / 3, rel=1e-15)
    assert jump_rate(0.5, 1, 1) == 1.0
    assert jump_rate(1.0, 1, 1) == pytest.approx(0.5, rel=1e-15)
    assert jump_rate(1.0, 4, 3) == 0.0 and jump_rate(1.0, 0, 3) == 0.0
    # exact rational evaluation of the gamma ratio at s = 1
    exact = [Fraction(1, k) * Fraction(math.factorial(3) * math.factorial(3 - k + 1),
                                       math.factorial(3 - k) * math.factorial(4)) for k in (1, 2, 3)]
    assert [float(x) for x in exact] == pytest.approx(list(jump_rates(1.0, 3)), rel=1e-15)
    assert sum(exact) == Fraction(13, 12)


def test_total_exit_rate_examples():
    assert total_exit_rate(0.5, 3) == pytest.approx(11 / 6, rel=1e-15)
    assert total_exit_rate(0.7, 0) == 0.0
    assert total_exit_rate(1.0, 2) == pytest.approx(5 / 6, rel=1e-15)


@given(spins, st.integers(1, 600))
def test_rate_identity_against_digamma(s, n):
    total = math.fsum(jump_rates(s, n))
    ref = digamma(n + 2 * s) - digamma(2 * s)
    assert abs(total - ref) <= 1e-12 * ref
    assert abs(total_exit_rate(s, n) - ref) <= 1e-12 * ref


def test_half_spin_rates_are_reciprocals():
    for n in range(1, 201):
        r = jump_rates(0.5, n)
        assert np.array_equal(r, 1.0 / np.arange(1, n + 1))


def test_large_k_uses_log_gamma_consistently():
    assert jump_rate(1.3, 100, 200) == pytest.approx(jump_rates(1.3, 200)[99], rel=1e-12)


def test_negbin_pmf_examples():
    assert negbin_pmf(0.7, 0.4, 0) == pytest.approx((1 / 1.4) ** 1.4, rel=1e-14)
    n = np.arange(30)
    assert np.allclose(negbin_pmf(0.5, 1.0, n), 0.5 ** (n + 1), rtol=1e-14, atol=0)
    assert negbin_pmf(1.0, 0.0, 0) == 1.0 and negbin_pmf(1.0, 0.0, 3) == 0.0


@given(spins, st.floats(0.01, 3.0))
def test_negbin_normalization_and_mean(s, theta):
    cap = int(200 * (1 + theta)) + 50
    p = negbin_pmf(s, theta, np.arange(cap + 1))
    assert abs(p.sum() - 1) < 1e-10
    assert abs(np.dot(np.arange(cap + 1), p) - 2 * s * theta) < 1e-8 * (1 + theta)


def test_negbin_mgf_examples():
    assert negbin_mgf(0.8, 0.3, 0.0) == 1.0
    assert negbin_mgf(0.8, 0.0, 5.0) == 1.0
    # direct series sum of e^{hn} 2^{-(n+1)} at e^h = 3/2
    series = math.fsum(1.5**n * 0.5 ** (n + 1) for n in range(400))
    assert negbin_mgf(0.5, 1.0, math.log(1.5)) == pytest.approx(series, rel=1e-12)
    assert series == pytest.approx(2.0, rel=1e-12)
    with pytest.raises(ValueError):
        negbin_mgf(0.5, 1.0, math.log(2.0))


@given(spins, st.floats(0.05, 2.0), st.floats(-2.0, 0.7))
def test_negbin_mgf_matches_direct_sum(s, theta, frac):
    hmax = math.log1p(1 / theta)
    h = frac * hmax if frac > 0 else frac
    x = theta / (1 + theta) * math.exp(h)
    cap = int(np.ceil(60 / -math.log(x))) + 200
    n = np.arange(cap + 1)
    with np.errstate(divide="ignore"):
        terms = np.exp(h * n + np.log(negbin_pmf(s, theta, n)))
    direct = math.fsum(terms)
    assert negbin_mgf(s, theta, h) == pytest.approx(direct, rel=1e-9)


def test_injection_rate_is_log_series():
    partial = math.fsum((0.5**k) / k for k in range(1, 80))
    assert injection_rate(1.0) == pytest.approx(partial, rel=1e-14)
    assert injection_rate(1.0) == pytest.approx(math.log(2), rel=1e-15)
    assert injection_rate(0.0) == 0.0


def test_equilibrium_product_measure_examples():
    m = equilibrium_product_measure(ModelParams(0.5, 1, 1.0, 1.0), 20)
    assert np.allclose(m.probs, 0.5 ** (np.arange(21) + 1), rtol=1e-14)
    assert m.tail_mass == pytest.approx(2.0**-21, rel=1e-9)
    z = equilibrium_product_measure(ModelParams(1.0, 2, 0.0, 0.0), 5)
    assert z.probs[0, 0] == 1.0 and z.probs.sum() == 1.0
    with pytest.raises(ValueError):
        equilibrium_product_measure(ModelParams(1.0, 2, 0.1, 0.2), 5)


@pytest.mark.parametrize("N,s,rho", [(1, 0.5, 1.0), (2, 1.0, 0.4), (3, 0.5, 0.3), (2, 1.5, 0.7)])
def test_equilibrium_stationarity_below_leak(N, s, rho):
    params = ModelParams(s, N, rho, rho)
    gen = build_truncated_generator(params, 15)
    mu = equilibrium_product_measure(params, 15).probs.ravel()
    res = np.max(np.abs(gen.left_residual(mu)))
    assert res <= gen.leak_mass(mu) + 1e-15
    # reversibility: every dropped transition has a dropped reverse, so the
    # conservative generator balances the restricted product measure exactly
    assert res < 1e-14


def test_generator_rows():
    params = ModelParams(0.5, 2, 0.2, 0.8)
    gen = build_truncated_generator(params, 6)
    rows = np.asarray(gen.matrix.sum(axis=1)).ravel()
    assert np.max(np.abs(rows)) < 1e-12
    sub = build_truncated_generator(params, 6, conservative=False)
    rows = np.asarray(sub.matrix.sum(axis=1)).ravel()
    assert np.all(rows <= 1e-12)
    assert np.allclose(rows, -sub.leak, atol=1e-12)
    # from the empty state only injections larger than the cap are lost
    xl, xr = 0.2 / 1.2, 0.8 / 1.8
    tail = math.fsum((xl**k + xr**k) / k for k in range(7, 400))
    assert sub.leak[0] == pytest.approx(tail, rel=1e-12)


def test_generator_empty_site_injection_rate():
    params = ModelParams(0.5, 1, 0.0, 1.0)
    gen = build_truncated_generator(params, 400)
    out = -gen.matrix[0, 0]
    # the only channel from the empty state is injection on the right
    assert out == pytest.approx(math.log(2.0), rel=1e-12)


def test_generator_size_guard():
    with pytest.raises(MemoryError):
        build_truncated_generator(ModelParams(0.5, 8, 0.2, 0.8), 20, max_states=10**6)


def test_generator_null_vector_geometric():
    params = ModelParams(0.5, 1, 1.0, 1.0)
    pi = stationary_distribution(params, 30)
    geo = 0.5 ** (np.arange(31) + 1)
    assert np.max(np.abs(pi[:20] - geo[:20] / geo.sum())) < 1e-10


def test_stationary_solve_matches_mixture():
    params = ModelParams(0.5, 2, 0.2, 0.8)
    pi = stationary_distribution(params, 25).reshape(26, 26)
    mix = mixture_probability_table(params, 10)
    mask = np.indices((11, 11)).sum(axis=0) <= 10
    assert np.max(np.abs(pi[:11, :11] - mix)[mask]) < 1e-8
