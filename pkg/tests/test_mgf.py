import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from harmonic_ness.model import ModelParams, negbin_mgf
from harmonic_ness.mgf import (
    DomainError,
    c_map,
    g_function,
    g_transform_check,
    laplace_ghat,
    mgf,
    mgf_constant,
    phi_constant_recurrence,
    phi_finite_sum,
    phi_finite_sum_s1,
    phi_nested_integral,
    phi_recurrence_v,
    phi_unnested_sum,
)

ALL_METHODS = ("sum", "integral", "unnested", "mixture")


def test_c_map_examples():
    p = ModelParams(0.5, 2, 0.0, 1.0)
    assert c_map(p, [math.log(0.5)] * 2) == pytest.approx([1 / 3, 1 / 3], rel=1e-15)
    assert np.all(c_map(p, [0.0, 0.0]) == 0.0)
    with pytest.raises(DomainError):
        c_map(p, [math.log(2.0), 0.0])


@pytest.mark.parametrize("s", [0.5, 1.0, 1.5])
@pytest.mark.parametrize("c", [-0.7, 0.2, 0.6])
def test_single_site_is_hypergeometric(s, c):
    ref = float(mpmath.hyp2f1(2 * s, 2 * s, 4 * s, c))
    assert phi_unnested_sum([c], s).value == pytest.approx(ref, rel=1e-12)
    assert phi_nested_integral([c], s).value == pytest.approx(ref, rel=1e-12)
    assert phi_constant_recurrence(c, s, 1).value == pytest.approx(ref, rel=1e-12)


def test_frozen_two_site_value():
    frozen = 1.41352239592997648294494341638
    for form in ("nested", "unnested"):
        assert phi_nested_integral([0.3, 0.3], 0.5, form=form).value == pytest.approx(frozen, rel=1e-12)
    assert phi_unnested_sum([0.3, 0.3], 0.5).value == pytest.approx(frozen, rel=1e-12)
    assert phi_finite_sum(0.3, 0.5, 2).value == pytest.approx(frozen, rel=1e-12)


def test_nested_and_unnested_agree_for_mixed_signs():
    c = [0.4, -0.6, 0.1]
    a = phi_nested_integral(c, 1.0, form="nested").value
    b = phi_nested_integral(c, 1.0, form="unnested").value
    d = phi_unnested_sum(c, 1.0).value
    assert a == pytest.approx(b, rel=1e-10) and a == pytest.approx(d, rel=1e-10)


def test_mgf_zero_field_is_one():
    p = ModelParams(0.75, 3, 0.1, 0.9)
    for m in ALL_METHODS:
        assert mgf(p, np.zeros(3), method=m) == pytest.approx(1.0, abs=1e-12)


def test_mgf_single_site_closed_form():
    rl, rr, h = 0.2, 0.8, -0.4
    p = ModelParams(0.5, 1, rl, rr)
    a = -math.expm1(h)
    ref = math.log((1 + rr * a) / (1 + rl * a)) / ((rr - rl) * a)
    for m in ALL_METHODS:
        assert mgf(p, [h], method=m) == pytest.approx(ref, rel=1e-11)


def test_mgf_frozen_two_site_value():
    p = ModelParams(0.5, 2, 0.2, 0.8)
    frozen = 0.942081975229381818962506939078
    for m in ALL_METHODS:
        assert mgf(p, [0.1, -0.2], method=m) == pytest.approx(frozen, rel=1e-11)


def test_mgf_equilibrium_is_product():
    p = ModelParams(1.0, 3, 0.4, 0.4)
    h = [0.1, -0.3, 0.2]
    ref = math.prod(negbin_mgf(1.0, 0.4, x) for x in h)
    assert mgf(p, h) == pytest.approx(ref, rel=1e-14)


def test_mgf_moments_by_differentiation():
    p = ModelParams(1.0, 3, 0.1, 0.7)
    eps = 1e-5
    for i in range(3):
        e = np.zeros(3)
        e[i] = eps
        d = (mgf(p, e) - mgf(p, -e)) / (2 * eps)
        assert d == pytest.approx(p.mean_profile()[i], rel=1e-7)


@pytest.mark.filterwarnings("ignore:field exceeds")
@given(st.integers(1, 4), st.sampled_from([0.5, 1.0]),
       st.lists(st.floats(-1.0, 0.2), min_size=4, max_size=4))
def test_mgf_routes_agree(N, s, hs):
    p = ModelParams(s, N, 0.2, 0.8)
    vals = [mgf(p, hs[:N], method=m) for m in ALL_METHODS]
    assert max(vals) - min(vals) <= 1e-8 * max(vals)


def test_constant_field_routes():
    p = ModelParams(1.0, 4, 0.2, 0.8)
    ref = mgf_constant(p, -0.5, method="integral")
    assert mgf_constant(p, -0.5, method="recurrence") == pytest.approx(ref, rel=1e-10)
    assert mgf_constant(p, -0.5, method="finite") == pytest.approx(ref, rel=1e-10)
    with pytest.raises(ValueError):
        mgf(p, [0.1, 0.0, 0.0, 0.0], method="recurrence")


@pytest.mark.parametrize("c", [0.1, 0.5, 0.9])
def test_half_spin_power_law(c):
    base = -math.log1p(-c) / c
    for N in (1, 5, 12):
        assert phi_constant_recurrence(c, 0.5, N).value == pytest.approx(base**N, rel=1e-10)


def test_recurrence_monotone_in_c():
    cs = np.linspace(-0.9, 0.9, 13)
    vals = [phi_constant_recurrence(c, 1.0, 3).value for c in cs]
    assert np.all(np.diff(vals) > 0)


@pytest.mark.parametrize("N", [1, 2, 4, 6])
@pytest.mark.parametrize("c", [0.01, 0.3, 0.8])
def test_finite_sum_spin_one(N, c):
    a = phi_finite_sum(c, 1.0, N).value
    assert a == pytest.approx(phi_finite_sum_s1(c, N), rel=1e-12)
    assert a == pytest.approx(phi_constant_recurrence(c, 1.0, N).value, rel=1e-9)


def test_finite_sum_integer_three_halves_spin():
    assert phi_finite_sum(0.4, 1.5, 3).value == pytest.approx(
        phi_constant_recurrence(0.4, 1.5, 3).value, rel=1e-9)


def test_finite_sum_small_c_uses_series():
    r = phi_finite_sum(1e-4, 1.0, 3)
    assert r.value == pytest.approx(phi_unnested_sum([1e-4] * 3, 1.0).value, rel=1e-14)


def test_domain_errors():
    with pytest.raises(DomainError):
        phi_finite_sum(-0.5, 1.0, 2)
    with pytest.raises(DomainError):
        phi_constant_recurrence(1.0, 1.0, 2)
    with pytest.raises(ValueError):
        phi_finite_sum(0.5, 0.65, 2)
    with pytest.raises(DomainError):
        laplace_ghat(1.0, 2, 0.5)
    p = ModelParams(0.5, 1, 0.0, 1.0)
    with pytest.raises(DomainError):
        mgf(p, [math.log(2.5)])


def test_v_recurrence_matches_c_recurrence():
    v = np.array([0.3, 1.0, 2.5])
    c = -np.expm1(-2 * v)
    got = phi_recurrence_v(v, 1.0, 3)
    exact = [phi_finite_sum_s1(float(ci), 3) for ci in c]
    assert np.allclose(got, exact, rtol=1e-10)
    # the c-grid recurrence degrades near c = 1 but its indicator says so
    for ci, ex in zip(c, exact):
        r = phi_constant_recurrence(float(ci), 1.0, 3)
        assert abs(r.value - ex) <= max(r.error, 1e-9 * ex)


def test_laplace_closed_forms():
    alpha = np.array([1.5, 3.0, 7.0])
    for N in (1, 3):
        assert laplace_ghat(0.5, N, alpha) == pytest.approx(
            math.factorial(N) / alpha ** (N + 1), rel=1e-12)
        a2 = np.array([2.5, 4.0])
        assert laplace_ghat(1.0, N, a2) == pytest.approx(
            2 * math.gamma(2 * N + 2) * (a2**2 - 1) ** (-(N + 1)), rel=1e-12)


def test_g_function_half_spin_is_power():
    v = np.array([0.2, 1.0, 3.0])
    assert g_function(v, 0.5, 3) == pytest.approx(v**3, rel=1e-9)


def test_numerical_laplace_transform():
    for N in (1, 4):
        rows = g_transform_check(1.0, N, [2.5, 5.0])
        assert max(r["rel_gap"] for r in rows) < 1e-6
