"""Exact non-equilibrium steady state.

Three independent routes to the stationary law ``mu`` are provided:

* the alternating reconstruction from scaled factorial moments
  (:func:`ness_probability`), valid for ``rho_r < 1``;
* the Negative-Binomial mixture over ordered Dirichlet chemical potentials
  (:func:`mixture_probability`), the primary route;
* an expansion of each Negative-Binomial factor around ``rho_r`` whose
  coefficients are the closed-form moments ``E[prod (rho_r - theta_i)^m_i]``
  (:func:`ness_probability_expansion`), convergent for every ``rho``.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy import integrate
from scipy.special import betaln, gammaln

from .model import ModelParams, negbin_pmf
from .quadrature import default_nodes, dirichlet_cumulative_rule

__all__ = [
    "TruncationWarning",
    "SeriesResult",
    "MixtureDraw",
    "EquivalenceReport",
    "f_weight",
    "f_product",
    "log_f_product_table",
    "factorial_moment",
    "factorial_moment_table",
    "ness_probability",
    "ness_probability_table",
    "ness_probability_expansion",
    "mixture_probability",
    "mixture_probability_table",
    "mixture_expectation",
    "sample_mixture",
    "marginal_distribution",
    "appendixA_check",
]


class TruncationWarning(RuntimeWarning):
    """A truncated series has not settled to the requested tolerance."""


@dataclass
class SeriesResult:
    """Value of a truncated series or quadrature with an error indicator."""

    value: float
    error: float

    def __float__(self):
        return float(self.value)


@dataclass
class MixtureDraw:
    """Ordered chemical potentials and the configuration drawn given them."""

    thetas: np.ndarray
    eta: np.ndarray


@dataclass
class EquivalenceReport:
    """Moment of order ``xi`` by three routes and their pairwise gaps."""

    xi: tuple
    moment_sum: float
    integral: float
    closed_form: float
    gaps: dict = field(default_factory=dict)

    @property
    def max_gap(self) -> float:
        return max(self.gaps.values()) if self.gaps else 0.0

    def to_dict(self) -> dict:
        return {"xi": list(self.xi), "moment_sum": self.moment_sum,
                "integral": self.integral, "closed_form": self.closed_form,
                "gaps": dict(self.gaps), "max_gap": self.max_gap}


# ---------------------------------------------------------------------------
# weights f_i and their product F
# ---------------------------------------------------------------------------

def _tail_counts(eta) -> list:
    out, acc = [], 0
    for v in reversed(eta):
        acc += v
        out.append(acc)
    return out[::-1]


def f_weight(params: ModelParams, i: int, eta) -> float:
    """Weight ``f_i(eta)`` entering the factorial moments (1-based ``i``)."""
    N, two_s = params.N, params.two_s
    if not 1 <= i <= N:
        raise ValueError(f"site index {i} outside 1..{N}")
    eta = tuple(int(v) for v in eta)
    m = eta[i - 1]
    if m == 0:
        return 1.0
    tail = sum(eta[i - 1:])
    A = two_s * (N + 1 - i) + tail
    B = two_s * (N + 1) + tail
    if m <= 30:
        out = 1.0
        for j in range(1, m + 1):
            out *= (A - j) / (B - j)
        return out
    # prod_{j<=m} (A - j) = Gamma(A) / Gamma(A - m)
    return math.exp(math.lgamma(A) - math.lgamma(A - m) - math.lgamma(B) + math.lgamma(B - m))


def f_product(params: ModelParams, eta) -> float:
    """``F(eta) = prod_i f_i(eta)``, which equals ``E[prod (1 - V_i)^eta_i]``."""
    out = 1.0
    for i in range(1, params.N + 1):
        out *= f_weight(params, i, eta)
    return out


def log_f_product_table(s: float, N: int, cap: int) -> np.ndarray:
    """``log F`` on the box ``{0..cap}^N`` via the telescoped gamma form."""
    two_s = 2.0 * s
    idx = np.indices((cap + 1,) * N, dtype=float)
    tails = np.flip(np.cumsum(np.flip(idx, axis=0), axis=0), axis=0)
    out = np.full(idx.shape[1:], gammaln(two_s * (N + 1)) - gammaln(two_s))
    for i in range(1, N + 1):
        t = tails[i - 1]
        out += gammaln(two_s * (N + 1 - i) + t) - gammaln(two_s * (N + 2 - i) + t)
    return out


def _mp_f_product_table(s, N: int, cap: int) -> np.ndarray:
    two_s = 2 * mpmath.mpf(s)
    out = np.empty((cap + 1,) * N, dtype=object)
    for eta in itertools.product(range(cap + 1), repeat=N):
        tails = _tail_counts(eta)
        val = mpmath.mpf(1)
        for i in range(1, N + 1):
            m = eta[i - 1]
            if m:
                A = two_s * (N + 1 - i) + tails[i - 1]
                B = two_s * (N + 1) + tails[i - 1]
                val *= mpmath.rf(A - m, m) / mpmath.rf(B - m, m)
        out[eta] = val
    return out


# ---------------------------------------------------------------------------
# factorial moments
# ---------------------------------------------------------------------------

def factorial_moment(params: ModelParams, xi) -> float:
    """Scaled factorial moment ``G(xi)`` as the finite alternating sum over
    ``eta <= xi``."""
    xi = tuple(int(v) for v in xi)
    if len(xi) != params.N or min(xi) < 0:
        raise ValueError("xi must be a vector of N nonnegative integers")
    rl, rr = params.rho_l, params.rho_r
    total = sum(xi)
    terms = []
    for eta in itertools.product(*[range(x + 1) for x in xi]):
        k = sum(eta)
        coef = rr ** (total - k) * (rl - rr) ** k
        if coef == 0.0:
            continue
        binom = 1
        for x, e in zip(xi, eta):
            binom *= math.comb(x, e)
        terms.append(coef * binom * f_product(params, eta))
    return math.fsum(terms)


def _axis_apply(T: np.ndarray, M: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(M, T, axes=([1], [axis])), 0, axis)


def _binomial_shift_matrix(K: int, x, mp: bool = False) -> np.ndarray:
    # B[a, b] = C(a, b) x^(a - b) for b <= a
    if mp:
        B = np.full((K + 1, K + 1), mpmath.mpf(0), dtype=object)
        x = mpmath.mpf(x)
    else:
        B = np.zeros((K + 1, K + 1))
    for a in range(K + 1):
        for b in range(a + 1):
            B[a, b] = math.comb(a, b) * x ** (a - b)
    return B


def factorial_moment_table(params: ModelParams, cap: int, dps: int | None = None) -> np.ndarray:
    """``G(xi)`` for every ``xi`` in the box ``{0..cap}^N``.

    Uses the separable structure of the alternating sum: a binomial shift by
    ``rho_r`` along each axis applied to ``(rho_l - rho_r)^|eta| F(eta)``.
    With ``dps`` set, arithmetic is done by mpmath at that many digits and an
    object array of ``mpf`` is returned.
    """
    N = params.N
    idx_sum = np.indices((cap + 1,) * N).sum(axis=0)
    if dps is None:
        base = np.exp(log_f_product_table(params.s, N, cap))
        delta = params.rho_l - params.rho_r
        base = base * np.power(delta, idx_sum)
        B = _binomial_shift_matrix(cap, params.rho_r)
        for ax in range(N):
            base = _axis_apply(base, B, ax)
        return base
    with mpmath.workdps(dps):
        F = _mp_f_product_table(params.s, N, cap)
        delta = mpmath.mpf(params.rho_l) - mpmath.mpf(params.rho_r)
        pw = np.array([delta**k for k in range(N * cap + 1)], dtype=object)
        base = F * pw[idx_sum]
        B = _binomial_shift_matrix(cap, params.rho_r, mp=True)
        for ax in range(N):
            base = _axis_apply(base, B, ax)
        return base


# ---------------------------------------------------------------------------
# alternating reconstruction of mu
# ---------------------------------------------------------------------------

def _reconstruction_matrix(s, K: int, rows: int, mp: bool = False) -> np.ndarray:
    # D[n, x] = (-1)^(x - n) C(x, n) Gamma(2s + x) / (Gamma(2s) x!)  for x >= n
    if mp:
        D = np.full((rows + 1, K + 1), mpmath.mpf(0), dtype=object)
        two_s = 2 * mpmath.mpf(s)
        g = [mpmath.rf(two_s, x) / mpmath.factorial(x) for x in range(K + 1)]
    else:
        D = np.zeros((rows + 1, K + 1))
        x = np.arange(K + 1)
        g = np.exp(gammaln(2.0 * s + x) - gammaln(2.0 * s) - gammaln(x + 1.0))
    for n in range(rows + 1):
        for x in range(n, K + 1):
            D[n, x] = (-1) ** (x - n) * math.comb(x, n) * g[x]
    return D


def ness_probability_table(params: ModelParams, xi_cap: int, eta_cap: int | None = None,
                           dps: int | None = None, tol: float = 1e-10,
                           return_shell: bool = False):
    """Alternating reconstruction of ``mu`` on ``{0..eta_cap}^N``.

    The sum over ``xi >= eta`` is truncated to the box ``{0..xi_cap}^N``.
    The last-shell indicator is the change produced by the outermost layer
    ``max_i xi_i = xi_cap``; a :class:`TruncationWarning` is issued when it
    exceeds ``tol``.  The series converges only for ``rho_r < 1``; for
    ``rho_r`` near 1 or large ``xi_cap`` set ``dps`` to beat cancellation.
    """
    N = params.N
    if eta_cap is None:
        eta_cap = xi_cap
    if eta_cap > xi_cap:
        raise ValueError("xi_cap must be at least the largest occupation requested")
    if params.rho_r >= 1.0:
        warnings.warn("the factorial-moment reconstruction diverges for rho_r >= 1",
                      TruncationWarning, stacklevel=2)
    G = factorial_moment_table(params, xi_cap, dps=dps)
    mp = dps is not None
    ctx = mpmath.workdps(dps) if mp else _nullctx()
    with ctx:
        D = _reconstruction_matrix(params.s, xi_cap, eta_cap, mp=mp)
        mu = G
        for ax in range(N):
            mu = _axis_apply(mu, D, ax)
        Gi = G[(slice(0, xi_cap),) * N]
        mu_inner = Gi
        for ax in range(N):
            mu_inner = _axis_apply(mu_inner, D[:, :xi_cap], ax)
        shell = mu - mu_inner
        mu = np.asarray(mu, dtype=float) if mp else mu
        shell = np.abs(np.asarray(shell, dtype=float))
    last = float(shell.max()) if shell.size else 0.0
    if not math.isfinite(last) or last > tol:
        warnings.warn(f"last-shell magnitude {last:.3g} exceeds tolerance {tol:.3g}",
                      TruncationWarning, stacklevel=2)
    if return_shell:
        return mu, shell
    return mu


class _nullctx:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def ness_probability(params: ModelParams, eta, xi_cap: int, dps: int | None = None,
                     tol: float = 1e-10) -> SeriesResult:
    """``mu(eta)`` by the alternating factorial-moment series."""
    eta = tuple(int(v) for v in eta)
    if len(eta) != params.N or min(eta) < 0:
        raise ValueError("eta must be a vector of N nonnegative integers")
    if xi_cap < max(eta):
        raise ValueError("xi_cap must be at least max(eta)")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", TruncationWarning)
        mu, shell = ness_probability_table(params, xi_cap, eta_cap=max(eta), dps=dps,
                                           tol=math.inf, return_shell=True)
    for w in caught:
        if "diverges" in str(w.message):
            warnings.warn(w.message, TruncationWarning, stacklevel=2)
    res = SeriesResult(float(mu[eta]), float(shell[eta]))
    if not math.isfinite(res.error) or res.error > tol:
        warnings.warn(f"last-shell magnitude {res.error:.3g} exceeds tolerance {tol:.3g}",
                      TruncationWarning, stacklevel=2)
    return res


# ---------------------------------------------------------------------------
# expansion around rho_r (closed-form moment route)
# ---------------------------------------------------------------------------

def _expansion_kernel(s: float, rho_r: float, M: int, n_max: int) -> np.ndarray:
    # K[n, m] = [z^n] (1 - z)^m (1 + rho_r (1 - z))^(-2s - m), times the
    # Negative-Binomial coefficient Gamma(2s + m)/(m! Gamma(2s))
    two_s = 2.0 * s
    x = rho_r / (1.0 + rho_r)
    m = np.arange(M + 1, dtype=float)
    K = np.zeros((n_max + 1, M + 1))
    lognb = gammaln(two_s + m) - gammaln(two_s) - gammaln(m + 1.0)
    base = -(two_s + m) * math.log1p(rho_r)
    for n in range(n_max + 1):
        acc = np.zeros(M + 1)
        for l in range(n + 1):
            j = n - l
            # C(m, l) vanishes for l > m
            logc = np.where(m >= l, gammaln(m + 1.0) - gammaln(l + 1.0)
                            - gammaln(np.maximum(m - l, 0) + 1.0), -np.inf)
            logr = gammaln(two_s + m + j) - gammaln(two_s + m) - gammaln(j + 1.0)
            xj = x**j
            acc += (-1) ** l * np.exp(logc + logr + lognb + base) * xj
        K[n] = acc
    return K


def ness_probability_expansion(params: ModelParams, eta_cap: int, order: int | None = None,
                               tol: float = 1e-13) -> np.ndarray:
    """``mu`` on ``{0..eta_cap}^N`` from the expansion of each factor around
    ``rho_r``.

    The coefficient of ``prod (rho_r - theta_i)^m_i`` integrates to
    ``(rho_r - rho_l)^|m| F(m)``, so every term is explicit.  The series
    converges geometrically with ratio ``(rho_r - rho_l)/(1 + rho_r)``.
    """
    N = params.N
    delta = params.rho_r - params.rho_l
    if delta == 0.0:
        return _product_table(params, eta_cap)
    ratio = delta / (1.0 + params.rho_r)
    if order is None:
        # ratio^M * M^(2s + eta_cap) below tol, with headroom
        order = eta_cap + 10
        while ratio**order * (order + 1.0) ** (params.two_s + eta_cap + N) > tol and order < 2000:
            order += 5
    M = int(order)
    A = np.exp(log_f_product_table(params.s, N, M)
               + np.indices((M + 1,) * N).sum(axis=0) * math.log(delta))
    K = _expansion_kernel(params.s, params.rho_r, M, eta_cap)
    out = A
    for ax in range(N):
        out = _axis_apply(out, K, ax)
    return out


def _product_table(params: ModelParams, cap: int) -> np.ndarray:
    marg = negbin_pmf(params.s, params.rho_l, np.arange(cap + 1))
    out = np.asarray(marg)
    for _ in range(params.N - 1):
        out = np.multiply.outer(out, marg)
    return out.reshape((cap + 1,) * params.N)


# ---------------------------------------------------------------------------
# mixture representation
# ---------------------------------------------------------------------------

def _negbin_site_table(s: float, thetas: np.ndarray, cap: int) -> np.ndarray:
    # nu_theta(n) for every node theta (any shape) and n = 0..cap, last axis n
    two_s = 2.0 * s
    n = np.arange(cap + 1, dtype=float)
    th = thetas[..., None]
    with np.errstate(divide="ignore"):
        logp = (gammaln(two_s + n) - gammaln(two_s) - gammaln(n + 1.0)
                + np.where(n > 0, n * np.log(np.where(th > 0, th, 1.0)), 0.0)
                - (n + two_s) * np.log1p(th))
    out = np.exp(logp)
    return np.where((th == 0) & (n > 0), 0.0, out)


def mixture_expectation(params: ModelParams, func, n_nodes: int | None = None,
                        layout: str = "backward") -> float:
    """``E[func(theta)]`` under the ordered Dirichlet mixing law.

    ``func`` maps an ``(M, N)`` array of chemical potentials to ``M`` values.
    """
    V, w = dirichlet_cumulative_rule(params.s, params.N, n_nodes, layout=layout)
    theta = params.rho_l + (params.rho_r - params.rho_l) * V
    return float(np.dot(w, func(theta)))


def _mixture_box(params: ModelParams, cap: int, n_nodes: int, layout="backward") -> np.ndarray:
    V, w = dirichlet_cumulative_rule(params.s, params.N, n_nodes, layout=layout)
    theta = params.rho_l + (params.rho_r - params.rho_l) * V
    tabs = _negbin_site_table(params.s, theta, cap)  # (M, N, cap+1)
    letters = "abcdefghijklmnopqrstuvwxyz"
    subs = ",".join("m" + letters[i] for i in range(params.N))
    expr = "m," + subs + "->" + letters[:params.N]
    return np.einsum(expr, w, *[tabs[:, i, :] for i in range(params.N)], optimize=True)


def mixture_probability_table(params: ModelParams, cap: int, n_nodes: int | None = None,
                              return_error: bool = False):
    """``mu`` on the box ``{0..cap}^N`` by tensor Gauss-Jacobi quadrature.

    The error indicator is the largest change against a rule with about
    three quarters of the nodes.
    """
    if params.is_equilibrium:
        out = _product_table(params, cap)
        return (out, 0.0) if return_error else out
    if params.N > 6:
        raise ValueError("tensor quadrature is limited to N <= 6; use method='mc'")
    if n_nodes is None:
        n_nodes = default_nodes(params.N, budget=4e5)
    fine = _mixture_box(params, cap, n_nodes)
    if not return_error:
        return fine
    coarse = _mixture_box(params, cap, max(2, (3 * n_nodes) // 4))
    return fine, float(np.max(np.abs(fine - coarse)))


def mixture_probability(params: ModelParams, eta, quad_spec: dict | None = None,
                        method: str = "auto", seed=None) -> SeriesResult:
    """``mu(eta)`` from the mixture over ordered chemical potentials.

    Parameters
    ----------
    quad_spec : dict, optional
        ``{"nodes": int, "tolerance": float, "draws": int}``.
    method : {"auto", "quadrature", "mc"}
        ``"auto"`` uses quadrature for ``N <= 6`` and Monte Carlo beyond.
    """
    eta = np.asarray(eta, dtype=np.int64)
    if eta.shape != (params.N,) or eta.min() < 0:
        raise ValueError("eta must be a vector of N nonnegative integers")
    spec = dict(quad_spec or {})
    if params.is_equilibrium:
        val = float(np.prod([negbin_pmf(params.s, params.rho_l, int(k)) for k in eta]))
        return SeriesResult(val, 0.0)
    if method == "auto":
        method = "quadrature" if params.N <= 6 else "mc"
    if method == "mc":
        draws = int(spec.get("draws", 200_000))
        rng = np.random.default_rng(seed)
        theta = _dirichlet_thetas(params, rng, draws)
        vals = np.ones(draws)
        for i in range(params.N):
            vals *= _negbin_site_table(params.s, theta[:, i], int(eta[i]))[:, -1]
        return SeriesResult(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(draws)))
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    if params.N > 6:
        raise ValueError("tensor quadrature is limited to N <= 6")
    n = int(spec.get("nodes", default_nodes(params.N, budget=4e5)))
    tol = float(spec.get("tolerance", 1e-10))

    def _integrand(theta):
        out = np.ones(theta.shape[0])
        for i in range(params.N):
            out *= _negbin_site_table(params.s, theta[:, i], int(eta[i]))[:, -1]
        return out

    fine = mixture_expectation(params, _integrand, n)
    coarse = mixture_expectation(params, _integrand, max(2, (3 * n) // 4))
    err = abs(fine - coarse)
    if err > tol:
        warnings.warn(f"mixture quadrature error estimate {err:.3g} exceeds {tol:.3g}",
                      TruncationWarning, stacklevel=2)
    return SeriesResult(fine, err)


def _dirichlet_thetas(params: ModelParams, rng: np.random.Generator, size: int) -> np.ndarray:
    g = rng.standard_gamma(params.two_s, size=(size, params.N + 1))
    R = g / g.sum(axis=1, keepdims=True)
    V = np.cumsum(R[:, :params.N], axis=1)
    np.minimum(V, 1.0, out=V)
    return params.rho_l + (params.rho_r - params.rho_l) * V


def sample_mixture(params: ModelParams, seed=None, size: int | None = None) -> MixtureDraw:
    """Draw ordered chemical potentials and a configuration from the NESS.

    With ``size`` set, ``thetas`` and ``eta`` carry a leading sample axis.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = 1 if size is None else int(size)
    theta = _dirichlet_thetas(params, rng, n)
    eta = rng.negative_binomial(params.two_s, 1.0 / (1.0 + theta))
    if size is None:
        return MixtureDraw(thetas=theta[0], eta=eta[0])
    return MixtureDraw(thetas=theta, eta=eta)


def marginal_distribution(params: ModelParams, i: int, cap: int) -> np.ndarray:
    """Law of ``eta_i`` on ``{0..cap}`` by adaptive 1-D quadrature against the
    ``Beta(2s i, 2s(N + 1 - i))`` law of ``V_i``."""
    if not 1 <= i <= params.N:
        raise ValueError(f"site index {i} outside 1..{params.N}")
    if params.is_equilibrium:
        return np.asarray(negbin_pmf(params.s, params.rho_l, np.arange(cap + 1)))
    two_s = params.two_s
    a, b = two_s * i, two_s * (params.N + 1 - i)
    lognorm = betaln(a, b)
    rl, delta = params.rho_l, params.rho_r - params.rho_l
    out = np.empty(cap + 1)
    for m in range(cap + 1):
        def f(v, m=m):
            return negbin_pmf(params.s, rl + delta * v, m)
        val, _ = integrate.quad(f, 0.0, 1.0, weight="alg", wvar=(a - 1.0, b - 1.0),
                                epsabs=1e-14, epsrel=1e-12, limit=200)
        out[m] = val * math.exp(-lognorm)
    return out


# ---------------------------------------------------------------------------
# equivalence of the moment representations
# ---------------------------------------------------------------------------

def _closed_form_moment(params: ModelParams, xi) -> float:
    # G(xi) = sum_{eta <= xi} C(xi, eta) rho_r^(xi - eta) mu''(eta) eta! Gamma(2s)/Gamma(2s + eta)
    # with mu'' in telescoped gamma form
    two_s, N = params.two_s, params.N
    rl, rr = params.rho_l, params.rho_r
    terms = []
    for eta in itertools.product(*[range(x + 1) for x in xi]):
        k = sum(eta)
        coef = rr ** (sum(xi) - k)
        if coef == 0.0 and sum(xi) != k:
            continue
        tails = _tail_counts(eta)
        log_nb = sum(math.lgamma(two_s + e) - math.lgamma(e + 1.0) - math.lgamma(two_s)
                     for e in eta)
        log_F = math.lgamma(two_s * (N + 1)) - math.lgamma(two_s) + sum(
            math.lgamma(two_s * (N + 1 - i) + tails[i - 1])
            - math.lgamma(two_s * (N + 2 - i) + tails[i - 1]) for i in range(1, N + 1))
        mu2 = (rl - rr) ** k * math.exp(log_nb + log_F)
        binom = math.prod(math.comb(x, e) for x, e in zip(xi, eta))
        terms.append(binom * coef * mu2 * math.exp(-log_nb))
    return math.fsum(terms)


def appendixA_check(params: ModelParams, xi, n_nodes: int | None = None) -> EquivalenceReport:
    """Compare the alternating-sum moment, the ordered-simplex integral of
    ``prod theta_i^xi_i`` and the closed-form gamma-product route."""
    xi = tuple(int(v) for v in xi)
    if len(xi) != params.N or min(xi) < 0:
        raise ValueError("xi must be a vector of N nonnegative integers")
    lhs = factorial_moment(params, xi)
    if n_nodes is None:
        # exact for polynomials: degree per axis at most |xi|
        n_nodes = max(2, sum(xi) // 2 + 2)
    power = np.asarray(xi, dtype=float)
    integral = mixture_expectation(params, lambda th: np.prod(th**power, axis=1), n_nodes)
    closed = _closed_form_moment(params, xi)
    gaps = {"sum-integral": abs(lhs - integral), "sum-closed": abs(lhs - closed),
            "integral-closed": abs(integral - closed)}
    return EquivalenceReport(xi, lhs, integral, closed, gaps)
