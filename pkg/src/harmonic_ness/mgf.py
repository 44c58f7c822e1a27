"""Moment generating function of the steady state and the reduced function Phi.

``Psi(h) = prod_i (1 + rho_r (1 - e^{h_i}))^{-2s} * Phi_N(c(h))`` where
``Phi_N(c) = E[prod_i (1 - c_i (1 - V_i))^{-2s}]`` and ``V`` are the ordered
Dirichlet cumulative sums.  ``Phi_N`` is available as an N-fold sum, as a
tensor quadrature in two parameterizations, and for constant ``c`` through a
one-dimensional recurrence or (for integer ``2s``) a finite sum.
"""
from __future__ import annotations

import math
import warnings
from fractions import Fraction

import mpmath
import numpy as np
from scipy.interpolate import BarycentricInterpolator
from scipy.special import betaln, gammaln

from .model import ModelParams, negbin_mgf
from .ness import SeriesResult, TruncationWarning, mixture_expectation
from .quadrature import beta_rule, default_nodes, dirichlet_cumulative_rule

__all__ = [
    "DomainError",
    "c_map",
    "check_field",
    "phi_unnested_sum",
    "phi_nested_integral",
    "mgf",
    "mgf_constant",
    "phi_constant_recurrence",
    "phi_recurrence_v",
    "phi_finite_sum",
    "phi_finite_sum_s1",
    "g_function",
    "laplace_ghat",
    "g_transform_check",
]


class DomainError(ValueError):
    """Field outside the domain where the moment generating function is finite."""


def _one_minus_exp(h):
    return -np.expm1(np.asarray(h, dtype=float))


def check_field(params: ModelParams, h) -> np.ndarray:
    """Validate a site field; return it as an array.

    Finiteness needs ``e^{h_i} < 1 + 1/rho_r`` only.  A warning flags entries
    with ``|h_i|`` beyond ``log(1 + 1/rho_r)``, the symmetric bound.
    """
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if h.shape != (params.N,):
        raise ValueError(f"field must have {params.N} entries, got shape {h.shape}")
    base = 1.0 + params.rho_r * _one_minus_exp(h)
    if np.any(base <= 0) or not np.all(np.isfinite(h)):
        raise DomainError("field violates e^h < 1 + 1/rho_r")
    if params.rho_r > 0:
        bound = math.log1p(1.0 / params.rho_r)
        if np.any(np.abs(h) > bound):
            warnings.warn("field exceeds the symmetric admissibility bound |h| <= log(1 + 1/rho_r)",
                          RuntimeWarning, stacklevel=2)
    return h


def c_map(params: ModelParams, h) -> np.ndarray:
    """``c_i = (rho_r - rho_l)(1 - e^{h_i}) / (1 + rho_r (1 - e^{h_i}))``."""
    h = np.atleast_1d(np.asarray(h, dtype=float))
    a = _one_minus_exp(h)
    base = 1.0 + params.rho_r * a
    if np.any(base <= 0):
        raise DomainError("1 + rho_r (1 - e^h) must be positive")
    return (params.rho_r - params.rho_l) * a / base


# ---------------------------------------------------------------------------
# general c: N-fold sum and tensor quadrature
# ---------------------------------------------------------------------------

def _default_sum_cap(cmax: float, s: float, N: int, tol: float = 1e-17) -> int:
    if cmax == 0.0:
        return 0
    # terms ~ |c|^m m^(2s N); solve crudely and add headroom
    m = int(math.ceil(math.log(tol) / math.log(cmax))) + 10
    while m < 20000 and cmax**m * (m + 1.0) ** (2 * s * N) > tol:
        m = int(m * 1.2) + 5
    return min(m, 20000)


def phi_unnested_sum(c, s: float, N: int | None = None,
                     occupancy_cap: int | None = None, tol: float = 1e-12) -> SeriesResult:
    """N-fold sum for ``Phi_N(c)``, truncated at total occupation ``occupancy_cap``.

    The sum over ``eta`` factorizes through the tail counts
    ``m_i = eta_i + ... + eta_N``; it is evaluated as a backward convolution
    over sites, ``O(N M^2)``.  The error indicator is the magnitude of the
    last shell ``|eta| = M``.
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if N is None:
        N = c.size
    if c.size == 1 and N > 1:
        c = np.full(N, c[0])
    if c.shape != (N,):
        raise ValueError("c must have N entries")
    cmax = float(np.max(np.abs(c)))
    if cmax >= 1.0:
        raise DomainError("the N-fold sum needs max |c_i| < 1")
    M = _default_sum_cap(cmax, s, N) if occupancy_cap is None else int(occupancy_cap)
    two_s = 2.0 * s
    m = np.arange(M + 1, dtype=float)
    lognb = gammaln(two_s + m) - gammaln(two_s) - gammaln(m + 1.0)
    W = np.zeros(M + 1)
    W[0] = 1.0
    for i in range(N, 0, -1):
        logc = np.log(abs(c[i - 1])) if c[i - 1] != 0 else -np.inf
        sgn = -1.0 if c[i - 1] < 0 else 1.0
        with np.errstate(invalid="ignore"):
            site = np.where(m == 0, 1.0, np.exp(lognb + m * logc) * sgn**m)
        W = np.convolve(site, W)[:M + 1]
        a, b = two_s * (N + 1 - i), two_s * (N + 2 - i)
        # ratio Gamma(a + m)/Gamma(b + m), normalized to 1 at m = 0
        W *= np.exp(gammaln(a + m) - gammaln(a) - gammaln(b + m) + gammaln(b))
    value = math.fsum(W)
    shell = abs(W[M]) if M > 0 else 0.0
    if shell > tol:
        warnings.warn(f"N-fold sum last shell {shell:.3g} exceeds {tol:.3g}; increase the cap",
                      TruncationWarning, stacklevel=2)
    return SeriesResult(value, shell)


def phi_nested_integral(c, s: float, N: int | None = None, quad_spec: dict | None = None,
                        form: str = "nested") -> SeriesResult:
    """``Phi_N(c)`` as an integral over the ordered simplex.

    ``form="nested"`` integrates layer by layer in the ordered variables
    ``u_1 <= ... <= u_N`` (affine maps of each layer onto ``[u_{i-1}, 1]``);
    ``form="unnested"`` integrates over independent ``t_i in [0, 1]`` with
    ``1 - u_i = t_1 ... t_i``.  Both carry the endpoint exponents in the
    Gauss-Jacobi weights.
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if N is None:
        N = c.size
    if c.size == 1 and N > 1:
        c = np.full(N, c[0])
    if np.any(c >= 1.0):
        raise DomainError("the integral representation needs c_i < 1")
    spec = dict(quad_spec or {})
    n = int(spec.get("nodes", default_nodes(N, budget=2e5)))
    layout = {"nested": "forward", "unnested": "backward"}.get(form)
    if layout is None:
        raise ValueError(f"unknown form {form!r}")

    def _eval(nn):
        V, w = dirichlet_cumulative_rule(s, N, nn, layout=layout)
        vals = np.prod((1.0 - c * (1.0 - V)) ** (-2.0 * s), axis=1)
        return float(np.dot(w, vals))

    fine = _eval(n)
    coarse = _eval(max(2, (3 * n) // 4))
    return SeriesResult(fine, abs(fine - coarse))


def mgf(params: ModelParams, h, method: str = "integral", quad_spec: dict | None = None) -> float:
    """``Psi(h) = E[exp(sum_i h_i eta_i)]`` in the steady state.

    Parameters
    ----------
    method : {"sum", "integral", "unnested", "mixture", "recurrence", "finite"}
        ``"mixture"`` averages the Negative-Binomial generating functions over
        the mixing law directly.  ``"recurrence"`` and ``"finite"`` require a
        constant field.
    """
    h = check_field(params, h)
    if params.is_equilibrium:
        return float(np.prod([negbin_mgf(params.s, params.rho_l, hi) for hi in h]))
    spec = dict(quad_spec or {})
    if method == "mixture":
        a = _one_minus_exp(h)
        n = int(spec.get("nodes", default_nodes(params.N, budget=2e5)))
        return mixture_expectation(
            params, lambda th: np.prod((1.0 + th * a) ** (-params.two_s), axis=1), n)
    pref = float(np.exp(-params.two_s * np.sum(np.log1p(params.rho_r * _one_minus_exp(h)))))
    c = c_map(params, h)
    if method == "sum":
        return pref * phi_unnested_sum(c, params.s, params.N,
                                       spec.get("occupancy_cap")).value
    if method in ("integral", "nested"):
        return pref * phi_nested_integral(c, params.s, params.N, spec, form="nested").value
    if method == "unnested":
        return pref * phi_nested_integral(c, params.s, params.N, spec, form="unnested").value
    if method in ("recurrence", "finite"):
        if not np.all(h == h[0]):
            raise ValueError(f"method {method!r} needs a constant field")
        if method == "recurrence":
            return pref * phi_constant_recurrence(c[0], params.s, params.N, spec).value
        return pref * phi_finite_sum(c[0], params.s, params.N).value
    raise ValueError(f"unknown method {method!r}")


def mgf_constant(params: ModelParams, h: float, method: str = "recurrence",
                 quad_spec: dict | None = None) -> float:
    """``Psi`` at the constant field ``(h, ..., h)``."""
    return mgf(params, np.full(params.N, float(h)), method=method, quad_spec=quad_spec)


# ---------------------------------------------------------------------------
# constant c: recurrence in c and in v = -log(1 - c)/2
# ---------------------------------------------------------------------------

def _cheb_points(lo: float, hi: float, degree: int) -> np.ndarray:
    k = np.arange(degree + 1)
    return lo + 0.5 * (hi - lo) * (1.0 + np.cos(np.pi * k / degree))


def _recurrence_c(c: float, s: float, N: int, degree: int, nodes: int) -> float:
    if N == 0 or c == 0.0:
        return 1.0
    two_s = 2.0 * s
    lo, hi = min(0.0, c), max(0.0, c)
    y = _cheb_points(lo, hi, degree)
    vals = np.ones_like(y)
    for k in range(1, N + 1):
        t, w = beta_rule(two_s * k, two_s, nodes)
        interp = BarycentricInterpolator(y, vals)
        if k == N:
            return float(np.dot(w, (1.0 - c * t) ** (-two_s) * interp(c * t)))
        pts = np.outer(y, t)
        vals = ((1.0 - pts) ** (-two_s) * interp(pts.ravel()).reshape(pts.shape)) @ w
    return float(vals[0])


def phi_constant_recurrence(c: float, s: float, N: int,
                            quad_spec: dict | None = None) -> SeriesResult:
    """``Phi_N(c, ..., c)`` by iterating the one-step Beta recursion.

    ``Phi_k`` is held on a Chebyshev grid over ``[0, c]`` (degree 64 by
    default) and each step integrates against ``Beta(2sk, 2s)`` with a
    Gauss-Jacobi rule.  The error indicator compares with a coarser grid.
    """
    if not c < 1.0:
        raise DomainError("need c < 1")
    spec = dict(quad_spec or {})
    degree = int(spec.get("degree", 64))
    nodes = int(spec.get("nodes", 64))
    fine = _recurrence_c(float(c), s, int(N), degree, nodes)
    coarse = _recurrence_c(float(c), s, int(N), max(8, (3 * degree) // 4), max(8, (3 * nodes) // 4))
    return SeriesResult(fine, abs(fine - coarse))


def _log_e_ratio(x):
    # log((1 - e^{-x}) / x), zero at x = 0
    x = np.asarray(x, dtype=float)
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, np.log(-np.expm1(-safe) / safe), 0.0)


def _panel_rule(lo: float, hi: float, n: int, left_exp: float = 0.0, right_exp: float = 0.0):
    # nodes and weights for int_lo^hi f(z) (z - lo)^left_exp (hi - z)^right_exp dz
    t, w = beta_rule(left_exp + 1.0, right_exp + 1.0, n)
    L = hi - lo
    scale = L ** (left_exp + right_exp + 1.0) * math.exp(betaln(left_exp + 1.0, right_exp + 1.0))
    return lo + L * t, w * scale


def _phi_v_step(target: np.ndarray, interp, s: float, k: int, nodes: int) -> np.ndarray:
    # Phi_k(v) = 2/(B(2sk, 2s) (1-e^{-2v})^{2s(k+1)-1})
    #            * int_0^v (1-e^{-2z})^{2sk-1} (1-e^{-2(v-z)})^{2s-1} Phi_{k-1}(z) dz
    two_s = 2.0 * s
    p, q = two_s * k - 1.0, two_s - 1.0
    out = np.empty(target.size)
    for idx, v in enumerate(target):
        if v == 0.0:
            out[idx] = 1.0
            continue
        edge = min(1.0, 0.5 * v)
        panels = [(0.0, edge, p, 0.0)]
        inner = np.linspace(edge, v - edge, max(1, int(math.ceil((v - 2 * edge) / 2.0))) + 1)
        if v - 2 * edge > 0:
            panels += [(a, b, 0.0, 0.0) for a, b in zip(inner[:-1], inner[1:])]
        panels.append((v - edge, v, 0.0, q))
        acc = 0.0
        for lo, hi, le, re in panels:
            z, w = _panel_rule(lo, hi, nodes, le, re)
            # strip the power factors carried by the weights
            f_left = p * (_log_e_ratio(2.0 * z) + math.log(2.0)) if le else p * np.log(-np.expm1(-2.0 * z))
            f_right = (q * (_log_e_ratio(2.0 * (v - z)) + math.log(2.0)) if re
                       else q * np.log(-np.expm1(-2.0 * (v - z))))
            acc += float(np.dot(w, np.exp(f_left + f_right) * interp(z)))
        log_den = (two_s * (k + 1) - 1.0) * math.log(-math.expm1(-2.0 * v))
        out[idx] = 2.0 * acc * math.exp(-betaln(two_s * k, two_s) - log_den)
    return out


def phi_recurrence_v(v, s: float, N: int, quad_spec: dict | None = None) -> np.ndarray:
    """``Phi_N(1 - e^{-2v})`` at the points ``v >= 0``.

    In the variable ``v`` the Beta recursion is a convolution over ``[0, v]``
    whose integrand is bounded for all ``v``, so the scheme stays well
    conditioned as ``c -> 1``.  ``Phi_k`` is held on a Chebyshev grid over
    ``[0, max v]``; each convolution is split into unit panels, with
    Gauss-Jacobi weights absorbing the power behaviour at the two ends.
    """
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("v must be nonnegative")
    spec = dict(quad_spec or {})
    V = float(np.max(v)) if v.size else 0.0
    degree = int(spec.get("degree", max(64, int(8 * V))))
    nodes = int(spec.get("nodes", 24))
    if V == 0.0 or N == 0:
        return np.ones_like(v)
    grid = _cheb_points(0.0, V, degree)
    vals = np.ones_like(grid)
    for k in range(1, N + 1):
        # Phi_k grows like a power of v; its logarithm interpolates with
        # uniform relative accuracy
        log_interp = BarycentricInterpolator(grid, np.log(vals))

        def interp(z, _f=log_interp):
            return np.exp(_f(z))

        if k < N:
            vals = _phi_v_step(grid, interp, s, k, nodes)
        else:
            return _phi_v_step(v.ravel(), interp, s, k, nodes).reshape(v.shape)
    return vals


# ---------------------------------------------------------------------------
# finite sum for integer 2s
# ---------------------------------------------------------------------------

def _compositions(k: int, parts: int):
    if parts == 0:
        if k == 0:
            yield ()
        return
    for first in range(k + 1):
        for rest in _compositions(k - first, parts - 1):
            yield (first,) + rest


def _phi_jk(two_s: int, N: int, j: int, k: int) -> Fraction:
    # k-th derivative of prod_{i != j} (alpha - alpha_i)^{-(N+1)} at alpha_j,
    # alpha_j - alpha_i = 2i - 2j
    others = [i for i in range(two_s) if i != j]
    total = Fraction(0)
    for comp in _compositions(k, len(others)):
        coef = math.factorial(k)
        term = Fraction(1)
        for i, ji in zip(others, comp):
            coef //= math.factorial(ji)
            term *= Fraction((-1) ** ji * math.factorial(N + ji), math.factorial(N))
            term *= Fraction(1, (2 * i - 2 * j) ** (N + ji + 1))
        total += coef * term
    return total


def phi_finite_sum(c: float, s: float, N: int, series_below: float = 1e-3) -> SeriesResult:
    """Finite-sum formula for ``Phi_N(c, ..., c)`` when ``2s`` is an integer.

    The terms alternate and nearly cancel for small ``c``, so they are
    accumulated with mpmath at a working precision chosen from their
    magnitudes.  The returned error field holds the condition estimate
    ``sum |terms| / |sum|``.  For ``|c| < series_below`` the N-fold sum is
    used instead.
    """
    two_s_f = 2.0 * s
    two_s = int(round(two_s_f))
    if abs(two_s - two_s_f) > 1e-12 or two_s < 1:
        raise ValueError("the finite-sum formula needs 2s to be a positive integer")
    if not c < 1.0:
        raise DomainError("need c < 1")
    if c <= 0.0 and c != 0.0 and abs(c) >= series_below:
        # the closed form holds for 0 < c < 1 only
        raise DomainError("the finite-sum formula is stated for 0 < c < 1")
    if abs(c) < series_below:
        r = phi_unnested_sum(np.full(N, c), s, N)
        return SeriesResult(r.value, 1.0)
    phis = {(j, k): _phi_jk(two_s, N, j, k) for j in range(two_s) for k in range(N + 1)}

    def _terms(dps):
        with mpmath.workdps(dps):
            cm = mpmath.mpf(c)
            L = -mpmath.log1p(-cm)
            pref = (2 / cm) ** (two_s * (N + 1) - 1) * mpmath.gamma(two_s * N + two_s)
            out = []
            for (j, k), ph in phis.items():
                if ph == 0:
                    continue
                t = (L ** (N - k) / (mpmath.mpf(2) ** (N - k) * mpmath.factorial(N - k)
                                     * mpmath.factorial(k))
                     * (1 - cm) ** j * mpmath.mpf(ph.numerator) / ph.denominator)
                out.append(pref * t)
            return out

    probe = _terms(30)
    mags = [abs(t) for t in probe]
    biggest = max(mags) if mags else mpmath.mpf(1)
    with mpmath.workdps(30):
        total = abs(mpmath.fsum(probe))
    digits = int(mpmath.log10(biggest / max(total, mpmath.mpf(10) ** -25))) if biggest > 0 else 0
    dps = max(30, digits + 30)
    terms = _terms(dps)
    with mpmath.workdps(dps):
        value = mpmath.fsum(terms)
        cond = mpmath.fsum(abs(t) for t in terms) / abs(value)
    return SeriesResult(float(value), float(cond))


def phi_finite_sum_s1(c: float, N: int) -> float:
    """The ``s = 1`` specialisation of the finite sum, evaluated in mpmath."""
    with mpmath.workdps(60 + 3 * N):
        cm = mpmath.mpf(c)
        L = mpmath.log1p(-cm)
        tot = mpmath.mpf(0)
        for k in range(N + 1):
            coef = mpmath.factorial(N + k) / (mpmath.factorial(N) * mpmath.factorial(k)
                                              * mpmath.factorial(N - k))
            tot += (-1) ** N * coef * L ** (N - k) * (1 + (1 - cm) * (-1) ** (N + k + 1))
        return float(mpmath.gamma(2 * N + 2) / cm ** (2 * N + 1) * tot)


# ---------------------------------------------------------------------------
# Laplace transform of G_N
# ---------------------------------------------------------------------------

def _log_g_prefactor(v, s: float, N: int):
    two_s = 2.0 * s
    with np.errstate(divide="ignore"):
        return (v * (two_s - 1.0) + (two_s * (N + 1) - 1.0) * np.log(-np.expm1(-2.0 * v))
                - two_s * N * math.log(2.0))


def g_function(v, s: float, N: int, quad_spec: dict | None = None) -> np.ndarray:
    """``G_N(v) = e^{v(2s-1)} (1 - e^{-2v})^{2s(N+1)-1} Phi_N(1 - e^{-2v}) / 2^{2sN}``."""
    v = np.asarray(v, dtype=float)
    phi = phi_recurrence_v(v, s, N, quad_spec)
    limit0 = 0.0 if 2.0 * s * (N + 1) > 1 else 1.0
    return np.where(v > 0, np.exp(_log_g_prefactor(v, s, N)) * phi, limit0)


def laplace_ghat(s: float, N: int, alpha) -> np.ndarray:
    """Closed-form Laplace transform of ``G_N``, valid for ``alpha > 2s - 1``."""
    alpha = np.asarray(alpha, dtype=float)
    two_s = 2.0 * s
    if np.any(alpha <= two_s - 1.0):
        raise DomainError("alpha must exceed 2s - 1")
    logv = ((two_s - 1.0) * math.log(2.0) + gammaln(two_s * (N + 1))
            - two_s * (N + 1) * math.log(2.0)
            + (N + 1) * (gammaln((alpha + 1.0 - two_s) / 2.0) - gammaln((alpha + 1.0 + two_s) / 2.0)))
    return np.exp(logv)


def g_transform_check(s: float, N: int, alphas, quad_spec: dict | None = None) -> list:
    """Numerical Laplace transform of ``G_N`` (with ``Phi`` from the recurrence)
    against :func:`laplace_ghat`.

    Returns one dict per ``alpha`` with the numerical value, the closed form,
    the relative gap and the neglected tail estimate.
    """
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    two_s = 2.0 * s
    beta = float(np.min(alphas)) - (two_s - 1.0)
    if beta <= 0:
        raise DomainError("alpha must exceed 2s - 1")
    # tail ~ V^N e^{-beta V}; pick V so that it is far below the transform
    V = 10.0
    while V < 200.0 and (N * math.log(V) - beta * V) > math.log(1e-14) + gammaln(N + 1.0) - (N + 1) * math.log(beta):
        V += 2.0
    spec = dict(quad_spec or {})
    spec.setdefault("degree", max(128, int(6 * V)))
    grid = _cheb_points(0.0, V, int(spec["degree"]))
    # interpolate the slowly varying Phi, not G itself, which spans e^{(2s-1)V}
    log_phi = BarycentricInterpolator(grid, np.log(phi_recurrence_v(grid, s, N, spec)))

    def interp(x):
        return np.exp(log_phi(x))

    # unit panels; the first carries the v^{2s(N+1)-1} behaviour at the origin
    p0 = two_s * (N + 1) - 1.0
    edges = np.arange(0.0, V + 1e-12, 1.0)
    zs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        z, w = _panel_rule(lo, hi, 40, p0 if lo == 0.0 else 0.0, 0.0)
        if lo == 0.0:
            w = w / z**p0
        zs.append(z)
        ws.append(w)
    z = np.concatenate(zs)
    w = np.concatenate(ws)
    phi_z = interp(z)
    out = []
    for a in alphas:
        integrand = np.exp(-a * z + _log_g_prefactor(z, s, N)) * phi_z
        val = math.fsum(w * integrand)
        tail = float(np.exp(-a * V + _log_g_prefactor(V, s, N)) * interp(V)) / (a - (two_s - 1.0))
        exact = float(laplace_ghat(s, N, a))
        out.append({"alpha": float(a), "numerical": val, "closed_form": exact,
                    "rel_gap": abs(val - exact) / exact, "tail": tail})
    return out
