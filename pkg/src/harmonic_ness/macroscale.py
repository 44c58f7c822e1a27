"""Macroscopic functionals: pressure, density rate function and additivity.

Both variational problems share one structure.  Over strictly increasing
profiles ``theta`` on ``[a, b]`` with ``theta(a) = rho_a`` and
``theta(b) = rho_b`` we maximize

    int_a^b f(x, theta(x)) dx + 2s int_a^b log((b - a) theta'(x) / (rho_b - rho_a)) dx,

with ``f = -2s log(1 + (1 - e^{h}) theta)`` for the pressure and ``f`` equal
to minus the Negative-Binomial relative entropy for the rate function.  The
optimizer represents ``theta`` as a continuous piecewise-linear function on a
uniform grid, so the log-derivative term is integrated exactly and ``f`` is
integrated by Gauss-Legendre points inside each cell.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize
from scipy.linalg import solve_banded
from scipy.special import xlogy

from .mgf import c_map, phi_constant_recurrence
from .model import ModelParams

__all__ = [
    "ProfileGrid",
    "TransportCoefficients",
    "VariationalResult",
    "AdditivityReport",
    "transport_coefficients",
    "theta_star",
    "pressure_constant_closed_form",
    "modified_pressure_constant",
    "pressure_functional",
    "pressure_variational",
    "euler_lagrange_residual",
    "rate_functional",
    "rate_function",
    "typical_profile",
    "finite_pressure_trend",
    "modified_pressure",
    "modified_rate",
    "additivity_check_pressure",
    "additivity_check_rate",
    "pressure_piecewise_constant",
    "nonconvexity_witness",
]


# ---------------------------------------------------------------------------
# profiles and coefficients
# ---------------------------------------------------------------------------

@dataclass
class ProfileGrid:
    """A function on ``[a, b]`` sampled at ``M + 1`` uniform points.

    When built with :meth:`from_function` the exact callable is kept and used
    wherever the profile is evaluated off the grid; otherwise values are
    linearly interpolated.
    """

    a: float
    b: float
    values: np.ndarray
    kind: str = "field"
    func: Callable | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size < 2:
            raise ValueError("a profile needs at least two samples")
        if not self.b > self.a:
            raise ValueError("need a < b")
        if self.kind not in ("field", "potential", "density"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.kind == "density" and np.any(self.values < 0):
            raise ValueError("density profiles must be nonnegative")

    @classmethod
    def from_function(cls, f, a: float = 0.0, b: float = 1.0, M: int = 400,
                      kind: str = "field") -> "ProfileGrid":
        x = np.linspace(a, b, M + 1)
        vals = np.broadcast_to(np.asarray(f(x), dtype=float), x.shape).copy()
        return cls(a, b, vals, kind, f)

    @classmethod
    def constant(cls, value: float, a: float = 0.0, b: float = 1.0, M: int = 400,
                 kind: str = "field") -> "ProfileGrid":
        return cls.from_function(lambda x: np.full_like(np.asarray(x, dtype=float), value),
                                 a, b, M, kind)

    @property
    def M(self) -> int:
        return self.values.size - 1

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.a, self.b, self.M + 1)

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.values == self.values[0]))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.func is not None:
            return np.broadcast_to(np.asarray(self.func(x), dtype=float), x.shape)
        return np.interp(x, self.x, self.values)

    def restrict(self, a: float, b: float, M: int | None = None) -> "ProfileGrid":
        """Restriction to ``[a, b]``, resampled on ``M`` cells."""
        if M is None:
            M = max(2, int(round(self.M * (b - a) / (self.b - self.a))))
        if self.func is not None:
            return ProfileGrid.from_function(self.func, a, b, M, self.kind)
        x = np.linspace(a, b, M + 1)
        return ProfileGrid(a, b, np.interp(x, self.x, self.values), self.kind)


@dataclass(frozen=True)
class TransportCoefficients:
    """Diffusivity and mobility of the hydrodynamic limit."""

    D: float
    s: float

    def sigma(self, rho):
        r = np.asarray(rho, dtype=float) / (2.0 * self.s)
        return r * (1.0 + r)


def transport_coefficients(s: float) -> TransportCoefficients:
    """``D = 1/(2s)`` and ``sigma(rho) = (rho/2s)(1 + rho/2s)``."""
    if not s > 0:
        raise ValueError("s must be positive")
    return TransportCoefficients(D=1.0 / (2.0 * s), s=s)


def typical_profile(s: float, rho_l: float, rho_r: float, M: int = 400) -> ProfileGrid:
    """Hydrodynamic density ``2s(rho_l + (rho_r - rho_l) x)``."""
    return ProfileGrid.from_function(lambda x: 2.0 * s * (rho_l + (rho_r - rho_l) * np.asarray(x)),
                                     0.0, 1.0, M, "density")


# ---------------------------------------------------------------------------
# constant field: closed forms
# ---------------------------------------------------------------------------

def _check_constant_domain(rho_a, rho_b, A):
    if 1.0 + rho_a * A <= 0 or 1.0 + rho_b * A <= 0:
        raise ValueError("field outside the domain 1 + (1 - e^h) rho > 0")


def theta_star(x, rho_a: float, rho_b: float, h: float, a: float = 0.0, b: float = 1.0):
    """Maximizer of the constant-field pressure functional on ``[a, b]``."""
    x = np.asarray(x, dtype=float)
    y = (x - a) / (b - a)
    A = -math.expm1(h)
    if A == 0.0:
        return rho_a + (rho_b - rho_a) * y
    _check_constant_domain(rho_a, rho_b, A)
    base = 1.0 + rho_a * A
    logR = math.log1p((rho_b - rho_a) * A / base)
    return rho_a + base * np.expm1(y * logR) / A


def _log1p_over_x(z: float) -> float:
    if abs(z) < 1e-6:
        return z * (-0.5 + z * (1.0 / 3.0 - 0.25 * z))
    return math.log(math.log1p(z) / z)


def pressure_constant_closed_form(s: float, rho_a: float, rho_b: float, a: float, b: float,
                                  h: float) -> float:
    """Pressure of a constant field on ``[a, b]`` with boundary densities
    ``rho_a < rho_b``.

    Evaluated as ``2s(b - a) [log(log1p(z)/z) - log(1 + rho_a A)]`` with
    ``A = 1 - e^h`` and ``z = (rho_b - rho_a) A / (1 + rho_a A)``, which is
    smooth through ``h = 0``.
    """
    A = -math.expm1(h)
    if A == 0.0:
        return 0.0
    _check_constant_domain(rho_a, rho_b, A)
    base = 1.0 + rho_a * A
    if rho_b == rho_a:
        return -2.0 * s * (b - a) * math.log(base)
    z = (rho_b - rho_a) * A / base
    return 2.0 * s * (b - a) * (_log1p_over_x(z) - math.log(base))


def modified_pressure_constant(s, rho_a, rho_b, a, b, h) -> float:
    """Closed-form pressure plus ``2s (b - a) log((rho_b - rho_a)/(b - a))``."""
    if rho_b <= rho_a:
        return -math.inf
    return (pressure_constant_closed_form(s, rho_a, rho_b, a, b, h)
            + 2.0 * s * (b - a) * math.log((rho_b - rho_a) / (b - a)))


# ---------------------------------------------------------------------------
# grid functionals (trapezoid, centered differences)
# ---------------------------------------------------------------------------

def _check_potential(theta: ProfileGrid, rho_a: float, rho_b: float) -> np.ndarray:
    v = theta.values
    if np.any(np.diff(v) <= 0):
        raise ValueError("theta must be strictly increasing")
    if not (np.isclose(v[0], rho_a, rtol=0, atol=1e-12) and np.isclose(v[-1], rho_b, rtol=0, atol=1e-12)):
        raise ValueError("theta must match the boundary densities")
    return v


def _log_slope_term(s, theta: ProfileGrid, rho_a, rho_b) -> float:
    # 2s int log((b - a) theta' / (rho_b - rho_a)); theta' by centered
    # differences, second-order one-sided at the ends
    dth = np.gradient(theta.values, theta.x, edge_order=2)
    if np.any(dth <= 0):
        raise ValueError("discrete derivative of theta is not positive")
    L = theta.b - theta.a
    return 2.0 * s * np.trapezoid(np.log(L * dth / (rho_b - rho_a)), theta.x)


def pressure_functional(s: float, rho_l: float, rho_r: float, h: ProfileGrid,
                        theta: ProfileGrid) -> float:
    """``P(h, theta) - J(theta)`` on the grid of ``theta`` by the trapezoid rule."""
    v = _check_potential(theta, rho_l, rho_r)
    hv = h(theta.x)
    A = -np.expm1(hv)
    base = 1.0 + A * v
    if np.any(base <= 0):
        raise ValueError("admissibility 1 + (1 - e^h) theta > 0 violated")
    P = -2.0 * s * np.trapezoid(np.log(base), theta.x)
    return float(P + _log_slope_term(s, theta, rho_l, rho_r))


def _entropy_density(s, rho, theta):
    # 2s [r log(r/theta) + (1 + r) log((1 + theta)/(1 + r))], r = rho/2s, 0 log 0 = 0
    r = np.asarray(rho, dtype=float) / (2.0 * s)
    theta = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = xlogy(r, r) - xlogy(r, theta)
    return 2.0 * s * (t1 + (1.0 + r) * (np.log1p(theta) - np.log1p(r)))


def rate_functional(s: float, rho_l: float, rho_r: float, rho: ProfileGrid,
                    theta: ProfileGrid) -> float:
    """``I(rho, theta) + J(theta)`` on the grid of ``theta`` by the trapezoid rule."""
    v = _check_potential(theta, rho_l, rho_r)
    dens = rho(theta.x)
    if np.any(dens < 0):
        raise ValueError("density must be nonnegative")
    ent = _entropy_density(s, dens, v)
    if not np.all(np.isfinite(ent)):
        # theta = 0 with rho > 0 at an endpoint has infinite cost
        return math.inf
    return float(np.trapezoid(ent, theta.x) - _log_slope_term(s, theta, rho_l, rho_r))


# ---------------------------------------------------------------------------
# discretized variational problem
# ---------------------------------------------------------------------------

@dataclass
class VariationalResult:
    """Optimal value, optimizer and diagnostics of a profile optimization."""

    value: float
    theta: ProfileGrid
    grad_norm: float
    converged: bool
    local_optima: list = field(default_factory=list)


class _MonotoneProblem:
    """Maximize ``int f(x, theta) + 2s int log((b-a) theta'/(rho_b-rho_a))``
    over piecewise-linear increasing ``theta`` with fixed ends."""

    def __init__(self, s, rho_a, rho_b, a, b, M, integrand, q: int = 3):
        if not rho_b > rho_a:
            raise ValueError("need rho_a < rho_b")
        self.s, self.two_s = s, 2.0 * s
        self.rho_a, self.rho_b, self.a, self.b, self.M = rho_a, rho_b, a, b, int(M)
        self.delta = rho_b - rho_a
        self.x = np.linspace(a, b, self.M + 1)
        self.dx = (b - a) / self.M
        t, w = np.polynomial.legendre.leggauss(q)
        self.t = 0.5 * (1.0 + t)
        self.w = 0.5 * w * self.dx
        self.xq = self.x[:-1, None] + self.dx * self.t[None, :]
        self.integrand = integrand
        self._const = self.two_s * (b - a) * math.log((b - a) / (self.dx * self.delta))

    # theta <-> interior values
    def full(self, interior):
        return np.concatenate(([self.rho_a], interior, [self.rho_b]))

    def _quad_theta(self, th):
        return th[:-1, None] * (1.0 - self.t) + th[1:, None] * self.t

    def value(self, th) -> float:
        d = np.diff(th)
        if np.any(d <= 0):
            return -math.inf
        f, _, _ = self.integrand(self.xq, self._quad_theta(th), order=0)
        if not np.all(np.isfinite(f)):
            return -math.inf
        return float(np.sum(f * self.w) + self.two_s * self.dx * np.sum(np.log(d)) + self._const)

    def grad(self, th) -> np.ndarray:
        d = np.diff(th)
        _, f1, _ = self.integrand(self.xq, self._quad_theta(th), order=1)
        g = np.zeros(self.M + 1)
        g[:-1] += (f1 * self.w * (1.0 - self.t)).sum(axis=1)
        g[1:] += (f1 * self.w * self.t).sum(axis=1)
        inv = self.two_s * self.dx / d
        g[1:] += inv
        g[:-1] -= inv
        return g[1:-1]

    def hess_banded(self, th) -> np.ndarray:
        d = np.diff(th)
        _, _, f2 = self.integrand(self.xq, self._quad_theta(th), order=2)
        diag = np.zeros(self.M + 1)
        diag[:-1] += (f2 * self.w * (1.0 - self.t) ** 2).sum(axis=1)
        diag[1:] += (f2 * self.w * self.t**2).sum(axis=1)
        inv2 = self.two_s * self.dx / d**2
        diag[1:] -= inv2
        diag[:-1] -= inv2
        off = (f2 * self.w * self.t * (1.0 - self.t)).sum(axis=1) + inv2
        n = self.M - 1
        ab = np.zeros((3, n))
        ab[1] = diag[1:-1]
        ab[0, 1:] = off[1:-1]
        ab[2, :-1] = off[1:-1]
        return ab

    # latent parameterization: increments = delta * z^2 / sum z^2
    def theta_from_z(self, z):
        z2 = z * z
        d = self.delta * z2 / z2.sum()
        return np.concatenate(([self.rho_a], self.rho_a + np.cumsum(d)[:-1], [self.rho_b]))

    def neg_value_and_grad_z(self, z):
        th = self.theta_from_z(z)
        val = self.value(th)
        if not math.isfinite(val):
            return 1e300, np.zeros_like(z)
        g_int = self.grad(th)
        # dPhi/dd_k = sum_{j > k} dPhi/dtheta_j over interior nodes
        G = np.concatenate((np.cumsum(g_int[::-1])[::-1], [0.0]))
        S = float(np.dot(z, z))
        d = np.diff(th)
        gz = (2.0 * z / S) * (self.delta * G - np.dot(d, G))
        return -val, -gz

    def newton(self, th, tol=1e-12, max_iter=100):
        th = th.copy()
        val = self.value(th)
        gnorm = math.inf
        for _ in range(max_iter):
            g = self.grad(th)
            gnorm = float(np.max(np.abs(g))) / self.dx
            if gnorm < tol:
                return th, val, gnorm, True
            ab = self.hess_banded(th)
            try:
                step = solve_banded((1, 1), ab, -g)
            except np.linalg.LinAlgError:
                step = g
            if not np.all(np.isfinite(step)) or np.dot(step, g) <= 0:
                step = g * self.dx
            lam = 1.0
            improved = False
            for _ in range(60):
                cand = th.copy()
                cand[1:-1] += lam * step
                cval = self.value(cand)
                if math.isfinite(cval) and cval >= val - 1e-12 * max(1.0, abs(val)):
                    th, val, improved = cand, cval, True
                    break
                lam *= 0.5
            if not improved:
                break
        g = self.grad(th)
        gnorm = float(np.max(np.abs(g))) / self.dx
        return th, val, gnorm, gnorm < max(tol, 1e-6)

    def solve(self, starts, tol=1e-10, lbfgs_iter=300):
        found = []
        for th0 in starts:
            th0 = np.asarray(th0, dtype=float)
            z0 = np.sqrt(np.maximum(np.diff(th0), 1e-300))
            res = optimize.minimize(self.neg_value_and_grad_z, z0, jac=True, method="L-BFGS-B",
                                    options={"maxiter": lbfgs_iter, "gtol": 1e-10, "ftol": 1e-15})
            th1 = self.theta_from_z(res.x)
            if self.value(th1) < self.value(th0):
                th1 = th0
            th, val, gnorm, ok = self.newton(th1, tol=tol)
            found.append((val, th, gnorm, ok))
        found.sort(key=lambda r: -r[0])
        distinct = []
        for val, th, gnorm, ok in found:
            if all(np.max(np.abs(th - o[1])) > 1e-4 for o in distinct):
                distinct.append((val, th, gnorm, ok))
        return distinct


def _pressure_integrand(s, h_fun):
    two_s = 2.0 * s

    def integrand(x, th, order=0):
        A = -np.expm1(h_fun(x))
        base = 1.0 + A * th
        with np.errstate(invalid="ignore", divide="ignore"):
            f = -two_s * np.where(base > 0, np.log(np.where(base > 0, base, 1.0)), np.inf)
        if order == 0:
            return np.where(base > 0, f, -np.inf), None, None
        f1 = -two_s * A / base
        f2 = two_s * (A / base) ** 2 if order >= 2 else None
        return f, f1, f2
    return integrand


def _rate_integrand(s, rho_fun):
    two_s = 2.0 * s

    def integrand(x, th, order=0):
        r = rho_fun(x) / two_s
        f = -_entropy_density(s, r * two_s, th)
        if order == 0:
            return np.where(np.isnan(f), -np.inf, f), None, None
        f1 = -two_s * (-r / th + (1.0 + r) / (1.0 + th))
        f2 = -two_s * (r / th**2 - (1.0 + r) / (1.0 + th) ** 2) if order >= 2 else None
        return f, f1, f2
    return integrand


def _as_profile(p, a, b, M, kind):
    if isinstance(p, ProfileGrid):
        return p
    if callable(p):
        return ProfileGrid.from_function(p, a, b, M, kind)
    return ProfileGrid.constant(float(p), a, b, M, kind)


def _starts(prob: _MonotoneProblem, extra, n_starts: int, rng: np.random.Generator):
    lin = prob.rho_a + prob.delta * (prob.x - prob.a) / (prob.b - prob.a)
    starts = [lin] + [np.asarray(e) for e in extra]
    while len(starts) < n_starts:
        d = rng.dirichlet(np.full(prob.M, 20.0))
        # smooth the random increments so the start is not too rough
        d = np.convolve(d, np.ones(9) / 9.0, mode="same")
        d /= d.sum()
        starts.append(np.concatenate(([prob.rho_a], prob.rho_a + prob.delta * np.cumsum(d)[:-1],
                                      [prob.rho_b])))
    return starts[:max(1, n_starts)]


def _to_result(prob, distinct, kind, sign=1.0) -> VariationalResult:
    best = distinct[0]
    theta = ProfileGrid(prob.a, prob.b, best[1], "potential")
    if not best[3]:
        warnings.warn(f"profile optimizer stopped with gradient norm {best[2]:.3g}",
                      RuntimeWarning, stacklevel=3)
    optima = [{"value": sign * v, "theta": th, "grad_norm": g, "converged": ok}
              for v, th, g, ok in distinct]
    return VariationalResult(sign * best[0], theta, best[2], best[3], optima)


def pressure_variational(s: float, rho_l: float, rho_r: float, h, M: int = 400,
                         starts: int = 8, seed: int = 0, a: float = 0.0, b: float = 1.0,
                         quad_points: int = 3, initial=None) -> VariationalResult:
    """Maximize ``P(h, theta) - J(theta)`` over increasing ``theta`` on ``[a, b]``.

    ``h`` may be a :class:`ProfileGrid`, a callable or a constant.  The
    increments of ``theta`` are squared latent variables normalized to
    ``rho_r - rho_l``; L-BFGS runs from several starts (linear, the
    constant-field optimizer for the mean field, and random monotone
    profiles) and each run is polished by Newton steps on the tridiagonal
    Hessian.  All distinct local optima are reported.
    """
    hp = _as_profile(h, a, b, M, "field")
    if rho_r == rho_l:
        x = np.linspace(a, b, M + 1)
        th = np.full(M + 1, rho_l)
        val = -2.0 * s * float(np.trapezoid(np.log1p(-np.expm1(hp(x)) * rho_l), x))
        return VariationalResult(val, ProfileGrid(a, b, th, "potential"), 0.0, True, [])
    prob = _MonotoneProblem(s, rho_l, rho_r, a, b, M, _pressure_integrand(s, hp), q=quad_points)
    extra = []
    if initial is not None:
        extra.append(np.asarray(initial, dtype=float))
    hbar = float(np.mean(hp.values))
    try:
        extra.append(theta_star(prob.x, rho_l, rho_r, hbar, a, b))
    except ValueError:
        pass
    rng = np.random.default_rng(seed)
    distinct = prob.solve(_starts(prob, extra, starts, rng))
    return _to_result(prob, distinct, "pressure")


def euler_lagrange_residual(theta: ProfileGrid, h: float) -> float:
    """Sup-norm over interior nodes of ``A/(1 + A theta) - theta''/theta'^2``
    for a constant field, ``A = 1 - e^h``, by centered differences."""
    v, dx = theta.values, (theta.b - theta.a) / theta.M
    A = -math.expm1(h)
    d1 = (v[2:] - v[:-2]) / (2.0 * dx)
    d2 = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / dx**2
    res = A / (1.0 + A * v[1:-1]) - d2 / d1**2
    return float(np.max(np.abs(res)))


def rate_function(s: float, rho_l: float, rho_r: float, rho, M: int = 400, starts: int = 8,
                  seed: int = 0, a: float = 0.0, b: float = 1.0, quad_points: int = 3,
                  initial=None) -> VariationalResult:
    """Minimize ``I(rho, theta) + J(theta)`` over increasing ``theta`` on ``[a, b]``."""
    rp = _as_profile(rho, a, b, M, "density")
    if rho_r == rho_l:
        x = np.linspace(a, b, M + 1)
        th = np.full(M + 1, rho_l)
        val = float(np.trapezoid(_entropy_density(s, rp(x), th), x))
        return VariationalResult(val, ProfileGrid(a, b, th, "potential"), 0.0, True, [])
    prob = _MonotoneProblem(s, rho_l, rho_r, a, b, M, _rate_integrand(s, rp), q=quad_points)
    extra = []
    if initial is not None:
        extra.append(np.asarray(initial, dtype=float))
    # the unconstrained pointwise minimizer is theta = rho/2s; use its
    # monotone rearrangement clipped to the boundary values as a start
    target = np.clip(np.maximum.accumulate(rp(prob.x) / (2.0 * s)), rho_l, rho_r)
    lin = rho_l + (rho_r - rho_l) * (prob.x - a) / (b - a)
    mix = 0.5 * (target + lin)
    mix[0], mix[-1] = rho_l, rho_r
    if np.all(np.diff(mix) > 0):
        extra.append(mix)
    rng = np.random.default_rng(seed)
    distinct = [(-v, th, g, ok) for v, th, g, ok in prob.solve(_starts(prob, extra, starts, rng))]
    distinct.sort(key=lambda r: r[0])
    best = distinct[0]
    theta = ProfileGrid(a, b, best[1], "potential")
    if not best[3]:
        warnings.warn(f"profile optimizer stopped with gradient norm {best[2]:.3g}",
                      RuntimeWarning, stacklevel=2)
    optima = [{"value": v, "theta": th, "grad_norm": g, "converged": ok} for v, th, g, ok in distinct]
    return VariationalResult(best[0], theta, best[2], best[3], optima)


# ---------------------------------------------------------------------------
# finite volume trend
# ---------------------------------------------------------------------------

def finite_pressure_trend(s: float, rho_l: float, rho_r: float, h: float, Ns,
                          quad_spec: dict | None = None) -> list:
    """``(1/N) log Psi_N(h, ..., h)`` by the recurrence route against the limit.

    Returns rows ``{"N", "finite", "limit", "gap"}``.
    """
    limit = pressure_constant_closed_form(s, rho_l, rho_r, 0.0, 1.0, h)
    A = -math.expm1(h)
    rows = []
    for N in Ns:
        params = ModelParams(s, int(N), rho_l, rho_r)
        if A == 0.0:
            val = 0.0
        else:
            c = float(c_map(params, [h])[0])
            phi = phi_constant_recurrence(c, s, int(N), quad_spec).value
            val = -2.0 * s * math.log1p(rho_r * A) + math.log(phi) / N
        rows.append({"N": int(N), "finite": val, "limit": limit, "gap": abs(val - limit)})
    return rows


# ---------------------------------------------------------------------------
# additivity
# ---------------------------------------------------------------------------

@dataclass
class AdditivityReport:
    """Both sides of an additivity identity and the optimizing intermediates."""

    lhs: float
    rhs: float
    gap: float
    intermediates: list
    splits: list
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "gap": self.gap,
                "intermediates": list(map(float, self.intermediates)),
                "splits": list(map(float, self.splits)), **self.details}


def _constant_value(p):
    if isinstance(p, ProfileGrid):
        return float(p.values[0]) if p.is_constant else None
    if callable(p):
        return None
    return float(p)


def modified_pressure(s, rho_a, rho_b, h, a=0.0, b=1.0, M=400, starts=1, initial=None):
    """Pressure on ``[a, b]`` plus ``2s (b - a) log((rho_b - rho_a)/(b - a))``.

    Constant fields use the closed form; otherwise the variational problem is
    solved.  Returns ``(value, theta or None)``.
    """
    if rho_b <= rho_a:
        return -math.inf, None
    hc = _constant_value(h)
    if hc is not None:
        return modified_pressure_constant(s, rho_a, rho_b, a, b, hc), None
    res = pressure_variational(s, rho_a, rho_b, h, M=M, starts=starts, a=a, b=b, initial=initial)
    return res.value + 2.0 * s * (b - a) * math.log((rho_b - rho_a) / (b - a)), res.theta


def modified_rate(s, rho_a, rho_b, rho, a=0.0, b=1.0, M=400, starts=1, initial=None):
    """Rate function on ``[a, b]`` minus ``2s (b - a) log((rho_b - rho_a)/(b - a))``."""
    if rho_b <= rho_a:
        return math.inf, None
    res = rate_function(s, rho_a, rho_b, rho, M=M, starts=starts, a=a, b=b, initial=initial)
    return res.value - 2.0 * s * (b - a) * math.log((rho_b - rho_a) / (b - a)), res.theta


def _restrict(p, a, b, M):
    if isinstance(p, ProfileGrid):
        return p.restrict(a, b, M)
    return p


def _outer_optimize(fun, rho_l, rho_r, kappa, sense, xtol):
    # fun(intermediates) -> value; sense = +1 maximize, -1 minimize
    delta = rho_r - rho_l
    if kappa == 2:
        res = optimize.minimize_scalar(lambda t: -sense * fun([t]), bounds=(rho_l, rho_r),
                                       method="bounded", options={"xatol": xtol * delta})
        return [float(res.x)], sense * -res.fun

    def unpack(z):
        z2 = z * z
        d = delta * z2 / z2.sum()
        return list(rho_l + np.cumsum(d)[:-1])

    def obj(z):
        val = fun(unpack(z))
        return -sense * val if math.isfinite(val) else 1e300

    z0 = np.ones(kappa)
    res = optimize.minimize(obj, z0, method="Nelder-Mead",
                            options={"xatol": xtol, "fatol": 1e-14, "maxiter": 4000, "maxfev": 8000})
    return unpack(res.x), sense * -res.fun


def _check_splits(splits):
    splits = [float(v) for v in splits]
    if not splits or any(not 0.0 < v < 1.0 for v in splits) or any(
            b <= a for a, b in zip(splits[:-1], splits[1:])):
        raise ValueError("splits must be strictly increasing points inside (0, 1)")
    return [0.0] + splits + [1.0]


def additivity_check_pressure(s: float, rho_l: float, rho_r: float, h, splits,
                              M: int = 400, xtol: float = 1e-10) -> AdditivityReport:
    """Modified pressure of ``[0, 1]`` against the supremum over intermediate
    densities of the sum over subintervals.  ``M`` is the grid size per
    subinterval and for the whole interval."""
    edges = _check_splits(splits)
    kappa = len(edges) - 1
    lhs, _ = modified_pressure(s, rho_l, rho_r, h, 0.0, 1.0, M, starts=4)
    pieces = [_restrict(h, a, b, M) for a, b in zip(edges[:-1], edges[1:])]

    def total(inter):
        dens = [rho_l] + list(inter) + [rho_r]
        if any(d1 <= d0 for d0, d1 in zip(dens[:-1], dens[1:])):
            return -math.inf
        return sum(modified_pressure(s, dens[k], dens[k + 1], pieces[k], edges[k], edges[k + 1], M)[0]
                   for k in range(kappa))

    inter, rhs = _outer_optimize(total, rho_l, rho_r, kappa, +1, xtol)
    return AdditivityReport(lhs, rhs, abs(lhs - rhs), inter, edges[1:-1])


def additivity_check_rate(s: float, rho_l: float, rho_r: float, rho, splits,
                          M: int = 400, xtol: float = 1e-10) -> AdditivityReport:
    """Modified rate function of ``[0, 1]`` against the infimum over
    intermediate densities of the sum over subintervals."""
    edges = _check_splits(splits)
    kappa = len(edges) - 1
    lhs, _ = modified_rate(s, rho_l, rho_r, rho, 0.0, 1.0, M, starts=4)
    pieces = [_restrict(rho, a, b, M) for a, b in zip(edges[:-1], edges[1:])]

    def total(inter):
        dens = [rho_l] + list(inter) + [rho_r]
        if any(d1 <= d0 for d0, d1 in zip(dens[:-1], dens[1:])):
            return math.inf
        return sum(modified_rate(s, dens[k], dens[k + 1], pieces[k], edges[k], edges[k + 1], M)[0]
                   for k in range(kappa))

    inter, rhs = _outer_optimize(total, rho_l, rho_r, kappa, -1, xtol)
    return AdditivityReport(lhs, rhs, abs(lhs - rhs), inter, edges[1:-1])


# ---------------------------------------------------------------------------
# Legendre transform and non-convexity
# ---------------------------------------------------------------------------

def pressure_piecewise_constant(s: float, rho_l: float, rho_r: float, values, edges=None) -> float:
    """Pressure of a piecewise-constant field via additivity and the closed
    forms on each piece (no profile discretization)."""
    values = [float(v) for v in values]
    K = len(values)
    if edges is None:
        edges = np.linspace(0.0, 1.0, K + 1)
    edges = [float(e) for e in edges]
    if K == 1:
        return pressure_constant_closed_form(s, rho_l, rho_r, 0.0, 1.0, values[0])

    def total(inter):
        dens = [rho_l] + list(inter) + [rho_r]
        if any(d1 <= d0 for d0, d1 in zip(dens[:-1], dens[1:])):
            return -math.inf
        try:
            return sum(modified_pressure_constant(s, dens[k], dens[k + 1], edges[k], edges[k + 1],
                                                  values[k]) for k in range(K))
        except ValueError:
            return -math.inf

    _, tilde = _outer_optimize(total, rho_l, rho_r, K, +1, 1e-10)
    return tilde - 2.0 * s * math.log(rho_r - rho_l)


def nonconvexity_witness(s: float, rho_l: float, rho_r: float, rho1, rho2, M: int = 400,
                         pieces: int = 2, starts: int = 6) -> dict:
    """Certify that the Legendre transform of the pressure misses the rate
    function at ``rho_mid = (rho1 + rho2)/2``.

    The transform ``L(P)`` is convex and below ``I``, so
    ``L(P)(rho_mid) <= (I(rho1) + I(rho2))/2``.  A lower bound for
    ``L(P)(rho_mid)`` comes from maximizing ``int h rho_mid - P(h)`` over
    piecewise-constant fields with ``pieces`` pieces.  The witness gap is
    ``I(rho_mid) - upper``.
    """
    r1 = _as_profile(rho1, 0.0, 1.0, M, "density")
    r2 = _as_profile(rho2, 0.0, 1.0, M, "density")
    mid = ProfileGrid.from_function(lambda x: 0.5 * (r1(x) + r2(x)), 0.0, 1.0, M, "density")
    I1 = rate_function(s, rho_l, rho_r, r1, M=M, starts=starts).value
    I2 = rate_function(s, rho_l, rho_r, r2, M=M, starts=starts).value
    Im = rate_function(s, rho_l, rho_r, mid, M=M, starts=starts).value
    upper = 0.5 * (I1 + I2)

    edges = np.linspace(0.0, 1.0, pieces + 1)
    xg, wg = np.polynomial.legendre.leggauss(40)
    masses = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        xs = lo + 0.5 * (hi - lo) * (1.0 + xg)
        masses.append(float(np.dot(0.5 * (hi - lo) * wg, mid(xs))))
    masses = np.asarray(masses)
    hmax = math.log1p(1.0 / rho_r) if rho_r > 0 else 50.0

    def neg_dual(hv):
        if np.any(hv >= hmax):
            return 1e300
        try:
            return -(float(np.dot(hv, masses)) - pressure_piecewise_constant(s, rho_l, rho_r, hv, edges))
        except ValueError:
            return 1e300

    best = None
    for h0 in (np.zeros(pieces), np.full(pieces, -0.5), np.full(pieces, 0.5 * hmax)):
        res = optimize.minimize(neg_dual, h0, method="Nelder-Mead",
                                options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 4000})
        if best is None or res.fun < best.fun:
            best = res
    lower = -float(best.fun)
    return {"I_rho1": I1, "I_rho2": I2, "I_mid": Im, "legendre_upper": upper,
            "legendre_lower": lower, "field": list(map(float, best.x)),
            "gap": Im - upper, "witness": bool(Im - upper > 1e-3)}
