"""Cross-representation and closed-form battery.

Every check returns a :class:`CheckResult` with the largest observed gap, the
tolerance it was held to and free-form details.  ``run_checks`` runs the
whole battery or a named subset.
"""
from __future__ import annotations

import itertools
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma

from . import macroscale as ms
from .mgf import (g_transform_check, mgf, phi_constant_recurrence, phi_finite_sum)
from .model import (ModelParams, build_truncated_generator, equilibrium_product_measure,
                    jump_rates)
from .ness import (TruncationWarning, factorial_moment, marginal_distribution,
                   mixture_expectation, mixture_probability_table, ness_probability_expansion,
                   ness_probability_table, appendixA_check)
from .simulator import run as simulate

__all__ = ["CheckResult", "CHECKS", "run_checks"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    gap: float
    tol: float
    seconds: float = 0.0
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "gap": self.gap, "tol": self.tol,
                "seconds": self.seconds, "details": self.details}

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: gap={self.gap:.3e} tol={self.tol:.1e} ({self.seconds:.1f}s)"


def check_rate_identity() -> CheckResult:
    """Jump rates summed over sizes against the digamma form of the
    shifted harmonic number."""
    worst = 0.0
    for s in (0.5, 1.0, 1.5):
        for n in range(1, 501):
            total = math.fsum(jump_rates(s, n))
            ref = digamma(n + 2.0 * s) - digamma(2.0 * s)
            worst = max(worst, abs(total - ref) / ref)
    return CheckResult("rate_identity", worst < 1e-12, worst, 1e-12)


def check_equilibrium_stationarity() -> CheckResult:
    """Product measure against the truncated generator: residual below the
    leak bound."""
    worst_ratio, details = 0.0, {}
    for s, rho, N in itertools.product((0.5, 1.0), (0.3, 1.0), (1, 2, 3)):
        params = ModelParams(s, N, rho, rho)
        gen = build_truncated_generator(params, 15)
        mu = equilibrium_product_measure(params, 15).probs.ravel()
        res = float(np.max(np.abs(gen.left_residual(mu))))
        bound = gen.leak_mass(mu)
        worst_ratio = max(worst_ratio, res / bound if bound > 0 else (0.0 if res == 0 else math.inf))
        details[f"s={s},rho={rho},N={N}"] = {"residual": res, "leak_bound": bound}
    return CheckResult("equilibrium_stationarity", worst_ratio <= 1.0, worst_ratio, 1.0,
                       details=details)


def check_ness_triple() -> CheckResult:
    """Factorial-moment reconstruction, mixture quadrature and the
    closed-form expansion on all states with ``|eta| <= 6``."""
    worst, details = 0.0, {}
    for N, two_s in itertools.product((1, 2, 3), (1.0, 2.0)):
        params = ModelParams(two_s / 2.0, N, 0.1, 0.5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TruncationWarning)
            rec = ness_probability_table(params, xi_cap=60, eta_cap=6)
        mix = mixture_probability_table(params, 6)
        exp = ness_probability_expansion(params, 6)
        mask = np.indices((7,) * N).sum(axis=0) <= 6
        gaps = {"reconstruction-mixture": float(np.max(np.abs(rec - mix)[mask])),
                "reconstruction-expansion": float(np.max(np.abs(rec - exp)[mask])),
                "mixture-expansion": float(np.max(np.abs(mix - exp)[mask]))}
        # moment identity: sum, simplex integral and gamma-product routes
        for xi in itertools.product(range(3), repeat=N):
            rep = appendixA_check(params, xi)
            gaps["moments"] = max(gaps.get("moments", 0.0), rep.max_gap)
        details[f"N={N},2s={two_s}"] = gaps
        worst = max(worst, max(gaps.values()))
    return CheckResult("ness_triple", worst < 1e-8, worst, 1e-8, details=details)


def check_mean_profile() -> CheckResult:
    """``G(delta_i)`` is affine in ``i``: weight-sum route and Dirichlet
    quadrature route (the latter also for non-integer ``2s``)."""
    worst, details = 0.0, {}
    for s, N in itertools.product((0.5, 1.0, 0.65), (1, 2, 4, 8)):
        params = ModelParams(s, N, 0.3, 1.7)
        exact = params.rho_l + (params.rho_r - params.rho_l) * np.arange(1, N + 1) / (N + 1)
        dirichlet = np.array([mixture_expectation(params, lambda th, i=i: th[:, i], n_nodes=2)
                              for i in range(N)])
        gap = float(np.max(np.abs(dirichlet - exact)))
        if N <= 4:
            direct = np.array([factorial_moment(params, tuple(int(i == j) for j in range(N)))
                               for i in range(N)])
            gap = max(gap, float(np.max(np.abs(direct - exact))))
        details[f"s={s},N={N}"] = gap
        worst = max(worst, gap)
    return CheckResult("mean_profile", worst < 1e-10, worst, 1e-10, details=details)


def check_simulator(events: int = 10**7, seed: int = 2024) -> CheckResult:
    """Per-site marginals within TV 0.01 of the exact marginals and the mean
    profile within three batch-means standard errors."""
    params = ModelParams(0.5, 3, 0.2, 0.8)
    stats = simulate(params, events, seed=seed)
    marg = stats.marginals
    tv = []
    for i in range(params.N):
        exact = marginal_distribution(params, i + 1, marg.shape[1] - 1)
        # the last bin holds the tail n >= hist_max on both sides
        exact[-1] += max(0.0, 1.0 - exact.sum())
        tv.append(0.5 * float(np.abs(marg[i] - exact).sum()))
    z = np.abs(stats.mean - params.mean_profile()) / stats.standard_error
    passed = max(tv) < 0.01 and float(z.max()) < 3.0
    return CheckResult("simulator", passed, max(tv), 0.01,
                       details={"tv": tv, "z_scores": z.tolist(), "mean": stats.mean.tolist(),
                                "se": stats.standard_error.tolist()})


def check_mgf_equivalence(seed: int = 7) -> CheckResult:
    """Finite sum, nested and unnested integrals and the mixture route for
    20 random admissible fields."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(20):
        N = int(rng.integers(1, 5))
        two_s = float(rng.choice([1.0, 2.0]))
        params = ModelParams(two_s / 2.0, N, 0.2, 0.8)
        bound = math.log1p(1.0 / params.rho_r)
        # inside the symmetric admissible set, away from the upper edge
        h = rng.uniform(-bound, 0.5 * bound, size=N)
        vals = [mgf(params, h, method=m) for m in ("sum", "integral", "unnested", "mixture")]
        for a, b in itertools.combinations(vals, 2):
            worst = max(worst, abs(a - b) / abs(b))
    return CheckResult("mgf_equivalence", worst < 1e-7, worst, 1e-7)


def check_s_half() -> CheckResult:
    """At ``s = 1/2`` the reduced function is ``((-log(1-c))/c)^N``."""
    worst = 0.0
    for c in (0.1, 0.5, 0.9):
        base = -math.log1p(-c) / c
        for N in range(1, 21):
            ref = base**N
            rec = phi_constant_recurrence(c, 0.5, N).value
            fin = phi_finite_sum(c, 0.5, N).value
            worst = max(worst, abs(rec - ref) / ref, abs(fin - ref) / ref)
    return CheckResult("s_half_size_independence", worst < 1e-10, worst, 1e-10)


def check_finite_sum_and_laplace() -> CheckResult:
    """Finite-sum form against the recurrence for ``2s = 2`` and the Laplace
    transform of ``G_N`` against its gamma-ratio closed form."""
    fs_gap = 0.0
    for N in range(1, 7):
        for c in (0.05, 0.2, 0.6, 0.95):
            a = float(phi_finite_sum(c, 1.0, N).value)
            b = phi_constant_recurrence(c, 1.0, N).value
            fs_gap = max(fs_gap, abs(a - b) / abs(b))
    lp_gap = 0.0
    for N in range(1, 7):
        rows = g_transform_check(1.0, N, [2.5, 3.0, 5.0, 8.0])
        lp_gap = max(lp_gap, max(r["rel_gap"] for r in rows))
    passed = fs_gap < 1e-8 and lp_gap < 1e-6
    # gap is the worse of the two gap/tolerance ratios
    return CheckResult("finite_sum_and_laplace", passed, max(fs_gap / 1e-8, lp_gap / 1e-6), 1.0,
                       details={"finite_sum_gap": fs_gap, "laplace_gap": lp_gap})


def check_closed_pressure() -> CheckResult:
    """Variational optimizer against the constant-field closed forms."""
    details, ok = {}, True
    for s, h in itertools.product((0.5, 1.0), (-1.0, 0.3)):
        rho_l, rho_r = 0.2, 0.8
        res = ms.pressure_variational(s, rho_l, rho_r, h, M=400)
        th = ms.theta_star(res.theta.x, rho_l, rho_r, h)
        sup = float(np.max(np.abs(res.theta.values - th)))
        pgap = abs(res.value - ms.pressure_constant_closed_form(s, rho_l, rho_r, 0.0, 1.0, h))
        el = ms.euler_lagrange_residual(res.theta, h)
        details[f"s={s},h={h}"] = {"theta_sup": sup, "pressure_gap": pgap, "el_residual": el}
        ok &= sup <= 1e-3 and pgap < 1e-6 and el < 1e-4
    worst = max(d["pressure_gap"] for d in details.values())
    return CheckResult("closed_form_pressure", ok, worst, 1e-6, details=details)


def check_finite_trend() -> CheckResult:
    """Finite-volume pressure approaches the limit; exact at ``s = 1/2``."""
    Ns = [4, 8, 16, 32, 64]
    rows1 = ms.finite_pressure_trend(1.0, 0.2, 0.8, -1.0, Ns)
    gaps = [r["gap"] for r in rows1]
    monotone = all(b < a for a, b in zip(gaps[:-1], gaps[1:]))
    rows_half = ms.finite_pressure_trend(0.5, 0.2, 0.8, -1.0, Ns)
    half = max(r["gap"] for r in rows_half)
    passed = gaps[-1] < 0.05 and monotone and half < 1e-12
    return CheckResult("finite_pressure_trend", passed, gaps[-1], 0.05,
                       details={"s=1 gaps": gaps, "monotone": monotone, "s=1/2 max gap": half})


def check_rate_zero() -> CheckResult:
    """Rate function vanishes at the typical profile and is positive nearby."""
    s, rho_l, rho_r = 0.5, 0.2, 0.8
    typ = ms.typical_profile(s, rho_l, rho_r)
    res = ms.rate_function(s, rho_l, rho_r, typ)
    lin = rho_l + (rho_r - rho_l) * res.theta.x
    lin_gap = float(np.max(np.abs(res.theta.values - lin)))
    bar = typ.func
    perturbations = {
        "+0.1": lambda x: bar(x) + 0.1,
        "-0.1": lambda x: bar(x) - 0.1,
        "sine": lambda x: bar(x) + 0.05 * math.pi * np.sin(math.pi * np.asarray(x)),
        "cosine": lambda x: bar(x) + 0.05 * math.pi * np.cos(math.pi * np.asarray(x)),
    }
    values = {k: ms.rate_function(s, rho_l, rho_r, f).value for k, f in perturbations.items()}
    passed = res.value < 1e-8 and lin_gap < 1e-6 and min(values.values()) > 1e-3
    return CheckResult("rate_zero_at_typical", passed, abs(res.value), 1e-8,
                       details={"linear_gap": lin_gap, "perturbed": values})


def check_additivity(M: int = 200) -> CheckResult:
    """Two- and three-split additivity for pressure and rate function."""
    s, rho_l, rho_r = 0.5, 0.2, 0.8
    details, ok = {}, True
    worst = 0.0
    smooth_h = lambda x: 0.5 * np.sin(2.0 * np.pi * np.asarray(x))  # noqa: E731
    smooth_rho = lambda x: 0.3 + 0.5 * np.asarray(x) ** 2  # noqa: E731
    const_rho = lambda x: np.full_like(np.asarray(x, dtype=float), 0.7)  # noqa: E731
    cases = [
        ("pressure const 2", ms.additivity_check_pressure, -1.0, [0.5], 1e-4),
        ("pressure const 3", ms.additivity_check_pressure, -1.0, [0.3, 0.7], 1e-4),
        ("pressure smooth 2", ms.additivity_check_pressure, smooth_h, [0.5], 1e-3),
        ("pressure smooth 3", ms.additivity_check_pressure, smooth_h, [0.3, 0.7], 1e-3),
        ("rate const 2", ms.additivity_check_rate, const_rho, [0.5], 1e-4),
        ("rate const 3", ms.additivity_check_rate, const_rho, [0.3, 0.7], 1e-4),
        ("rate smooth 2", ms.additivity_check_rate, smooth_rho, [0.5], 1e-3),
        ("rate smooth 3", ms.additivity_check_rate, smooth_rho, [0.3, 0.7], 1e-3),
    ]
    for name, fn, inp, splits, tol in cases:
        rep = fn(s, rho_l, rho_r, inp, splits, M=M)
        details[name] = rep.to_dict()
        ok &= rep.gap < tol
        worst = max(worst, rep.gap / tol)
    zero = ms.additivity_check_pressure(s, rho_l, rho_r, 0.0, [0.3, 0.7], M=M)
    lin = [rho_l + x * (rho_r - rho_l) for x in (0.3, 0.7)]
    zgap = float(np.max(np.abs(np.asarray(zero.intermediates) - lin)))
    ok &= zgap < 1e-6
    details["zero field intermediates gap"] = zgap
    # gap is the worst gap/tolerance ratio over all cases
    return CheckResult("additivity", ok, worst, 1.0, details=details)


def check_nonconvexity() -> CheckResult:
    """Midpoint-convexity failure of the rate function certifies that the
    Legendre transform of the pressure lies strictly below it."""
    bump = lambda x: 2.85 * np.exp(-np.asarray(x) / 0.2)  # noqa: E731
    w = ms.nonconvexity_witness(0.5, 0.05, 1.0, lambda x: 3.0 + bump(x), lambda x: 3.0 - bump(x),
                                M=200)
    passed = w["I_mid"] - w["legendre_upper"] > 1e-3 and w["legendre_lower"] <= w["legendre_upper"]
    return CheckResult("nonconvexity_witness", passed, w["I_mid"] - w["legendre_upper"], 1e-3,
                       details=w)


CHECKS = {
    "rate_identity": check_rate_identity,
    "equilibrium_stationarity": check_equilibrium_stationarity,
    "ness_triple": check_ness_triple,
    "mean_profile": check_mean_profile,
    "simulator": check_simulator,
    "mgf_equivalence": check_mgf_equivalence,
    "s_half_size_independence": check_s_half,
    "finite_sum_and_laplace": check_finite_sum_and_laplace,
    "closed_form_pressure": check_closed_pressure,
    "finite_pressure_trend": check_finite_trend,
    "rate_zero_at_typical": check_rate_zero,
    "additivity": check_additivity,
    "nonconvexity_witness": check_nonconvexity,
}


def run_checks(names=None) -> list:
    """Run the named checks (all by default) in battery order."""
    names = list(CHECKS) if not names else list(names)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown checks: {', '.join(unknown)}")
    out = []
    for name in names:
        t0 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = CHECKS[name]()
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out
