"""Model parameters, elementary distributions and the truncated generator.

The open harmonic process lives on ``N`` sites, each holding a nonnegative
number of particles.  ``k`` particles leave a site holding ``n`` at rate
``jump_rate(s, k, n)`` towards each neighbour (or reservoir), and the
reservoirs at sites ``1`` and ``N`` inject ``k`` particles at rate
``(1/k) * (rho / (1 + rho))**k``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve
from scipy.special import gammaln, xlogy

__all__ = [
    "ModelParams",
    "Configuration",
    "TruncatedMeasure",
    "TruncatedGenerator",
    "jump_rate",
    "jump_rates",
    "total_exit_rate",
    "exit_rate_table",
    "injection_rate",
    "negbin_pmf",
    "negbin_mgf",
    "equilibrium_product_measure",
    "build_truncated_generator",
    "stationary_distribution",
]

MAX_STATES = 10**7


@dataclass(frozen=True)
class ModelParams:
    """Spin ``s``, number of sites ``N`` and reservoir densities.

    The reservoir densities must satisfy ``rho_l <= rho_r``.  Use
    :meth:`oriented` to accept either ordering; it mirrors the chain
    (site ``i`` becomes ``N + 1 - i``) and sets ``reflected``.
    """

    s: float
    N: int
    rho_l: float
    rho_r: float
    reflected: bool = False

    def __post_init__(self):
        if not (self.s > 0 and math.isfinite(self.s)):
            raise ValueError(f"spin s must be positive and finite, got {self.s}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        for name in ("rho_l", "rho_r"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite nonnegative number, got {v}")
        if self.rho_l > self.rho_r:
            raise ValueError(
                f"rho_l={self.rho_l} exceeds rho_r={self.rho_r}; "
                "use ModelParams.oriented(...) to reflect the chain"
            )

    @classmethod
    def oriented(cls, s, N, rho_l, rho_r):
        """Build parameters, swapping the reservoirs if ``rho_l > rho_r``."""
        if rho_l > rho_r:
            return cls(s, N, rho_r, rho_l, reflected=True)
        return cls(s, N, rho_l, rho_r)

    @property
    def two_s(self) -> float:
        return 2.0 * self.s

    @property
    def n_order(self) -> float:
        """Number of uniforms ``2s(N+1) - 1`` behind the order-statistics picture."""
        return 2.0 * self.s * (self.N + 1) - 1.0

    @property
    def is_equilibrium(self) -> bool:
        return self.rho_l == self.rho_r

    @property
    def integer_two_s(self) -> bool:
        return abs(self.two_s - round(self.two_s)) < 1e-12

    def with_N(self, N: int) -> "ModelParams":
        return replace(self, N=N)

    def mean_profile(self) -> np.ndarray:
        """Exact mean occupations ``2s (rho_l + (rho_r - rho_l) i / (N + 1))``."""
        i = np.arange(1, self.N + 1)
        return self.two_s * (self.rho_l + (self.rho_r - self.rho_l) * i / (self.N + 1))

    def to_dict(self) -> dict:
        return {"s": self.s, "N": self.N, "rho_l": self.rho_l, "rho_r": self.rho_r,
                "reflected": self.reflected}


@dataclass(frozen=True)
class Configuration:
    """Particle counts ``eta_i`` on sites ``1..N`` (stored 0-based)."""

    occupations: tuple

    def __post_init__(self):
        occ = tuple(int(v) for v in self.occupations)
        if len(occ) == 0 or min(occ) < 0:
            raise ValueError("occupations must be a nonempty vector of nonnegative integers")
        object.__setattr__(self, "occupations", occ)

    @property
    def N(self) -> int:
        return len(self.occupations)

    @property
    def total(self) -> int:
        return sum(self.occupations)

    def tail_count(self, i: int) -> int:
        """Particles on sites ``i..N`` (1-based ``i``); zero for ``i > N``."""
        return sum(self.occupations[i - 1:])

    def as_array(self) -> np.ndarray:
        return np.asarray(self.occupations, dtype=np.int64)


def _log_gamma_ratio_rate(s, k, n):
    # log of Gamma(n+1)Gamma(n-k+2s) / (Gamma(n-k+1)Gamma(n+2s)); each bracket
    # vanishes identically when 2s == 1
    return (gammaln(n + 1.0) - gammaln(n + 2.0 * s)) + (
        gammaln(n - k + 2.0 * s) - gammaln(n - k + 1.0))


def jump_rate(s: float, k: int, n: int) -> float:
    """Rate at which ``k`` of ``n`` particles jump to a given neighbour."""
    if k < 1 or k > n:
        return 0.0
    if k <= 64:
        return float(np.prod(_rate_factors(s, n)[:k]) / k)
    return float(np.exp(_log_gamma_ratio_rate(s, k, n)) / k)


def _rate_factors(s: float, n: int) -> np.ndarray:
    # the gamma ratio telescopes into prod_{j<k} (n - j)/(n - j - 1 + 2s)
    j = np.arange(n, dtype=float)
    return (n - j) / (n - j - 1.0 + 2.0 * s)


def jump_rates(s: float, n: int) -> np.ndarray:
    """Vector of ``jump_rate(s, k, n)`` for ``k = 1..n``."""
    if n < 1:
        return np.zeros(0)
    k = np.arange(1, n + 1, dtype=float)
    return np.cumprod(_rate_factors(s, n)) / k


def total_exit_rate(s: float, n: int) -> float:
    """Shifted harmonic number ``sum_{k<=n} 1/(k + 2s - 1)``."""
    if n <= 0:
        return 0.0
    return math.fsum(1.0 / (k + 2.0 * s - 1.0) for k in range(1, n + 1))


def exit_rate_table(s: float, n_max: int) -> np.ndarray:
    """``total_exit_rate(s, n)`` for ``n = 0..n_max``."""
    out = np.zeros(n_max + 1)
    if n_max > 0:
        out[1:] = np.cumsum(1.0 / (np.arange(1, n_max + 1) + 2.0 * s - 1.0))
    return out


def injection_rate(rho: float) -> float:
    """Total reservoir injection rate ``sum_k (1/k) x^k = log(1 + rho)``."""
    return math.log1p(rho)


def negbin_pmf(s: float, theta: float, n):
    """Negative Binomial law with shape ``2s`` and mean ``2s * theta``.

    ``n`` may be an integer or an integer array.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    n_arr = np.asarray(n, dtype=float)
    two_s = 2.0 * s
    logp = (gammaln(two_s + n_arr) - gammaln(n_arr + 1.0) - gammaln(two_s)
            + xlogy(n_arr, theta) - n_arr * math.log1p(theta) - two_s * math.log1p(theta))
    out = np.exp(logp)
    if theta == 0:
        out = np.where(n_arr == 0, 1.0, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def negbin_mgf(s: float, theta: float, h: float) -> float:
    """``E[exp(h * eta)]`` for ``eta`` Negative Binomial with parameter ``theta``."""
    base = 1.0 - theta * math.expm1(h)
    if base <= 0:
        raise ValueError(
            f"h={h} outside the domain of the moment generating function at theta={theta}")
    return base ** (-2.0 * s)


@dataclass
class TruncatedMeasure:
    """Probabilities on the box ``{0..cap}^N`` and the mass lying outside it."""

    probs: np.ndarray
    tail_mass: float
    cap: int


def equilibrium_product_measure(params: ModelParams, cap: int) -> TruncatedMeasure:
    """Reversible product measure at ``rho_l == rho_r`` restricted to a box."""
    if not params.is_equilibrium:
        raise ValueError("the product measure is invariant only when rho_l == rho_r")
    marginal = negbin_pmf(params.s, params.rho_l, np.arange(cap + 1))
    probs = marginal
    for _ in range(params.N - 1):
        probs = np.multiply.outer(probs, marginal)
    probs = np.asarray(probs).reshape((cap + 1,) * params.N)
    tail = max(0.0, 1.0 - math.fsum(probs.ravel()))
    return TruncatedMeasure(probs=probs, tail_mass=tail, cap=cap)


@dataclass
class TruncatedGenerator:
    """Generator of the chain restricted to ``{0..cap}^N``.

    ``matrix[x, y]`` is the rate from state ``x`` to ``y``.  Transitions that
    would leave the box are dropped; their rate per source state is kept in
    ``leak``.  By default the diagonal is minus the retained outflow, so rows
    sum to zero.  With ``conservative=False`` the diagonal also carries the
    dropped rate and rows sum to ``-leak`` (a sub-generator).

    For a stationary law ``mu`` of the full chain, global balance on the box
    makes the inflow from outside equal the outflow ``leak_mass(mu)``, hence
    ``|mu^T L|`` is bounded entrywise by ``leak_mass(mu)`` for either
    diagonal convention.
    """

    cap: int
    N: int
    matrix: sparse.csr_matrix
    leak: np.ndarray
    conservative: bool = True
    shape: tuple = field(init=False)

    def __post_init__(self):
        self.shape = (self.cap + 1,) * self.N

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    def index(self, eta) -> int:
        return int(np.ravel_multi_index(tuple(eta), self.shape))

    def state(self, idx: int) -> tuple:
        return tuple(int(v) for v in np.unravel_index(idx, self.shape))

    def states(self) -> np.ndarray:
        """All states as an ``(n_states, N)`` integer array, in index order."""
        grids = np.indices(self.shape).reshape(self.N, -1).T
        return grids

    def leak_mass(self, weights) -> float:
        """Dropped rate integrated against a (box) measure."""
        w = np.asarray(weights, dtype=float).ravel()
        return float(np.dot(w, self.leak))

    def left_residual(self, weights) -> np.ndarray:
        """``weights^T L`` as a flat vector."""
        w = np.asarray(weights, dtype=float).ravel()
        return self.matrix.T @ w


def build_truncated_generator(params: ModelParams, cap: int, conservative: bool = True,
                              max_states: int = MAX_STATES) -> TruncatedGenerator:
    """Assemble the sparse generator on the box ``{0..cap}^N``."""
    if cap < 1:
        raise ValueError("cap must be at least 1")
    N = params.N
    n_states = (cap + 1) ** N
    if n_states > max_states:
        raise MemoryError(
            f"state space (cap+1)^N = {n_states} exceeds the guard of {max_states} states")
    s = params.s
    shape = (cap + 1,) * N
    states = np.indices(shape).reshape(N, -1).T
    src_all = np.arange(n_states)
    strides = np.array([int(np.prod(shape[i + 1:])) for i in range(N)], dtype=np.int64)

    phi = np.zeros((cap + 1, cap + 1))
    for n in range(1, cap + 1):
        phi[n, 1:n + 1] = jump_rates(s, n)
    exit_tab = exit_rate_table(s, cap)

    rows, cols, vals = [], [], []
    out_total = np.zeros(n_states)
    leak = np.zeros(n_states)

    def _emit(mask, shift, rate):
        rows.append(src_all[mask])
        cols.append(src_all[mask] + shift)
        vals.append(rate)

    for i in range(N):
        occ = states[:, i]
        # every particle group leaving site i has two targets (neighbour or reservoir)
        out_total += 2.0 * exit_tab[occ]
        for k in range(1, cap + 1):
            can = occ >= k
            if not can.any():
                continue
            rate = phi[occ, k]
            # towards i-1 (or the left reservoir)
            if i == 0:
                _emit(can, -k * strides[i], rate[can])
            else:
                ok = can & (states[:, i - 1] + k <= cap)
                _emit(ok, -k * strides[i] + k * strides[i - 1], rate[ok])
                bad = can & ~ok
                leak[bad] += rate[bad]
            # towards i+1 (or the right reservoir)
            if i == N - 1:
                _emit(can, -k * strides[i], rate[can])
            else:
                ok = can & (states[:, i + 1] + k <= cap)
                _emit(ok, -k * strides[i] + k * strides[i + 1], rate[ok])
                bad = can & ~ok
                leak[bad] += rate[bad]

    for site, rho in ((0, params.rho_l), (N - 1, params.rho_r)):
        if rho <= 0:
            continue
        x = rho / (1.0 + rho)
        total = injection_rate(rho)
        out_total += total
        occ = states[:, site]
        retained = np.zeros(n_states)
        for k in range(1, cap + 1):
            ok = occ + k <= cap
            if not ok.any():
                break
            r = x**k / k
            _emit(ok, k * strides[site], np.full(int(ok.sum()), r))
            retained[ok] += r
        leak += np.maximum(total - retained, 0.0)

    r = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    c = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    v = np.concatenate(vals) if vals else np.zeros(0)
    diag = -(out_total - leak) if conservative else -out_total
    r = np.concatenate([r, src_all])
    c = np.concatenate([c, src_all])
    v = np.concatenate([v, diag])
    mat = sparse.csr_matrix((v, (r, c)), shape=(n_states, n_states))
    mat.sum_duplicates()
    return TruncatedGenerator(cap=cap, N=N, matrix=mat, leak=leak, conservative=conservative)


def stationary_distribution(params: ModelParams, cap: int) -> np.ndarray:
    """Stationary law of the conservatively truncated chain, shaped ``(cap+1,)*N``."""
    gen = build_truncated_generator(params, cap, conservative=True)
    A = gen.matrix.T.tolil()
    A[0, :] = 1.0
    b = np.zeros(gen.n_states)
    b[0] = 1.0
    pi = spsolve(A.tocsc(), b)
    return np.asarray(pi).reshape(gen.shape)
