"""Gauss-Jacobi rules for expectations over the ordered Dirichlet simplex.

Let ``R ~ Dirichlet(2s, ..., 2s)`` with ``N + 1`` components and
``V_i = R_1 + ... + R_i``.  Two independent factorizations of the law of
``V`` give tensor-product rules:

* ``"backward"``: ``1 - V_i = t_1 t_2 ... t_i`` with independent
  ``t_i ~ Beta(2s(N + 1 - i), 2s)``.
* ``"forward"`` (stick breaking from the left): ``V_i = V_{i-1} +
  (1 - V_{i-1}) y_i`` with independent ``y_i ~ Beta(2s, 2s(N + 1 - i))``.

Each Beta factor is integrated with a Gauss-Jacobi rule whose weight carries
the endpoint exponents, so the singular factors ``(V_i - V_{i-1})^(2s-1)``
never reach the integrand.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

__all__ = ["beta_rule", "dirichlet_cumulative_rule", "default_nodes"]


@lru_cache(maxsize=256)
def _beta_rule_cached(a: float, b: float, n: int):
    x, w = roots_jacobi(n, b - 1.0, a - 1.0)
    t = 0.5 * (1.0 + x)
    w = w / w.sum()
    t.setflags(write=False)
    w.setflags(write=False)
    return t, w


def beta_rule(a: float, b: float, n: int):
    """Nodes and probability weights integrating polynomials of degree
    ``2n - 1`` exactly against the ``Beta(a, b)`` law."""
    if a <= 0 or b <= 0:
        raise ValueError("Beta parameters must be positive")
    if n < 1:
        raise ValueError("need at least one node")
    return _beta_rule_cached(float(a), float(b), int(n))


def default_nodes(N: int, budget: float = 2e6, cap: int = 40) -> int:
    """Nodes per dimension so that the tensor rule has about ``budget`` points."""
    return int(max(4, min(cap, np.floor(budget ** (1.0 / N)))))


def dirichlet_cumulative_rule(s: float, N: int, n: int | None = None,
                              layout: str = "backward"):
    """Tensor rule for ``E[f(V_1, ..., V_N)]``.

    Returns
    -------
    V : ndarray, shape (n**N, N)
        Nondecreasing node vectors in ``[0, 1]``.
    w : ndarray, shape (n**N,)
        Probability weights summing to one.
    """
    if n is None:
        n = default_nodes(N)
    two_s = 2.0 * s
    if layout == "backward":
        rules = [beta_rule(two_s * (N + 1 - i), two_s, n) for i in range(1, N + 1)]
    elif layout == "forward":
        rules = [beta_rule(two_s, two_s * (N + 1 - i), n) for i in range(1, N + 1)]
    else:
        raise ValueError(f"unknown layout {layout!r}")
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wgrids = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    T = np.stack([g.ravel() for g in grids], axis=1)
    w = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    if layout == "backward":
        V = 1.0 - np.cumprod(T, axis=1)
    else:
        V = np.empty_like(T)
        prev = np.zeros(T.shape[0])
        for i in range(N):
            prev = prev + (1.0 - prev) * T[:, i]
            V[:, i] = prev
    return V, w
