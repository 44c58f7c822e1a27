"""Acceptance battery: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see only these lines; the
lines are also printed under plain ``pytest -v``.
"""
import time

import pytest

from harmonic_ness.verify import CHECKS

# criterion -> (check name, comparison on the reported gap)
CRITERIA = [
    ("rate_identity", "lt"),
    ("equilibrium_stationarity", "le"),
    ("ness_triple", "lt"),
    ("mean_profile", "lt"),
    ("simulator", "lt"),
    ("mgf_equivalence", "lt"),
    ("s_half_size_independence", "lt"),
    ("finite_sum_and_laplace", "lt"),
    ("closed_form_pressure", "lt"),
    ("finite_pressure_trend", "lt"),
    ("rate_zero_at_typical", "lt"),
    ("additivity", "lt"),
    # the witness gap must exceed its threshold
    ("nonconvexity_witness", "gt"),
]


@pytest.mark.parametrize("index,name,cmp", [(i + 1, n, c) for i, (n, c) in enumerate(CRITERIA)],
                         ids=[n for n, _ in CRITERIA])
def test_criterion(index, name, cmp, capsys):
    t0 = time.perf_counter()
    res = CHECKS[name]()
    res.seconds = time.perf_counter() - t0
    with capsys.disabled():
        print(f"\n[{index:2d}] {res.line()}")
    ok = {"lt": res.gap < res.tol, "le": res.gap <= res.tol, "gt": res.gap > res.tol}[cmp]
    assert res.passed and ok, res.details
