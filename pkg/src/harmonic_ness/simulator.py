"""Event-driven simulation of the open harmonic process.

Each site carries two exit channels (left and right) with total rate
``total_exit_rate(s, n)``; a channel pointing outside the lattice empties
into the reservoir.  The reservoirs inject a logarithmically distributed
number of particles at total rate ``log(1 + rho)``.  Uniform variates come
from counter-based Philox streams, one per replica, derived from a
``SeedSequence``; the event loop itself is compiled with numba and consumes
the variates in fixed-size blocks, so outputs depend only on the seed.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .model import Configuration, ModelParams, exit_rate_table, jump_rates

__all__ = [
    "SimState",
    "ReplicaStats",
    "removal_cdf",
    "sample_removal_size",
    "sample_injection_size",
    "total_event_rate",
    "step",
    "run",
]

_TABLE_NMAX = 256
_BLOCK = 1 << 18


# ---------------------------------------------------------------------------
# jump-size samplers
# ---------------------------------------------------------------------------

_cdf_cache: dict = {}


def removal_cdf(s: float, n: int) -> np.ndarray:
    """Cumulative normalized weights of the jump size ``k = 1..n``."""
    key = (float(s), int(n))
    out = _cdf_cache.get(key)
    if out is None:
        w = jump_rates(s, n)
        out = np.cumsum(w) / w.sum()
        out[-1] = 1.0
        out.setflags(write=False)
        if n <= 4 * _TABLE_NMAX:
            _cdf_cache[key] = out
    return out


def sample_removal_size(s: float, n: int, u: float) -> int:
    """Number of particles leaving a site holding ``n``, by inversion of ``u``."""
    if n < 1:
        raise ValueError("cannot remove particles from an empty site")
    return int(np.searchsorted(removal_cdf(s, n), u, side="right")) + 1 if u < 1.0 else n


def sample_injection_size(rho: float, u: float) -> int:
    """Logarithmic-distribution inversion with ``x = rho/(1 + rho)``."""
    if not rho > 0:
        raise ValueError("injection channel is absent for rho = 0")
    return int(_injection_size(rho / (1.0 + rho), math.log1p(rho), u))


def _build_tables(s: float, n_max: int):
    cdf = np.ones((n_max + 1, n_max + 1))
    for n in range(1, n_max + 1):
        cdf[n, 1:n + 1] = removal_cdf(s, n)
    return cdf, exit_rate_table(s, n_max)


@numba.njit(cache=True, nogil=True)
def _exit_rate(n, s2, exit_tab):
    if n < exit_tab.shape[0]:
        return exit_tab[n]
    r = exit_tab[exit_tab.shape[0] - 1]
    for k in range(exit_tab.shape[0], n + 1):
        r += 1.0 / (k + s2 - 1.0)
    return r


@numba.njit(cache=True, nogil=True)
def _removal_size(n, u, s2, cdf):
    if n < cdf.shape[0]:
        lo, hi = 1, n
        # first k with cdf[n, k] > u
        while lo < hi:
            mid = (lo + hi) // 2
            if cdf[n, mid] > u:
                hi = mid
            else:
                lo = mid + 1
        return lo
    # large n: walk the unnormalized weights computed on the fly
    base = math.lgamma(n + 1.0) - math.lgamma(n + s2)
    tot = 0.0
    for k in range(1, n + 1):
        tot += math.exp(base + math.lgamma(n - k + s2) - math.lgamma(n - k + 1.0)) / k
    target = u * tot
    acc = 0.0
    for k in range(1, n + 1):
        acc += math.exp(base + math.lgamma(n - k + s2) - math.lgamma(n - k + 1.0)) / k
        if acc > target:
            return k
    return n


@numba.njit(cache=True, nogil=True)
def _injection_size(x, norm, u):
    target = u * norm
    term = x
    acc = x
    k = 1
    while acc <= target and k < 100000000:
        k += 1
        term *= x
        acc += term / k
    return k


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------

@dataclass
class SimState:
    """Configuration, clock and random stream of one trajectory."""

    config: Configuration
    time: float = 0.0
    rng: np.random.Generator = field(default_factory=lambda: np.random.Generator(np.random.Philox()))


def total_event_rate(params: ModelParams, eta) -> float:
    """Sum of all channel rates in configuration ``eta``."""
    tab = exit_rate_table(params.s, max(int(max(eta, default=0)), 1))
    return float(2.0 * sum(tab[int(n)] for n in eta) + math.log1p(params.rho_l)
                 + math.log1p(params.rho_r))


def step(state: SimState, params: ModelParams):
    """Advance one event.  Returns ``(new_state, dwell)``; a frozen state
    (total rate zero) returns an infinite dwell and is left unchanged."""
    eta = np.array(state.config.occupations, dtype=np.int64)
    N = eta.size
    tab = exit_rate_table(params.s, max(int(eta.max(initial=0)), 1))
    exits = tab[eta]
    inj_l, inj_r = math.log1p(params.rho_l), math.log1p(params.rho_r)
    R = 2.0 * exits.sum() + inj_l + inj_r
    if R <= 0.0:
        return SimState(state.config, state.time, state.rng), math.inf
    u = state.rng.random(3)
    dwell = -math.log1p(-u[0]) / R
    target = u[1] * R
    before = int(eta.sum())
    boundary = False
    acc = 0.0
    chosen = None
    for i in range(N):
        for d in (-1, 1):
            acc += exits[i]
            if chosen is None and target < acc:
                chosen = (i, d)
    if chosen is None and inj_l + inj_r <= 0.0:
        chosen = (N - 1, 1)
    if chosen is not None:
        i, d = chosen
        k = sample_removal_size(params.s, int(eta[i]), float(u[2]))
        eta[i] -= k
        j = i + d
        if 0 <= j < N:
            eta[j] += k
        else:
            boundary = True
    else:
        boundary = True
        if target < acc + inj_l or inj_r == 0.0:
            eta[0] += sample_injection_size(params.rho_l, float(u[2]))
        else:
            eta[N - 1] += sample_injection_size(params.rho_r, float(u[2]))
    if not boundary:
        assert int(eta.sum()) == before, "bulk move changed the particle number"
    return SimState(Configuration(tuple(int(v) for v in eta)), state.time + dwell, state.rng), dwell


# ---------------------------------------------------------------------------
# compiled event loop
# ---------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _simulate_block(eta, U, s2, cdf, exit_tab, xl, nl, xr, nr, inj_l, inj_r,
                    ev0, record_from, batch_len, hist, sum_eta, sum_pair,
                    flux, batch_time, batch_eta, clock):
    N = eta.shape[0]
    hmax = hist.shape[1] - 1
    exits = np.empty(N)
    for i in range(N):
        exits[i] = _exit_rate(eta[i], s2, exit_tab)
    n_done = 0
    for e in range(U.shape[0]):
        R = inj_l + inj_r
        for i in range(N):
            R += 2.0 * exits[i]
        if R <= 0.0:
            break
        dt = -math.log1p(-U[e, 0]) / R
        ev = ev0 + e
        clock[0] += dt
        if ev >= record_from:
            b = (ev - record_from) // batch_len
            if b >= batch_time.shape[0]:
                b = batch_time.shape[0] - 1
            batch_time[b] += dt
            for i in range(N):
                ni = eta[i]
                sum_eta[i] += dt * ni
                batch_eta[b, i] += dt * ni
                hist[i, ni if ni < hmax else hmax] += dt
                for j in range(i, N):
                    sum_pair[i, j] += dt * ni * eta[j]
        # choose a channel
        target = U[e, 1] * R
        acc = 0.0
        site = -1
        direction = 0
        for i in range(N):
            acc += exits[i]
            if target < acc:
                site = i
                direction = -1
                break
            acc += exits[i]
            if target < acc:
                site = i
                direction = 1
                break
        if site < 0 and inj_l + inj_r <= 0.0:
            # rounding pushed the target past the last site channel
            site = N - 1
            direction = 1
        if site >= 0:
            k = _removal_size(eta[site], U[e, 2], s2, cdf)
            eta[site] -= k
            exits[site] = _exit_rate(eta[site], s2, exit_tab)
            j = site + direction
            if j >= 0 and j < N:
                eta[j] += k
                exits[j] = _exit_rate(eta[j], s2, exit_tab)
            if ev >= record_from:
                # bond index b sits between sites b-1 and b; rightward positive
                if direction == 1:
                    flux[site + 1] += k
                else:
                    flux[site] -= k
        else:
            if target < acc + inj_l or inj_r == 0.0:
                k = _injection_size(xl, nl, U[e, 2])
                eta[0] += k
                exits[0] = _exit_rate(eta[0], s2, exit_tab)
                if ev >= record_from:
                    flux[0] += k
            else:
                k = _injection_size(xr, nr, U[e, 2])
                eta[N - 1] += k
                exits[N - 1] = _exit_rate(eta[N - 1], s2, exit_tab)
                if ev >= record_from:
                    flux[N] -= k
        n_done += 1
    return n_done


@dataclass
class ReplicaStats:
    """Time-weighted occupation statistics after burn-in.

    ``hist[i, n]`` is the time site ``i`` spent holding ``n`` particles (the
    last column collects ``n >= hist_max``).  ``flux[b]`` is the net number of
    particles moved rightward across bond ``b`` (bond 0 joins the left
    reservoir to site 1, bond ``N`` joins site ``N`` to the right reservoir).
    """

    N: int
    hist: np.ndarray
    sum_eta: np.ndarray
    sum_pair: np.ndarray
    flux: np.ndarray
    batch_time: np.ndarray
    batch_eta: np.ndarray
    events: int
    recorded_events: int
    time: float
    recorded_time: float
    replicas: int = 1
    frozen: bool = False

    @property
    def mean(self) -> np.ndarray:
        return self.sum_eta / self.recorded_time

    @property
    def second_moment(self) -> np.ndarray:
        m = self.sum_pair / self.recorded_time
        return np.triu(m) + np.triu(m, 1).T

    @property
    def var(self) -> np.ndarray:
        return np.diag(self.second_moment) - self.mean**2

    @property
    def covariance(self) -> np.ndarray:
        return self.second_moment - np.outer(self.mean, self.mean)

    @property
    def marginals(self) -> np.ndarray:
        return self.hist / self.hist.sum(axis=1, keepdims=True)

    @property
    def standard_error(self) -> np.ndarray:
        """Batch-means standard error of the per-site means."""
        t = self.batch_time
        keep = t > 0
        t, be = t[keep], self.batch_eta[keep]
        B = t.size
        if B < 2:
            return np.full(self.N, np.nan)
        means = be / t[:, None]
        wt = t / t.sum()
        grand = wt @ means
        var = (wt[:, None] * (means - grand) ** 2).sum(axis=0) / (1.0 - (wt**2).sum())
        return np.sqrt(var * (wt**2).sum())

    @property
    def current(self) -> np.ndarray:
        return self.flux / self.recorded_time

    @classmethod
    def merge(cls, parts: list) -> "ReplicaStats":
        """Merge in list order, so results do not depend on scheduling."""
        first = parts[0]
        hmax = max(p.hist.shape[1] for p in parts)

        def pad(h):
            return np.pad(h, ((0, 0), (0, hmax - h.shape[1])))
        return cls(
            N=first.N,
            hist=sum((pad(p.hist) for p in parts[1:]), pad(first.hist)),
            sum_eta=sum((p.sum_eta for p in parts[1:]), first.sum_eta.copy()),
            sum_pair=sum((p.sum_pair for p in parts[1:]), first.sum_pair.copy()),
            flux=sum((p.flux for p in parts[1:]), first.flux.copy()),
            batch_time=np.concatenate([p.batch_time for p in parts]),
            batch_eta=np.concatenate([p.batch_eta for p in parts]),
            events=sum(p.events for p in parts),
            recorded_events=sum(p.recorded_events for p in parts),
            time=sum(p.time for p in parts),
            recorded_time=sum(p.recorded_time for p in parts),
            replicas=sum(p.replicas for p in parts),
            frozen=any(p.frozen for p in parts),
        )

    def to_rows(self) -> list:
        """Rows ``(site, mean, var, hist_bin, hist_mass)`` for CSV output."""
        rows = []
        marg, mean, var = self.marginals, self.mean, self.var
        for i in range(self.N):
            for n in range(marg.shape[1]):
                if marg[i, n] > 0:
                    rows.append((i + 1, mean[i], var[i], n, marg[i, n]))
        return rows

    def summary(self) -> dict:
        return {
            "N": self.N,
            "events": self.events,
            "recorded_events": self.recorded_events,
            "time": self.time,
            "recorded_time": self.recorded_time,
            "replicas": self.replicas,
            "frozen": self.frozen,
            "mean": self.mean.tolist(),
            "standard_error": self.standard_error.tolist(),
            "var": self.var.tolist(),
            "current": self.current.tolist(),
        }


def _run_replica(params: ModelParams, events: int, seed_seq: np.random.SeedSequence,
                 burn_in: float, hist_max: int, batches: int, initial) -> ReplicaStats:
    N = params.N
    s2 = 2.0 * params.s
    cdf, exit_tab = _build_tables(params.s, _TABLE_NMAX)
    rng = np.random.Generator(np.random.Philox(seed_seq))
    eta = np.zeros(N, dtype=np.int64) if initial is None else np.array(initial, dtype=np.int64)
    xl = params.rho_l / (1.0 + params.rho_l)
    xr = params.rho_r / (1.0 + params.rho_r)
    inj_l, inj_r = math.log1p(params.rho_l), math.log1p(params.rho_r)
    record_from = int(math.floor(burn_in * events))
    batch_len = max(1, (events - record_from + batches - 1) // batches)
    hist = np.zeros((N, hist_max + 1))
    sum_eta = np.zeros(N)
    sum_pair = np.zeros((N, N))
    flux = np.zeros(N + 1, dtype=np.int64)
    batch_time = np.zeros(batches)
    batch_eta = np.zeros((batches, N))
    clock = np.zeros(1)
    done = 0
    frozen = False
    while done < events:
        m = min(_BLOCK, events - done)
        U = rng.random((m, 3))
        n = _simulate_block(eta, U, s2, cdf, exit_tab, xl, inj_l, xr, inj_r, inj_l, inj_r,
                            done, record_from, batch_len, hist, sum_eta, sum_pair, flux,
                            batch_time, batch_eta, clock)
        done += n
        if n < m:
            frozen = True
            break
    return ReplicaStats(N=N, hist=hist, sum_eta=sum_eta, sum_pair=sum_pair, flux=flux,
                        batch_time=batch_time, batch_eta=batch_eta, events=done,
                        recorded_events=max(0, done - record_from), time=float(clock[0]),
                        recorded_time=float(batch_time.sum()), frozen=frozen)


def run(params: ModelParams, events: int, replicas: int = 1, seed: int = 0,
        burn_in: float = 0.2, hist_max: int = 200, batches: int = 50, workers: int = 1,
        initial=None) -> ReplicaStats:
    """Simulate ``replicas`` independent trajectories of ``events`` events each.

    Replica ``r`` uses the ``r``-th child of ``SeedSequence(seed)``; the
    merged statistics are assembled in replica order.  Statistics are
    time-weighted and exclude the first ``burn_in`` fraction of events.
    """
    if events <= 0:
        raise ValueError("event budget must be positive")
    if replicas < 1:
        raise ValueError("need at least one replica")
    if not 0.0 <= burn_in < 1.0:
        raise ValueError("burn_in must lie in [0, 1)")
    children = np.random.SeedSequence(seed).spawn(replicas)
    args = [(params, int(events), c, burn_in, hist_max, batches, initial) for c in children]
    if workers > 1 and replicas > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _run_replica(*a), args))
    else:
        parts = [_run_replica(*a) for a in args]
    return ReplicaStats.merge(parts)
