"""Monte Carlo check of the tensor and matrix tail bounds.

A population of ``N`` symmetric order-``k`` tensors is sampled ``n`` at a
time, with or without replacement, and the deviation ``||X - E X||`` is
compared with the closed-form bound on ``P(||X - E X|| >= t)``.

``X`` is the raw sum of the draws for the i.i.d. bound.  The
without-replacement bound has an exponent of order ``n t^2`` and is built on
a scalar inequality for the sample mean, so by default it is applied to the
mean of the draws; ``normalization="sum"`` applies it to the raw sum, where
it fails badly (deviations of the sum grow like ``sqrt(n)``).

For order 3 the norm is the power-iteration lower bound, which can only
under-report deviations.  At ``d <= 4`` a sphere-grid upper bound on the
norm is available as well, which makes the comparison two-sided.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .sampling import Scheme, TailBound, tail_bound
from .tensor import spectral_norm_lower_batch, symmetrize

__all__ = [
    "TailEstimate",
    "TensorPopulation",
    "bound_crossover",
    "default_normalization",
    "default_t_grid",
    "dominance_check",
    "gaussian_population",
    "grid_norm_upper",
    "rank1_population",
    "simulate_tail",
    "thread_count",
    "wilson_interval",
]

Z99 = NormalDist().inv_cdf(0.995)


def thread_count(default=1):
    """Worker cap from ``STM_THREADS`` (at least 1)."""
    raw = os.environ.get("STM_THREADS")
    if raw is None:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"STM_THREADS must be an integer, got {raw!r}") from None


def wilson_interval(successes, trials, z=Z99):
    """Wilson score interval for a binomial proportion; arrays allowed."""
    k = np.asarray(successes, dtype=float)
    p = k / trials
    denom = 1 + z**2 / trials
    center = (p + z**2 / (2 * trials)) / denom
    half = z * np.sqrt(p * (1 - p) / trials + z**2 / (4 * trials**2)) / denom
    # the endpoints are exactly 0 and 1 at k = 0 and k = trials; the
    # formula leaves round-off there
    lo = np.where(k == 0, 0.0, np.clip(center - half, 0.0, 1.0))
    hi = np.where(k == trials, 1.0, np.clip(center + half, 0.0, 1.0))
    return lo, hi


@dataclass(frozen=True)
class TensorPopulation:
    """``N`` symmetric tensors of order ``k`` stored as ``(N, d, ..., d)``."""

    members: np.ndarray
    recipe: str
    sigma: float
    seed: int

    @property
    def N(self):
        return self.members.shape[0]

    @property
    def order(self):
        return self.members.ndim - 1

    @property
    def dim(self):
        return self.members.shape[1]

    @property
    def mean(self):
        return self.members.mean(axis=0)

    def probe_range(self, probes=10_000, seed=0):
        """``max - min`` of ``Y(u_1, ..., u_k)`` over members and random unit tuples."""
        rng = np.random.default_rng([seed, 17])
        flat = self.members.reshape(self.N, -1)
        lo, hi = math.inf, -math.inf
        for start in range(0, probes, 1000):
            m = min(1000, probes - start)
            U = [rng.standard_normal((m, self.dim)) for _ in range(self.order)]
            U = [u / np.linalg.norm(u, axis=1, keepdims=True) for u in U]
            outer = U[0]
            for u in U[1:]:
                outer = np.einsum("ma,mb->mab", outer.reshape(m, -1), u).reshape(m, -1)
            vals = flat @ outer.T
            lo, hi = min(lo, vals.min()), max(hi, vals.max())
        return float(hi - lo)


def _unit(rng, N, d):
    A = rng.standard_normal((N, d))
    return A / np.linalg.norm(A, axis=1, keepdims=True)


def _outer_power(A, k):
    out = A
    for _ in range(k - 1):
        out = np.einsum("n...,nj->n...j", out, A)
    return out


def rank1_population(N, d, k=3, seed=0):
    """Members ``a (x) ... (x) a`` with unit ``a``; their forms lie in ``[-1, 1]``."""
    if k not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    A = _unit(np.random.default_rng(seed), N, d)
    return TensorPopulation(_outer_power(A, k), "rank1", 2.0, seed)


def gaussian_population(N, d, k=3, seed=0, probes=10_000):
    """Symmetrized standard Gaussian tensors.

    ``sigma`` is the larger of the probed range and ``2 max ||Y||_F``; the
    latter is a valid bound since the Frobenius norm dominates the
    spectral norm.
    """
    if k not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((N,) + (d,) * k)
    if k == 2:
        G = 0.5 * (G + G.transpose(0, 2, 1))
    elif k == 3:
        G = symmetrize(G)
    frob = float(np.linalg.norm(G.reshape(N, -1), axis=1).max())
    pop = TensorPopulation(G, "gaussian", 2.0 * frob, seed)
    probed = pop.probe_range(probes, seed)
    return TensorPopulation(G, "gaussian", max(probed, 2.0 * frob), seed)


def _norms(D, order, seed, restarts):
    # D has shape (B, d, ..., d)
    if order == 1:
        return np.linalg.norm(D, axis=1)
    if order == 2:
        return np.abs(np.linalg.eigvalsh(D)).max(axis=1)
    B, d = D.shape[0], D.shape[1]
    rng = np.random.default_rng([seed, 3])
    starts = rng.standard_normal((B, restarts, d))
    u, _, _ = np.linalg.svd(D.reshape(B, d, d * d), full_matrices=False)
    starts[:, 0] = u[:, :, 0]
    vals, _, _ = spectral_norm_lower_batch(D, starts, tol=1e-10, max_iter=500)
    return vals.max(axis=1)


def _fibonacci_sphere(m):
    i = np.arange(m) + 0.5
    phi = np.arccos(1 - 2 * i / m)
    golden = math.pi * (1 + math.sqrt(5))
    return np.stack([np.cos(golden * i) * np.sin(phi), np.sin(golden * i) * np.sin(phi), np.cos(phi)], axis=1)


_GRID_CACHE = {}


def _grid(points):
    if points not in _GRID_CACHE:
        Z = _fibonacci_sphere(points)
        rng = np.random.default_rng(5)
        # covering radius estimated from dense probes, inflated for safety
        worst = 1.0
        for _ in range(20):
            probe = _unit(rng, 2000, 3)
            worst = min(worst, float((probe @ Z.T).max(axis=1).min()))
        r = 1.5 * math.sqrt(max(0.0, 2 - 2 * worst))
        cubes = np.einsum("mi,mj,mk->mijk", Z, Z, Z).reshape(points, -1)
        _GRID_CACHE[points] = (cubes, r)
    return _GRID_CACHE[points]


def grid_norm_upper(D, points=20_000):
    """Upper bounds on the spectral norms of ``(B, 3, 3, 3)`` symmetric tensors.

    Uses ``||T|| <= max_grid |T[z]^3| / (1 - 3 r)`` for a sphere grid of
    covering radius ``r``; the cubic form is ``3 ||T||``-Lipschitz on the
    sphere.
    """
    D = np.asarray(D, dtype=float)
    if D.shape[1:] != (3, 3, 3):
        raise ValueError("grid norms are implemented for d = 3 order-3 tensors")
    cubes, r = _grid(points)
    if 3 * r >= 1:
        raise ValueError("grid too coarse")
    out = np.empty(D.shape[0])
    for start in range(0, D.shape[0], 256):
        block = D[start:start + 256].reshape(-1, 27)
        out[start:start + 256] = np.abs(block @ cubes.T).max(axis=1)
    return out / (1 - 3 * r)


@dataclass
class TailEstimate:
    t_grid: np.ndarray
    exceed: np.ndarray
    trials: int
    bound: np.ndarray
    informative: np.ndarray
    sum_deviations: np.ndarray
    n: int
    scheme: Scheme
    seed: int
    normalization: str = "sum"
    exceed_upper: np.ndarray | None = None

    @property
    def deviations(self):
        """Deviations in the normalization the bound is applied to."""
        return self.sum_deviations / self.n if self.normalization == "mean" else self.sum_deviations

    @property
    def freq(self):
        return self.exceed / self.trials

    @property
    def wilson(self):
        return wilson_interval(self.exceed, self.trials)

    def sound(self):
        """Wilson lower limit <= bound at every informative grid point."""
        lo, _ = self.wilson
        ok = bool(np.all(lo[self.informative] <= self.bound[self.informative]))
        if self.exceed_upper is not None:
            lo_u, _ = wilson_interval(self.exceed_upper, self.trials)
            ok = ok and bool(np.all(lo_u[self.informative] <= self.bound[self.informative]))
        return ok

    @property
    def mean_deviation(self):
        return float(self.deviations.mean())

    @property
    def mean_normalized(self):
        """Average deviation of the sample mean."""
        return float(self.sum_deviations.mean()) / self.n

    def rows(self):
        _, hi = self.wilson
        for t, f, w, b, inf in zip(self.t_grid, self.freq, hi, self.bound, self.informative):
            yield [float(t), float(f), float(w), float(b), int(bool(inf))]


CSV_COLUMNS = ("t", "empirical_freq", "wilson_upper", "bound", "informative_flag")


def matching_tail_bound(population, n, scheme):
    """The tail bound matching the population order and sampling scheme."""
    scheme = Scheme.parse(scheme)
    dims = (population.dim,) * population.order
    if scheme is Scheme.WITHOUT:
        return tail_bound("tensor_hs", dims, population.sigma, n, population.N)
    return tail_bound("tensor_hoeffding", dims, population.sigma, n)


def bound_crossover(bound, t_max=None, tol=1e-10):
    """Smallest ``t`` where ``bound`` drops below 1.

    Returns ``0.0`` if it is informative for every ``t > 0`` and ``inf`` if it
    stays vacuous up to ``t_max``.
    """
    if not isinstance(bound, TailBound):
        raise TypeError("expected a TailBound")
    if bound.log_value(np.nextafter(0.0, 1.0)) < 0:
        return 0.0
    limit = 1e300 if t_max is None else float(t_max)
    hi = min(1.0, limit)
    while bound.log_value(hi) >= 0:
        if hi >= limit:
            return math.inf
        hi = min(2.0 * hi, limit)
    lo = 0.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if bound.log_value(mid) < 0:
            hi = mid
        else:
            lo = mid
    return hi


def default_t_grid(bound, points=25):
    c = bound_crossover(bound)
    if c == 0.0 or not math.isfinite(c):
        return np.linspace(0.0, 1.0, points)
    return np.geomspace(c / 4, 4 * c, points)


def _draw_counts(rng, N, n, scheme, m):
    C = np.zeros((m, N))
    if scheme is Scheme.WITHOUT:
        for row in range(m):
            C[row, rng.choice(N, size=n, replace=False)] = 1.0
    else:
        idx = rng.integers(0, N, size=(m, n))
        for row in range(m):
            C[row] = np.bincount(idx[row], minlength=N)
    return C


def default_normalization(scheme):
    return "mean" if Scheme.parse(scheme) is Scheme.WITHOUT else "sum"


def simulate_tail(population, n, scheme, trials=10_000, t_grid=None, seed=0, threads=None,
                  chunk=500, restarts=4, grid_oracle=False, normalization=None):
    """Empirical exceedance frequencies of ``||X - E X||`` on ``t_grid``.

    Parameters
    ----------
    population : TensorPopulation
    n : int
        Draws per trial.
    scheme : {"with", "without"}
    trials : int
        At least 1000.
    t_grid : array_like, optional
        Defaults to a log grid around the point where the bound becomes
        informative.
    seed : int
    threads : int, optional
        Worker count; defaults to ``STM_THREADS`` or 1.  Trials are split
        into chunks with their own seeds, so results do not depend on it.
    chunk : int
        Trials per chunk.
    restarts : int
        Power-iteration starts per order-3 deviation.
    grid_oracle : bool
        Also compute sphere-grid upper bounds on the norms (``d = 3`` only).
    normalization : {"sum", "mean"}, optional
        Whether ``X`` is the sum or the mean of the draws; see the module
        docstring for the default.

    Returns
    -------
    TailEstimate
    """
    scheme = Scheme.parse(scheme)
    normalization = normalization or default_normalization(scheme)
    if normalization not in ("sum", "mean"):
        raise ValueError("normalization must be 'sum' or 'mean'")
    if trials < 1000:
        raise ValueError("at least 1000 trials are required")
    if n < 1 or (scheme is Scheme.WITHOUT and n > population.N):
        raise ValueError(f"invalid sample size n={n} for population of {population.N}")
    if grid_oracle and (population.order != 3 or population.dim != 3):
        raise ValueError("the grid oracle needs an order-3 population with d = 3")
    bound = matching_tail_bound(population, n, scheme)
    t_grid = default_t_grid(bound) if t_grid is None else np.asarray(t_grid, dtype=float)
    flat = population.members.reshape(population.N, -1)
    target = n * flat.mean(axis=0)
    shape = population.members.shape[1:]

    def work(c):
        m = min(chunk, trials - c * chunk)
        rng = np.random.default_rng([seed, c])
        C = _draw_counts(rng, population.N, n, scheme, m)
        D = (C @ flat - target).reshape((m,) + shape)
        low = _norms(D, population.order, [seed, c], restarts)
        up = grid_norm_upper(D) if grid_oracle else None
        return low, up

    n_chunks = -(-trials // chunk)
    workers = min(threads or thread_count(), n_chunks)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, range(n_chunks)))
    else:
        parts = [work(c) for c in range(n_chunks)]
    dev = np.concatenate([p[0] for p in parts])
    scale = 1.0 / n if normalization == "mean" else 1.0
    exceed = (scale * dev[None, :] >= t_grid[:, None]).sum(axis=1)
    exceed_upper = None
    if grid_oracle:
        up = np.concatenate([p[1] for p in parts])
        exceed_upper = (scale * up[None, :] >= t_grid[:, None]).sum(axis=1)
    bvals = np.array([bound(t) for t in t_grid])
    informative = np.array([bound.informative(t) for t in t_grid])
    return TailEstimate(t_grid, exceed, trials, bvals, informative, dev, n, scheme, seed,
                        normalization, exceed_upper)


def dominance_check(without, with_, z=Z99):
    """Mean deviation of the sum without replacement <= with replacement, up to ``z`` standard errors."""
    a, b = without.sum_deviations, with_.sum_deviations
    se = math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
    return bool(a.mean() <= b.mean() + z * se)
