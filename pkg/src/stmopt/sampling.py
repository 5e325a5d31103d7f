"""Sample sizes from tensor and matrix concentration bounds, index samplers,
and sub-sampled derivative estimates.

The sampling accuracy targets are, for a tolerance ``eps``::

    ||g - grad f||            <= kappa_g * eps
    ||B - hess f||_op         <= kappa_b * eps**(2/3)
    ||T - third f||_spectral  <= kappa_t * eps**(1/3)

Sizes are derived from Hoeffding-Serfling type bounds (without replacement)
or Hoeffding type bounds (with replacement).  ``sigmas`` are the ranges of
the per-component deviations, see ``FiniteSumProblem.ranges``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .problems import DerivativeBundle
from .tensor import SymTensor3, spectral_norm_lower

__all__ = [
    "DEFAULT_KAPPAS",
    "K0_ORDER3",
    "SamplePlan",
    "Scheme",
    "TailBound",
    "condition1_errors",
    "covering_constant",
    "estimate_derivatives",
    "full_plan",
    "plan_with_replacement",
    "plan_without_replacement",
    "sample_indices",
    "tail_bound",
]

DEFAULT_KAPPAS = (0.25, 0.25, 0.5)


class Scheme(str, enum.Enum):
    WITH = "with"
    WITHOUT = "without"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"with": cls.WITH, "with_replacement": cls.WITH,
                   "without": cls.WITHOUT, "without_replacement": cls.WITHOUT}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown sampling scheme {value!r}; use 'with' or 'without'") from None


def covering_constant(k):
    """``k0 = 2k / log(3/2)``, the net-size constant of the order-``k`` tail bounds."""
    return 2.0 * k / math.log(1.5)


K0_ORDER3 = covering_constant(3)


@dataclass(frozen=True)
class SamplePlan:
    """Sizes of the gradient, Hessian and third-derivative sample sets.

    ``exact`` marks orders whose size was clamped to the population size
    under sampling without replacement, so the estimate equals the full mean.
    ``raw`` holds the unclamped real-valued bounds.
    """

    n_g: int
    n_b: int
    n_t: int
    scheme: Scheme
    inputs: dict = field(default_factory=dict)
    raw: tuple = (math.nan, math.nan, math.nan)
    exact: tuple = (False, False, False)

    @property
    def sizes(self):
        return (self.n_g, self.n_b, self.n_t)

    def clamped(self, N):
        """Copy with every size capped at ``N``."""
        sizes = tuple(min(n, N) for n in self.sizes)
        exact = tuple(e or (self.scheme is Scheme.WITHOUT and n >= N)
                      for e, n in zip(self.exact, self.sizes))
        return SamplePlan(*sizes, self.scheme, dict(self.inputs), self.raw, exact)

    def to_dict(self):
        out = asdict(self)
        out["scheme"] = self.scheme.value
        out["raw"] = list(self.raw)
        out["exact"] = list(self.exact)
        return out


def _validate(eps, delta, kappas, sigmas, d, N=None):
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    if len(kappas) != 3 or min(kappas) <= 0:
        raise ValueError("kappas must be three positive numbers")
    if len(sigmas) != 3 or min(sigmas) < 0:
        raise ValueError("sigmas must be three nonnegative numbers")
    if int(d) < 1:
        raise ValueError("d must be >= 1")
    if N is not None and int(N) < 1:
        raise ValueError("N must be >= 1")


def _targets(eps, kappas):
    kg, kb, kt = kappas
    return kg * eps, kb * eps ** (2.0 / 3.0), kt * eps ** (1.0 / 3.0)


def _log_terms(d, delta):
    # log(2d/delta), log(d/delta), log(2 k0^{3d} / delta)
    ld = math.log(d) - math.log(delta)
    lt = math.log(2.0) + 3 * d * math.log(K0_ORDER3) - math.log(delta)
    return ld + math.log(2.0), ld, lt


def _ceil_size(x):
    if not math.isfinite(x):
        raise OverflowError("sample size bound is not finite")
    return max(1, math.ceil(x))


def plan_without_replacement(eps, delta, kappas=DEFAULT_KAPPAS, sigmas=(1.0, 1.0, 1.0), d=1, N=1):
    """Sample sizes for sampling without replacement from ``N`` components.

    Parameters
    ----------
    eps, delta : float
        Accuracy and failure probability, both in (0, 1].
    kappas : tuple of float
        ``(kappa_g, kappa_b, kappa_t)``.
    sigmas : tuple of float
        ``(sigma_g, sigma_b, sigma_t)`` deviation ranges.
    d : int
        Dimension.
    N : int
        Population size; every size is clamped to ``N``.

    Returns
    -------
    SamplePlan
    """
    _validate(eps, delta, kappas, sigmas, d, N)
    tg, tb, tt = _targets(eps, kappas)
    sg, sb, st = sigmas
    l2d, _, lt = _log_terms(d, delta)
    raw = (
        16 * sg**2 * l2d / (tg**2 + 8 * sg**2 * l2d / N),
        16 * sb**2 * l2d / (tb**2 + 8 * sb**2 * l2d / N),
        4 * st**2 * lt / (tt**2 + 2 * st**2 * lt / N),
    )
    sizes = [_ceil_size(r) for r in raw]
    exact = tuple(n >= N for n in sizes)
    sizes = [min(n, N) for n in sizes]
    inputs = dict(eps=eps, delta=delta, kappas=list(kappas), sigmas=list(sigmas), d=d, N=N)
    return SamplePlan(*sizes, Scheme.WITHOUT, inputs, raw, exact)


def plan_with_replacement(eps, delta, kappas=DEFAULT_KAPPAS, sigmas=(1.0, 1.0, 1.0), d=1):
    """Sample sizes for i.i.d. sampling with replacement (no population cap)."""
    _validate(eps, delta, kappas, sigmas, d)
    tg, tb, tt = _targets(eps, kappas)
    sg, sb, st = sigmas
    _, ld, lt = _log_terms(d, delta)
    raw = (8 * sg**2 / tg**2 * ld, 8 * sb**2 / tb**2 * ld, 2 * st**2 / tt**2 * lt)
    sizes = [_ceil_size(r) for r in raw]
    inputs = dict(eps=eps, delta=delta, kappas=list(kappas), sigmas=list(sigmas), d=d, N=None)
    return SamplePlan(*sizes, Scheme.WITH, inputs, raw, (False, False, False))


def full_plan(N):
    """Every order uses all ``N`` components, without replacement."""
    return SamplePlan(N, N, N, Scheme.WITHOUT, {"N": N}, (N, N, N), (True, True, True))


def sample_indices(N, n, scheme, seed):
    """Draw ``n`` indices from ``range(N)``.

    Without replacement the result is a uniformly random ordered subset; with
    replacement the indices are i.i.d. uniform.  Deterministic given ``seed``.
    """
    scheme = Scheme.parse(scheme)
    if n < 1 or N < 1:
        raise ValueError("N and n must be >= 1")
    rng = np.random.default_rng(seed)
    if scheme is Scheme.WITHOUT:
        if n > N:
            raise ValueError(f"cannot draw {n} distinct indices from {N}")
        return rng.choice(N, size=n, replace=False)
    return rng.integers(0, N, size=n)


def estimate_derivatives(problem, x, plan, seed):
    """Sub-sampled value, gradient, Hessian and third derivative at ``x``.

    The three orders use independently drawn index sets; an order whose plan
    is exact uses all components.  The returned ``value`` is the exact
    objective, which the outer loop needs for its acceptance ratio.
    """
    N = problem.n
    parts = []
    for order, (n, exact) in enumerate(zip(plan.sizes, plan.exact), start=1):
        if exact or (plan.scheme is Scheme.WITHOUT and n >= N):
            parts.append(None)
        else:
            parts.append(sample_indices(N, n, plan.scheme, [*np.atleast_1d(seed).tolist(), order]))
    if all(p is None for p in parts):
        return problem.derivatives(x, order=3)
    parts = [np.arange(N) if p is None else p for p in parts]
    g = problem.subsample(parts[0], x, order=1).grad
    B = problem.subsample(parts[1], x, order=2).hess
    T = problem.subsample(parts[2], x, order=3).third
    return DerivativeBundle(problem.value(x), g, B, T)


def condition1_errors(sampled, exact, restarts=16, seed=0):
    """Deviations ``(||dg||, ||dB||_op, ||dT||)`` between a sampled and exact bundle.

    The tensor deviation uses the power-iteration lower bound on the spectral
    norm, which for a symmetric tensor equals ``max_{|s|=1} ||dT[s]^2||``.
    """
    eg = float(np.linalg.norm(sampled.grad - exact.grad))
    eb = float(np.abs(np.linalg.eigvalsh(sampled.hess - exact.hess)).max())
    diff = SymTensor3(sampled.third.data - exact.third.data, check=True)
    et = spectral_norm_lower(diff, restarts=restarts, seed=seed).value
    return eg, eb, et


# ---------------------------------------------------------------------------
# tail bounds

_KINDS = ("tensor_hs", "tensor_hoeffding", "matrix_hs", "matrix_hoeffding")


@dataclass(frozen=True)
class TailBound:
    """Closed-form deviation probability bound ``P(||X - EX|| >= t) <= bound(t)``.

    kinds
        ``tensor_hs``: ``n`` draws without replacement from ``N``
        order-``k`` tensors, ``k0^{sum d} * 2 exp(-t^2 n^2 / (2 s^2 (n+1)(1-n/N)))``.
        The exponent comes from the scalar inequality for the sample mean,
        and the bound holds for the mean of the draws, not their sum.
        ``tensor_hoeffding``: sum of ``n`` i.i.d. tensors,
        ``k0^{sum d} * 2 exp(-t^2 / (2 n s^2))``.
        ``matrix_hs``: mean of ``n`` draws without replacement from ``N``
        ``d1 x d2`` matrices, ``(d1 + d2) exp(-n t^2 / (8 s^2 (1 + 1/n)(1 - n/N)))``.
        ``matrix_hoeffding``: sum of fixed self-adjoint ``d x d`` matrices with
        random signs, ``d exp(-t^2 / (8 s^2))``.
    """

    kind: str
    dims: tuple
    sigma: float
    n: int = 1
    N: int | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown bound kind {self.kind!r}; choose from {_KINDS}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.kind.endswith("_hs"):
            if self.N is None or self.n > self.N:
                raise ValueError("sampling without replacement needs n <= N")
        if self.kind == "matrix_hs" and len(self.dims) != 2:
            raise ValueError("matrix_hs needs dims (d1, d2)")
        if self.kind == "matrix_hoeffding" and len(self.dims) != 1:
            raise ValueError("matrix_hoeffding needs dims (d,)")

    @property
    def order(self):
        return len(self.dims)

    def log_value(self, t):
        """Natural log of the bound (``-inf`` when it is exactly zero)."""
        t = float(t)
        if t < 0:
            raise ValueError("t must be nonnegative")
        s2, n, N = self.sigma**2, self.n, self.N
        if self.kind == "tensor_hs":
            prefix = sum(self.dims) * math.log(covering_constant(self.order)) + math.log(2.0)
            frac = 1.0 - n / N
            if frac <= 0.0:
                return prefix if t == 0 else -math.inf
            return prefix - t**2 * n**2 / (2 * s2 * (n + 1) * frac)
        if self.kind == "tensor_hoeffding":
            prefix = sum(self.dims) * math.log(covering_constant(self.order)) + math.log(2.0)
            return prefix - t**2 / (2 * n * s2)
        if self.kind == "matrix_hs":
            prefix = math.log(self.dims[0] + self.dims[1])
            frac = 1.0 - n / N
            if frac <= 0.0:
                return prefix if t == 0 else -math.inf
            return prefix - n * t**2 / (8 * s2 * (1 + 1 / n) * frac)
        return math.log(self.dims[0]) - t**2 / (8 * s2)

    def raw(self, t):
        """Bound value without the cap at 1 (may overflow to ``inf``)."""
        lv = self.log_value(t)
        return math.exp(lv) if lv < 700 else math.inf

    def __call__(self, t):
        return min(1.0, self.raw(t))

    def informative(self, t):
        return self.log_value(t) < 0.0


def tail_bound(kind, dims, sigma, n=1, N=None):
    """Build a :class:`TailBound`; the result is callable on ``t``."""
    return TailBound(kind, tuple(int(x) for x in dims), float(sigma), int(n), None if N is None else int(N))
