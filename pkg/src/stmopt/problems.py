"""Finite-sum test objectives with closed-form derivatives up to order three.

Every problem has the form ``f(x) = (1/n) sum_i f_i(x)`` and can evaluate
the mean derivatives over an arbitrary multiset of component indices, which
is what the sub-sampled estimators need.  Exact derivatives are the mean
over all ``n`` components.

Data recipes (all driven by ``numpy.random.default_rng(seed)``):

* ``cosine_sum``: rows ``a_i`` are standard normal vectors normalized to unit
  length.
* ``quadratic_sum``: centers ``b_i`` are standard normal.
* ``nonconvex_logistic``: unit rows ``a_i`` as above, a standard normal
  teacher ``w``, labels ``y_i = sign(a_i^T w + 0.5 * e_i)`` with standard
  normal noise ``e_i`` (so the data are not separable).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .tensor import SymTensor3

__all__ = [
    "DerivativeBundle",
    "FiniteSumProblem",
    "Lipschitz",
    "make_cosine_sum",
    "make_nonconvex_logistic",
    "make_problem",
    "make_quadratic_sum",
    "nonconvex_logistic_from_data",
]


class Lipschitz(NamedTuple):
    """Lipschitz constants of ``f_i``, ``grad f_i``, ``hess f_i`` and ``third f_i``.

    ``math.inf`` marks a derivative that is not globally Lipschitz (the
    quadratic regularizers make ``f_i`` and sometimes ``grad f_i`` unbounded).
    """

    f: float
    g: float
    b: float
    t: float


@dataclass(frozen=True)
class DerivativeBundle:
    """Value and derivatives at one point, exact or sub-sampled."""

    value: float
    grad: np.ndarray
    hess: np.ndarray | None = None
    third: SymTensor3 | None = None

    def __post_init__(self):
        d = self.grad.shape[0]
        if self.hess is not None and self.hess.shape != (d, d):
            raise ValueError(f"hessian shape {self.hess.shape} does not match d={d}")
        if self.third is not None and self.third.dim != d:
            raise ValueError(f"third-order tensor dim {self.third.dim} does not match d={d}")


class FiniteSumProblem:
    """Base class for ``f = mean_i f_i``.

    Attributes
    ----------
    name : str
    n, d : int
        Number of components and dimension.
    lipschitz : Lipschitz
        Global constants for each component (Assumption-style).
    ranges : tuple of float
        ``(sigma_g, sigma_b, sigma_t)``: bounds used by the concentration
        inequalities.  ``sigma_g`` and ``sigma_b`` bound the norm of the
        component-specific part of ``grad f_i`` and ``hess f_i``; ``sigma_t``
        bounds the spread ``b - a`` of ``third f_i(u, v, w)`` over unit vectors.
        Terms shared by all components cancel in every sampled-minus-exact
        difference, so they do not enter.
    f_low : float
        A lower bound on ``f``.
    """

    name = "problem"

    def __init__(self, n, d, lipschitz, ranges, f_low):
        self.n = int(n)
        self.d = int(d)
        self.lipschitz = Lipschitz(*lipschitz)
        self.ranges = tuple(float(r) for r in ranges)
        self.f_low = float(f_low)

    def params(self):
        """JSON-serializable description."""
        return {"name": self.name, "n": self.n, "d": self.d}

    def subsample(self, indices, x, order=3):
        """Mean of component derivatives over ``indices`` (repeats allowed)."""
        raise NotImplementedError

    def component(self, i, x, order=3):
        return self.subsample(np.array([i]), x, order)

    def derivatives(self, x, order=3):
        return self.subsample(np.arange(self.n), x, order)

    def value(self, x):
        return self.subsample(np.arange(self.n), x, order=0).value

    def _check_point(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"point of shape ({self.d},) expected, got {x.shape}")
        return x

    def _check_indices(self, indices):
        idx = np.asarray(indices, dtype=np.intp)
        if idx.ndim != 1 or idx.size == 0:
            raise ValueError("indices must be a non-empty 1-d array")
        if idx.min() < 0 or idx.max() >= self.n:
            raise IndexError(f"component index out of range [0, {self.n})")
        return idx


class _RidgeFunctionSum(FiniteSumProblem):
    """``f_i(x) = h(y_i a_i^T x) + R(x)`` for a scalar link ``h``."""

    def __init__(self, A, labels, lam, lipschitz, ranges, f_low):
        self.A = np.asarray(A, dtype=float)
        self.labels = np.asarray(labels, dtype=float)
        self.lam = float(lam)
        super().__init__(self.A.shape[0], self.A.shape[1], lipschitz, ranges, f_low)

    def _link(self, z, order):
        raise NotImplementedError

    def _regularizer(self, x, order):
        raise NotImplementedError

    def subsample(self, indices, x, order=3):
        x = self._check_point(x)
        idx = self._check_indices(indices)
        A = self.A[idx]
        y = self.labels[idx]
        m = len(idx)
        parts = self._link(y * (A @ x), order)
        rparts = self._regularizer(x, order)
        value = float(parts[0].sum() / m + rparts[0])
        grad = hess = third = None
        if order >= 1:
            grad = A.T @ (y * parts[1]) / m + rparts[1]
        else:
            grad = np.zeros(self.d)
        if order >= 2:
            # y_i^2 = 1 for labels in {-1, +1}; kept general
            hess = (A * (y**2 * parts[2])[:, None]).T @ A / m + rparts[2]
            hess = 0.5 * (hess + hess.T)
        if order >= 3:
            w3 = y**3 * parts[3] / m
            arr = np.einsum("i,ij,ik,il->jkl", w3, A, A, A, optimize=True)
            if rparts[3] is not None:
                arr = arr + rparts[3]
            third = SymTensor3(arr)
        return DerivativeBundle(value, grad, hess, third)


class CosineSum(_RidgeFunctionSum):
    name = "cosine_sum"

    def params(self):
        return {**super().params(), "lam": self.lam}

    def _link(self, z, order):
        c, s = np.cos(z), np.sin(z)
        return [c, -s, -c, s][: order + 1] + [None] * (3 - order)

    def _regularizer(self, x, order):
        lam, d = self.lam, self.d
        return [0.5 * lam * float(x @ x), lam * x, lam * np.eye(d), None]


_R3_ARGMAX = math.sqrt(1.0 - 2.0 / math.sqrt(5.0))
# sup |r'''| for r(t) = t^2 / (1 + t^2), attained at t = _R3_ARGMAX
R3_SUP = 24.0 * _R3_ARGMAX * (1.0 - _R3_ARGMAX**2) / (1.0 + _R3_ARGMAX**2) ** 4
# sup |r'| (at t = 1/sqrt(3)), sup |r''| (at 0), sup |r''''| (at 0)
R1_SUP = 9.0 / (8.0 * math.sqrt(3.0))
R2_SUP = 2.0
R4_SUP = 24.0
# sup |l^(p)| for the logistic loss l(z) = log(1 + exp(-z)), p = 1..4
LOGISTIC_SUP = (1.0, 0.25, 1.0 / (6.0 * math.sqrt(3.0)), 0.125)


class NonconvexLogistic(_RidgeFunctionSum):
    name = "nonconvex_logistic"

    def params(self):
        return {**super().params(), "lam": self.lam}

    def _link(self, z, order):
        # l(z) = log(1 + e^{-z}); p = sigmoid(z)
        value = np.logaddexp(0.0, -z)
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        q = 1.0 - p
        out = [value, -q, p * q, p * q * (q - p)]
        return out[: order + 1] + [None] * (3 - order)

    def _regularizer(self, x, order):
        lam = self.lam
        t2 = x * x
        den = 1.0 + t2
        value = lam * float(np.sum(t2 / den))
        grad = lam * 2.0 * x / den**2
        hess = np.diag(lam * (2.0 - 6.0 * t2) / den**3)
        diag3 = lam * 24.0 * x * (t2 - 1.0) / den**4
        third = np.zeros((self.d,) * 3)
        third[np.arange(self.d), np.arange(self.d), np.arange(self.d)] = diag3
        return [value, grad, hess, third]


class QuadraticSum(FiniteSumProblem):
    """``f_i(x) = 0.5 * ||x - b_i||^2``."""

    name = "quadratic_sum"

    def __init__(self, centers):
        self.centers = np.asarray(centers, dtype=float)
        n, d = self.centers.shape
        self.minimizer = self.centers.mean(axis=0)
        spread = float(np.linalg.norm(self.centers - self.minimizer, axis=1).max())
        f_low = 0.5 * float(np.mean(np.sum((self.centers - self.minimizer) ** 2, axis=1)))
        super().__init__(n, d, Lipschitz(math.inf, 1.0, 0.0, 0.0), (spread, 0.0, 0.0), f_low)

    def subsample(self, indices, x, order=3):
        x = self._check_point(x)
        idx = self._check_indices(indices)
        diff = x - self.centers[idx]
        value = 0.5 * float(np.mean(np.sum(diff * diff, axis=1)))
        grad = diff.mean(axis=0)
        hess = np.eye(self.d) if order >= 2 else None
        third = SymTensor3.zeros(self.d) if order >= 3 else None
        return DerivativeBundle(value, grad, hess, third)


def _unit_rows(rng, n, d):
    A = rng.standard_normal((n, d))
    return A / np.linalg.norm(A, axis=1, keepdims=True)


def make_cosine_sum(n, d, seed=0, lam=0.1):
    """``f_i(x) = cos(a_i^T x) + (lam / 2) ||x||^2`` with unit ``a_i``."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    A = _unit_rows(np.random.default_rng(seed), n, d)
    lip = Lipschitz(math.inf if lam > 0 else 1.0, 1.0 + lam, 1.0, 1.0)
    return CosineSum(A, np.ones(n), lam, lip, (1.0, 1.0, 2.0), f_low=-1.0)


def make_quadratic_sum(n, d, seed=0):
    """``f_i(x) = 0.5 ||x - b_i||^2``; minimizer is the mean of the ``b_i``."""
    return QuadraticSum(np.random.default_rng(seed).standard_normal((n, d)))


def nonconvex_logistic_from_data(A, labels, lam=0.01):
    """Logistic loss plus ``lam * sum_j x_j^2 / (1 + x_j^2)`` on given data.

    ``labels`` must be in ``{-1, +1}``.  Lipschitz constants and ranges are
    derived from the largest row norm.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    A = np.asarray(A, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if not np.all(np.abs(labels) == 1.0):
        raise ValueError("labels must be -1 or +1")
    d = A.shape[1]
    a = float(np.linalg.norm(A, axis=1).max())
    l1, l2, l3, l4 = LOGISTIC_SUP
    lip = Lipschitz(
        l1 * a + lam * R1_SUP * math.sqrt(d),
        l2 * a**2 + lam * R2_SUP,
        l3 * a**3 + lam * R3_SUP,
        l4 * a**4 + lam * R4_SUP,
    )
    ranges = (l1 * a, l2 * a**2, 2.0 * l3 * a**3)
    return NonconvexLogistic(A, labels, lam, lip, ranges, f_low=0.0)


def make_nonconvex_logistic(n, d, seed=0, lam=0.01):
    rng = np.random.default_rng(seed)
    A = _unit_rows(rng, n, d)
    w = rng.standard_normal(d)
    labels = np.where(A @ w + 0.5 * rng.standard_normal(n) >= 0.0, 1.0, -1.0)
    return nonconvex_logistic_from_data(A, labels, lam)


_FACTORIES = {
    "cosine_sum": make_cosine_sum,
    "quadratic_sum": make_quadratic_sum,
    "nonconvex_logistic": make_nonconvex_logistic,
}


def make_problem(name, **params):
    """Build a problem by registry name, e.g. ``make_problem("cosine_sum", n=100, d=5)``."""
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(_FACTORIES)}") from None
    return factory(**params)
