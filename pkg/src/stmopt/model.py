"""Third-order Taylor model with a quartic regularizer.

``m(s) = phi(s) + (sigma / 4) ||s||^4`` where
``phi(s) = f0 + g^T s + 0.5 s^T B s + (1/6) T[s]^3``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import SymTensor3, contract1, contract2, contract3

__all__ = ["QuarticModel", "quartic_third"]


def quartic_third(s):
    """Third derivative of ``||s||^4 / 4`` as a dense tensor.

    Entries are ``2 (s_i delta_jk + s_j delta_ik + s_k delta_ij)``, so the
    cubic form is ``6 (s^T y) ||y||^2``.
    """
    s = np.asarray(s, dtype=float)
    eye = np.eye(s.shape[0])
    arr = 2.0 * (
        np.einsum("i,jk->ijk", s, eye)
        + np.einsum("j,ik->ijk", s, eye)
        + np.einsum("k,ij->ijk", s, eye)
    )
    return SymTensor3(arr)


@dataclass(frozen=True)
class QuarticModel:
    """Regularized model around the current iterate.

    Parameters
    ----------
    f0 : float
        Objective value at the iterate.
    g : ndarray, shape (d,)
    B : ndarray, shape (d, d)
        Symmetric.
    T : SymTensor3
    sigma : float
        Regularization weight.  Zero is accepted for inspecting the
        unregularized model; the subproblem solver requires it positive.
    """

    f0: float
    g: np.ndarray
    B: np.ndarray
    T: SymTensor3
    sigma: float

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        B = np.asarray(self.B, dtype=float)
        d = g.shape[0]
        if g.ndim != 1 or B.shape != (d, d) or self.T.dim != d:
            raise ValueError("inconsistent model dimensions")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "B", 0.5 * (B + B.T))
        object.__setattr__(self, "f0", float(self.f0))
        object.__setattr__(self, "sigma", float(self.sigma))

    @classmethod
    def from_bundle(cls, bundle, sigma):
        return cls(bundle.value, bundle.grad, bundle.hess, bundle.third, sigma)

    @property
    def dim(self):
        return self.g.shape[0]

    def with_sigma(self, sigma):
        return QuarticModel(self.f0, self.g, self.B, self.T, sigma)

    def eval_phi(self, s):
        s = np.asarray(s, dtype=float)
        return self.f0 + float(self.g @ s) + 0.5 * float(s @ self.B @ s) + contract3(self.T, s) / 6.0

    def eval(self, s):
        s = np.asarray(s, dtype=float)
        r2 = float(s @ s)
        return self.eval_phi(s) + 0.25 * self.sigma * r2 * r2

    def grad(self, s):
        s = np.asarray(s, dtype=float)
        return self.g + self.B @ s + 0.5 * contract2(self.T, s) + self.sigma * float(s @ s) * s

    def hess(self, s):
        s = np.asarray(s, dtype=float)
        H = self.B + contract1(self.T, s) + self.sigma * (float(s @ s) * np.eye(self.dim) + 2.0 * np.outer(s, s))
        return 0.5 * (H + H.T)

    def third(self, s):
        s = np.asarray(s, dtype=float)
        if self.sigma == 0.0 or not s.any():
            return self.T
        return SymTensor3(self.T.data + self.sigma * quartic_third(s).data)

    def third_form(self, s, y):
        """``third(s)[y]^3`` without building the tensor."""
        s = np.asarray(s, dtype=float)
        y = np.asarray(y, dtype=float)
        return contract3(self.T, y) + 6.0 * self.sigma * float(s @ y) * float(y @ y)
