"""Dense symmetric third-order tensors and their contractions.

Tensors are stored as full ``(d, d, d)`` arrays.  Symmetry is enforced at
construction time, so every instance is exactly invariant under the six
index permutations.
"""

from __future__ import annotations

from itertools import permutations
from typing import NamedTuple

import numpy as np

__all__ = [
    "SymTensor3",
    "SpectralEstimate",
    "contract1",
    "contract2",
    "contract3",
    "spectral_norm_lower",
    "spectral_norm_lower_batch",
    "symmetrize",
]

_PERMS = list(permutations(range(3)))


def symmetrize(arr):
    """Average a ``(..., d, d, d)`` array over the six index permutations.

    The result is exactly symmetric: every entry is copied from the entry
    with sorted indices, so rounding in the average cannot break symmetry.
    """
    arr = np.asarray(arr, dtype=float)
    lead = tuple(range(arr.ndim - 3))
    out = np.zeros_like(arr)
    for p in _PERMS:
        out += np.transpose(arr, lead + tuple(len(lead) + i for i in p))
    out /= 6.0
    return out[(..., *_sorted_index(arr.shape[-1]))]


def _sorted_index(d):
    idx = np.sort(np.indices((d, d, d)).reshape(3, -1), axis=0).reshape(3, d, d, d)
    return tuple(idx)


class SymTensor3:
    """Immutable symmetric tensor of order three.

    Parameters
    ----------
    data : array_like, shape (d, d, d)
        Entries.  They are symmetrized unless ``check=True``, in which case a
        non-symmetric input raises ``ValueError``.
    """

    __slots__ = ("_data",)

    def __init__(self, data, check=False):
        arr = np.array(data, dtype=float)
        if arr.ndim != 3 or not (arr.shape[0] == arr.shape[1] == arr.shape[2]):
            raise ValueError(f"expected a cubic (d, d, d) array, got shape {arr.shape}")
        if arr.shape[0] == 0:
            raise ValueError("dimension must be positive")
        if check:
            for p in _PERMS[1:]:
                if not np.array_equal(arr, np.transpose(arr, p)):
                    raise ValueError("array is not symmetric")
        else:
            arr = symmetrize(arr)
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def zeros(cls, d):
        return cls(np.zeros((d, d, d)), check=True)

    @classmethod
    def rank1(cls, a, weight=1.0):
        """``weight * a (x) a (x) a``."""
        a = np.asarray(a, dtype=float)
        return cls(weight * np.einsum("i,j,k->ijk", a, a, a), check=True)

    @classmethod
    def from_entries(cls, d, entries):
        """Build from a mapping ``{(i, j, k): value}``.

        Each entry is written to all permutations of its index; later keys
        overwrite earlier ones that share an orbit.
        """
        arr = np.zeros((d, d, d))
        for idx, value in entries.items():
            for p in _PERMS:
                arr[tuple(idx[q] for q in p)] = value
        return cls(arr, check=True)

    @property
    def dim(self):
        return self._data.shape[0]

    @property
    def data(self):
        """Read-only view of the dense entries."""
        return self._data

    def __getitem__(self, idx):
        return self._data[idx]

    def __add__(self, other):
        if not isinstance(other, SymTensor3):
            return NotImplemented
        _check_same_dim(self.dim, other.dim)
        return SymTensor3(self._data + other._data, check=True)

    def __sub__(self, other):
        if not isinstance(other, SymTensor3):
            return NotImplemented
        _check_same_dim(self.dim, other.dim)
        return SymTensor3(self._data - other._data, check=True)

    def __mul__(self, alpha):
        return SymTensor3(float(alpha) * self._data, check=True)

    __rmul__ = __mul__

    def __neg__(self):
        return SymTensor3(-self._data, check=True)

    def __repr__(self):
        return f"SymTensor3(dim={self.dim}, frobenius={self.frobenius():.6g})"

    def frobenius(self):
        return float(np.linalg.norm(self._data.ravel()))

    def abs_sum(self):
        return float(np.abs(self._data).sum())

    def restrict(self, basis):
        """Multilinear restriction ``T(U, U, U)`` for ``U`` of shape (d, r)."""
        U = np.asarray(basis, dtype=float)
        if U.ndim != 2 or U.shape[0] != self.dim:
            raise ValueError(f"basis must have shape ({self.dim}, r), got {U.shape}")
        out = np.einsum("ijk,ia,jb,kc->abc", self._data, U, U, U, optimize=True)
        return SymTensor3(out)

    def rotate(self, Q):
        """Change of basis ``T(Q^T, Q^T, Q^T)`` so that ``T'[Qy]^3 = T[y]^3``."""
        return self.restrict(np.asarray(Q).T)


def _check_same_dim(a, b):
    if a != b:
        raise ValueError(f"dimension mismatch: {a} != {b}")


def _as_vector(T, s):
    s = np.asarray(s, dtype=float)
    if s.shape != (T.dim,):
        raise ValueError(f"vector of shape ({T.dim},) expected, got {s.shape}")
    return s


def contract1(T, s):
    """Return the matrix ``T[s]`` with entries ``sum_k T_ijk s_k``."""
    s = _as_vector(T, s)
    M = T.data @ s
    return 0.5 * (M + M.T)


def contract2(T, s):
    """Return the vector ``T[s]^2`` with entries ``sum_jk T_ijk s_j s_k``."""
    s = _as_vector(T, s)
    return (T.data @ s) @ s


def contract3(T, s):
    """Return the scalar ``T[s]^3``."""
    s = _as_vector(T, s)
    return float(contract2(T, s) @ s)


class SpectralEstimate(NamedTuple):
    value: float
    vector: np.ndarray
    converged: bool


def _start_vectors(arr, restarts, seed):
    # start 0 is the leading left singular vector of the mode-1 unfolding;
    # start r >= 1 comes from its own stream so prefixes do not depend on
    # the total count
    d = arr.shape[0]
    starts = np.empty((restarts, d))
    u, _, _ = np.linalg.svd(arr.reshape(d, d * d), full_matrices=False)
    starts[0] = u[:, 0]
    for r in range(1, restarts):
        starts[r] = np.random.default_rng([seed, r]).standard_normal(d)
    return starts


def spectral_norm_lower(T, restarts=16, tol=1e-10, seed=0, max_iter=500):
    """Lower bound on ``max_{|y|=1} |T[y]^3|`` by multi-start shifted power iteration.

    Each start runs a shifted symmetric higher-order power method.  The
    shift is chosen from the local curvature and falls back to a globally
    safe value whenever the adaptive step fails to increase the objective,
    so every run is monotone.

    Parameters
    ----------
    T : SymTensor3
    restarts : int
        Number of starting points (>= 1).
    tol : float
        Stop a run once its objective changes by less than
        ``tol * max(1, value)``.
    seed : int
        Seed for the random starting points.
    max_iter : int
        Iteration cap per start.

    Returns
    -------
    SpectralEstimate
        ``value`` is ``|T[vector]^3|`` for the unit ``vector`` returned, hence
        a certified lower bound on the spectral norm.  ``converged`` reports
        whether the run that produced it met ``tol``.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    starts = _start_vectors(T.data, restarts, seed)
    vals, vecs, conv = spectral_norm_lower_batch(
        T.data[None], starts[None], tol=tol, max_iter=max_iter
    )
    best = _argmax_tiebreak(vals[0], vecs[0])
    return SpectralEstimate(float(vals[0, best]), vecs[0, best].copy(), bool(conv[0, best]))


def _argmax_tiebreak(vals, vecs):
    # deterministic: highest value, ties broken lexicographically on the vector
    top = vals.max()
    cand = np.flatnonzero(vals == top)
    if len(cand) == 1:
        return int(cand[0])
    keys = [tuple(vecs[c]) for c in cand]
    return int(cand[max(range(len(cand)), key=keys.__getitem__)])


def spectral_norm_lower_batch(tensors, starts, tol=1e-10, max_iter=500):
    """Vectorized power iteration over a stack of tensors.

    Parameters
    ----------
    tensors : ndarray, shape (B, d, d, d)
        Symmetric tensors.
    starts : ndarray, shape (B, R, d)
        Starting vectors; ``R`` runs per tensor.

    Returns
    -------
    values : ndarray, shape (B, R)
        ``|T[y]^3|`` at the final unit vector of each run.
    vectors : ndarray, shape (B, R, d)
        Final unit vectors, signed so that ``T[y]^3 >= 0``.
    converged : ndarray of bool, shape (B, R)
    """
    A = np.asarray(tensors, dtype=float)
    Y = np.array(starts, dtype=float)
    B, R, d = Y.shape
    norms = np.linalg.norm(Y, axis=-1, keepdims=True)
    Y = np.where(norms > 0, Y / np.where(norms > 0, norms, 1.0), _unit0(d))
    # globally safe shift: 2 * ||T||_F bounds 2 * rho(T[y]) on the sphere
    safe = 2.0 * np.linalg.norm(A.reshape(B, -1), axis=1)[:, None] + 1e-300

    def objective(Y):
        M = np.einsum("bijk,brk->brij", A, Y)
        g = np.einsum("brij,brj->bri", M, Y)
        return np.einsum("bri,bri->br", g, Y), g, M

    lam, g, M = objective(Y)
    flip = lam < 0
    Y[flip] *= -1
    lam, g, M = objective(Y)
    done = np.zeros((B, R), dtype=bool)

    for _ in range(max_iter):
        if done.all():
            break
        # shifts only for runs still moving; frozen runs ignore theirs
        lam_min = np.zeros((B, R))
        lam_min[~done] = np.linalg.eigvalsh(M[~done])[..., 0]
        alpha = np.maximum(0.0, -2.0 * lam_min)
        Yn = _normalize(g + alpha[..., None] * Y, Y)
        lam_n, g_n, M_n = objective(Yn)
        bad = lam_n < lam
        if bad.any():
            Ys = _normalize(g + safe[..., None].repeat(R, 1) * Y, Y)
            Yn = np.where(bad[..., None], Ys, Yn)
            lam_n, g_n, M_n = objective(Yn)
        # runs already converged stay frozen
        keep = done | (lam_n < lam)
        Yn = np.where(keep[..., None], Y, Yn)
        lam_n = np.where(keep, lam, lam_n)
        g_n = np.where(keep[..., None], g, g_n)
        M_n = np.where(keep[..., None, None], M, M_n)
        delta = np.abs(lam_n - lam)
        done = done | (delta <= tol * np.maximum(1.0, np.abs(lam_n)))
        Y, lam, g, M = Yn, lam_n, g_n, M_n

    return np.abs(lam), Y, done


def _normalize(Y, fallback):
    n = np.linalg.norm(Y, axis=-1, keepdims=True)
    return np.where(n > 0, Y / np.where(n > 0, n, 1.0), fallback)


def _unit0(d):
    e = np.zeros(d)
    e[0] = 1.0
    return e
