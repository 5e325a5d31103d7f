"""First-, second- and third-order criticality measures.

For derivatives ``(g, H, T)`` at a point:

* ``chi1 = ||g||``
* ``chi2 = max(0, -lambda_min(H))``
* ``chi3 = max |T[y]^3|`` over unit ``y`` with ``|H[y]^2| <= zeta``

``chi3`` is a non-convex constrained maximization.  What is returned is the
best feasible value found, together with the unit vector that attains it,
so it is a certified lower bound on the true maximum.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .tensor import SymTensor3, contract3, spectral_norm_lower

__all__ = [
    "Chi3Result",
    "CriticalityTriple",
    "chi1",
    "chi2",
    "chi3",
    "criticality",
    "model_criticality",
    "objective_criticality",
]


class Chi3Result(NamedTuple):
    value: float
    certificate: np.ndarray | None


class CriticalityTriple(NamedTuple):
    chi1: float
    chi2: float
    chi3: float
    chi3_certificate: np.ndarray | None = None

    def values(self):
        return (self.chi1, self.chi2, self.chi3)


def chi1(grad):
    return float(np.linalg.norm(np.asarray(grad, dtype=float)))


def _eigh(hess):
    H = np.asarray(hess, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"square matrix expected, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise np.linalg.LinAlgError("matrix has non-finite entries")
    try:
        return np.linalg.eigh(0.5 * (H + H.T))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"symmetric eigensolve failed (d={H.shape[0]}, max|entry|={np.abs(H).max():.3g})"
        ) from exc


def chi2(hess):
    lam = _eigh(hess)[0]
    return max(0.0, -float(lam[0]))


def chi3(hess, third, zeta, restarts=16, seed=0, tol=1e-10, max_iter=100):
    """Third-order measure restricted to the approximate kernel of ``hess``.

    Parameters
    ----------
    hess : ndarray, shape (d, d)
    third : SymTensor3
    zeta : float
        Kernel tolerance; ``inf`` drops the constraint.
    restarts : int
        Starts for each of the two searches.
    seed : int

    Returns
    -------
    Chi3Result
        ``certificate`` is a unit vector with ``third[cert]^3 = value`` and
        ``|hess[cert]^2| <= zeta``, or ``None`` when no feasible vector was
        found (then ``value`` is 0).
    """
    if not zeta >= 0:
        raise ValueError(f"zeta must be nonnegative, got {zeta}")
    H = 0.5 * (np.asarray(hess, dtype=float) + np.asarray(hess, dtype=float).T)
    d = third.dim
    lam, V = _eigh(H)
    feasible_cols = np.abs(lam) <= zeta

    if feasible_cols.all():
        # whole sphere is feasible
        est = spectral_norm_lower(third, restarts=restarts, tol=tol, seed=seed)
        return _finish(third, H, [est.vector], zeta)
    if lam[0] > zeta or lam[-1] < -zeta:
        return Chi3Result(0.0, None)

    candidates = []
    S = V[:, feasible_cols]
    if S.shape[1] > 0:
        est = spectral_norm_lower(third.restrict(S), restarts=restarts, tol=tol, seed=seed)
        candidates.append(S @ est.vector)
    if third.abs_sum() == 0.0:
        if not candidates:
            candidates.append(_mixed_starts(lam, V, zeta, 1, np.random.default_rng([seed, 1]))[0])
        return _finish(third, H, candidates, zeta)

    rng = np.random.default_rng([seed, 2])
    starts = list(candidates)
    starts.extend(_mixed_starts(lam, V, zeta, restarts, rng))
    if S.shape[1] > 0:
        for _ in range(restarts):
            z = rng.standard_normal(S.shape[1])
            starts.append(S @ (z / np.linalg.norm(z)))
    Y = _feasible_ascent(H, third, zeta, np.array(starts), tol=tol, max_iter=max_iter)
    candidates.extend(Y)
    return _finish(third, H, candidates, zeta)


def _mixed_starts(lam, V, zeta, count, rng):
    # unit vectors cos(a) v_i + sin(a) v_j with lam_i > 0 > lam_j chosen so
    # that the quadratic form vanishes
    pos = np.flatnonzero(lam > zeta)
    neg = np.flatnonzero(lam < -zeta)
    if len(pos) == 0 or len(neg) == 0:
        return []
    out = []
    for _ in range(count):
        i, j = rng.choice(pos), rng.choice(neg)
        c2 = -lam[j] / (lam[i] - lam[j])
        y = math.sqrt(c2) * V[:, i] * rng.choice([-1.0, 1.0]) + math.sqrt(1.0 - c2) * V[:, j]
        out.append(y / np.linalg.norm(y))
    return out


def _feasible_ascent(H, T, zeta, starts, tol=1e-10, max_iter=100):
    # Batched ascent of T[y]^3 on the sphere that only ever accepts feasible
    # iterates.  Near the constraint boundary the direction is projected onto
    # the boundary tangent; trial points are pulled back by a few Newton
    # steps on |y^T H y| = zeta.
    A = T.data
    Y = starts / np.linalg.norm(starts, axis=1, keepdims=True)
    R, d = Y.shape
    A2 = A.reshape(d, d * d)
    scale = max(1.0, float(np.abs(H).max()))
    slack = 1e-12 * scale

    def obj(Y):
        M = (Y @ A2).reshape(-1, d, d)
        g = np.einsum("rjk,rk->rj", M, Y)
        return np.einsum("ri,ri->r", g, Y), g

    def quad(Y):
        HY = Y @ H
        c = np.einsum("ri,ri->r", HY, Y)
        return c, 2.0 * (HY - c[:, None] * Y)

    def retract(Y):
        for _ in range(4):
            c, nc = quad(Y)
            over = np.abs(c) > zeta
            if not over.any():
                break
            target = np.sign(c) * zeta
            nn = np.einsum("ri,ri->r", nc, nc)
            ok = over & (nn > 0)
            step = np.where(ok, (c - target) / np.where(nn > 0, nn, 1.0), 0.0)
            Y = Y - step[:, None] * nc
            Y = Y / np.linalg.norm(Y, axis=1, keepdims=True)
        return Y

    v, g = obj(Y)
    Y = np.where((v < 0)[:, None], -Y, Y)
    v, g = obj(Y)
    alpha = np.full(R, 0.25)
    active_runs = np.ones(R, dtype=bool)
    for _ in range(max_iter):
        if not active_runs.any():
            break
        p = 3.0 * g
        p = p - np.einsum("ri,ri->r", p, Y)[:, None] * Y
        c, nc = quad(Y)
        on_edge = np.abs(c) >= zeta - 1e-9 * scale
        outward = np.sign(c) * np.einsum("ri,ri->r", nc, p) > 0
        nn = np.einsum("ri,ri->r", nc, nc)
        cut = on_edge & outward & (nn > 0)
        coef = np.where(cut, np.einsum("ri,ri->r", nc, p) / np.where(nn > 0, nn, 1.0), 0.0)
        p = p - coef[:, None] * nc
        pn = np.linalg.norm(p, axis=1)
        active_runs &= (pn > tol * np.maximum(1.0, v)) & (alpha > 1e-9)
        direction = p / np.where(pn > 0, pn, 1.0)[:, None]
        Yt = Y + alpha[:, None] * direction
        Yt = retract(Yt / np.linalg.norm(Yt, axis=1, keepdims=True))
        vt, gt = obj(Yt)
        ct, _ = quad(Yt)
        accept = active_runs & (np.abs(ct) <= zeta + slack) & (vt > v)
        active_runs &= ~(accept & (vt - v <= tol * np.maximum(1.0, v)))
        Y = np.where(accept[:, None], Yt, Y)
        v = np.where(accept, vt, v)
        g = np.where(accept[:, None], gt, g)
        alpha = np.where(accept, np.minimum(2.0 * alpha, 1.0), 0.5 * alpha)
    return Y


def _finish(T, H, candidates, zeta):
    slack = 1e-12 * max(1.0, float(np.abs(H).max()))
    best_val, best_vec = -1.0, None
    for y in candidates:
        y = np.asarray(y, dtype=float)
        nrm = np.linalg.norm(y)
        if nrm == 0 or not np.isfinite(nrm):
            continue
        y = y / nrm
        if abs(float(y @ H @ y)) > zeta + slack:
            continue
        val = contract3(T, y)
        if val < 0:
            y, val = -y, -val
        if val > best_val or (val == best_val and tuple(y) > tuple(best_vec)):
            best_val, best_vec = val, y
    if best_vec is None:
        return Chi3Result(0.0, None)
    return Chi3Result(float(best_val), best_vec)


def criticality(grad, hess, third, zeta, restarts=16, seed=0):
    """All three measures for explicit derivatives."""
    c3 = chi3(hess, third, zeta, restarts=restarts, seed=seed)
    return CriticalityTriple(chi1(grad), chi2(hess), c3.value, c3.certificate)


def objective_criticality(problem, x, zeta, restarts=16, seed=0):
    """Exact measures of the full objective at ``x``."""
    b = problem.derivatives(x, order=3)
    return criticality(b.grad, b.hess, b.third, zeta, restarts, seed)


def model_criticality(model, s, zeta, restarts=16, seed=0):
    """Measures of a :class:`QuarticModel` at step ``s``."""
    return criticality(model.grad(s), model.hess(s), model.third(s), zeta, restarts, seed)
