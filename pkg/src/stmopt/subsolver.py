"""Approximate minimization of the quartic model.

The solver looks for a step ``s`` with ``m(s) < m(0)`` and

    chi_m1(s) <= theta ||s||^3,  chi_m2(s) <= theta ||s||^2,  chi_m3(s) <= theta ||s||

using line-search descent from ``s = 0`` plus two kinds of escape steps:
along a negative-curvature eigenvector when the second-order test fails,
and along the chi3 certificate when the third-order test fails.  Every
accepted move strictly decreases the model.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .criticality import CriticalityTriple, chi3, model_criticality
from .model import QuarticModel

__all__ = ["Status", "SubsolveResult", "solve", "verify_condition2"]


class Status(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITER = "max_iter"
    STALLED_AT_ZERO = "stalled_at_zero"


@dataclass(frozen=True)
class SubsolveResult:
    s: np.ndarray
    model_value: float
    chi_m: CriticalityTriple
    iterations: int
    status: Status
    message: str = ""

    @property
    def converged(self):
        return self.status is Status.CONVERGED


def verify_condition2(model, s, theta, zeta, restarts=16, seed=0):
    """Check the approximate-minimization condition literally.

    Returns
    -------
    ok : bool
    triple : CriticalityTriple
        Model measures at ``s``.
    """
    s = np.asarray(s, dtype=float)
    r = float(np.linalg.norm(s))
    triple = model_criticality(model, s, zeta, restarts=restarts, seed=seed)
    ok = (
        model.eval(s) < model.eval(np.zeros_like(s))
        and triple.chi1 <= theta * r**3
        and triple.chi2 <= theta * r**2
        and triple.chi3 <= theta * r
    )
    return bool(ok), triple


def _radius_bound(model):
    # every minimizer satisfies sigma r^3 <= |g| + |B| r + |T| r^2 / 2
    sig = model.sigma
    a = np.linalg.norm(model.g)
    b = np.linalg.norm(model.B, 2)
    c = 0.5 * model.T.frobenius()
    return 3.0 * max((a / sig) ** (1 / 3), math.sqrt(b / sig), c / sig, 1e-8)


def _newton_direction(gm, lam, V, floor):
    # saddle-free Newton: |H| replaces H, so the direction always descends
    w = np.maximum(np.abs(lam), floor)
    return -V @ ((V.T @ gm) / w)


def _armijo(model, s, m_s, gm, p, c1, shrink, max_tries=80):
    slope = float(gm @ p)
    if slope >= 0:
        return None
    alpha = 1.0
    for _ in range(max_tries):
        trial = s + alpha * p
        m_t = model.eval(trial)
        if m_t <= m_s + c1 * alpha * slope and m_t < m_s:
            return trial, m_t
        alpha *= shrink
    return None


def _escape(model, s, m_s, v, alpha0):
    # scan alpha0 * 2^j for both signs; keep the lowest model value
    best = None
    for j in range(6, -41, -1):
        a = alpha0 * 2.0**j
        for sign in (1.0, -1.0):
            trial = s + sign * a * v
            m_t = model.eval(trial)
            if m_t < m_s and (best is None or m_t < best[1]):
                best = (trial, m_t)
    return best


def _quartic_reg_global(g, B, sigma):
    """Global minimizer of ``g.s + s.B.s/2 + sigma/4 |s|^4``.

    Minimizers solve ``(B + lam I) s = -g`` with ``lam = sigma |s|^2`` and
    ``B + lam I`` positive semidefinite; ``lam`` is found by bisection on
    the secular equation in the eigenbasis of ``B``.
    """
    lam_B, V = np.linalg.eigh(B)
    c = V.T @ g
    lo = max(0.0, -float(lam_B[0]))
    tiny = 1e-14 * max(1.0, float(np.abs(lam_B).max()))
    live = np.abs(lam_B + lo) > tiny

    def step(lam, mask):
        out = np.zeros_like(c)
        out[mask] = c[mask] / (lam_B[mask] + lam)
        return out

    def psi(lam):
        return float(np.sum(step(lam, np.abs(lam_B + lam) > 0) ** 2)) - lam / sigma

    if np.any(np.abs(c[~live]) > tiny * max(1.0, float(np.linalg.norm(g)))) or psi(lo + tiny) > 0:
        hi = lo + 1.0
        while psi(hi) > 0:
            hi = lo + 2.0 * (hi - lo)
        a = lo
        for _ in range(200):
            mid = 0.5 * (a + hi)
            if psi(mid) > 0:
                a = mid
            else:
                hi = mid
        lam = hi
        y = -step(lam, np.abs(lam_B + lam) > 0)
    else:
        # hard case: g has no component along the bottom eigenspace
        lam = lo
        y = -step(lam, live)
        rest = lam / sigma - float(y @ y)
        if rest > 0:
            y[np.argmin(lam_B)] += math.sqrt(rest)
    return V @ y


def solve(model, theta=0.1, zeta=None, budget=500, seed=0, inner_restarts=4,
          final_restarts=16, armijo=1e-4, backtrack=0.5, gtol=1e-10,
          stall_window=10, stall_tol=1e-9):
    """Find a step satisfying the approximate-minimization condition.

    Parameters
    ----------
    model : QuarticModel
        Must have ``sigma > 0``.
    theta : float
        Condition constant.
    zeta : float, optional
        Kernel tolerance of the third-order measure.  Defaults to ``theta``.
    budget : int
        Maximum number of model-gradient evaluations.
    seed : int
        Seed for the third-order searches.
    inner_restarts, final_restarts : int
        Starts for the third-order measure during the iteration and for the
        final independent check.
    armijo, backtrack : float
        Sufficient-decrease constant and step shrink factor.
    gtol : float
        Once the condition holds at a point with positive definite model
        Hessian, Newton steps continue until the model gradient is below
        ``gtol * max(1, |g|)``.
    stall_window, stall_tol : int, float
        Give up when the model decreased by less than ``stall_tol * |m|``
        over the last ``stall_window`` iterations.

    Returns
    -------
    SubsolveResult
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if model.sigma <= 0:
        raise ValueError("the model needs sigma > 0 to be bounded below")
    if zeta is None:
        zeta = theta
    # work with m - f0 so that tiny decreases are not lost against |f0|
    f0 = model.f0
    model = QuarticModel(0.0, model.g, model.B, model.T, model.sigma)
    d = model.dim
    s = np.zeros(d)
    m0 = model.eval(s)
    m_s = m0
    # start from the global minimizer of the model without its cubic term;
    # for T = 0 this is the global minimizer of the model itself
    warm = _quartic_reg_global(model.g, model.B, model.sigma)
    m_warm = model.eval(warm)
    if m_warm < m0:
        s, m_s = warm, m_warm
    radius = _radius_bound(model)
    alpha0 = 1.0 / math.sqrt(model.sigma)
    scale_g = max(1.0, float(np.linalg.norm(model.g)))
    evals = 0
    polishing = False
    pending = None  # certificate from a failed final check
    triple = None

    history = []
    stalled = False
    while evals < budget:
        evals += 1
        history.append(m_s)
        if len(history) > stall_window and history[-stall_window - 1] - m_s <= stall_tol * max(abs(m_s), 1e-300):
            # only negligible progress lately: the condition is out of reach here
            stalled = True
            break
        r = float(np.linalg.norm(s))
        gm = model.grad(s)
        Hm = model.hess(s)
        lam, V = np.linalg.eigh(Hm)
        c1 = float(np.linalg.norm(gm))
        c2 = max(0.0, -float(lam[0]))
        floor = 1e-8 * max(1.0, float(np.abs(lam).max()))

        if r == 0.0 and c1 <= 1e-12 * scale_g and c2 <= 1e-12:
            c3 = chi3(Hm, model.third(s), zeta, restarts=final_restarts, seed=seed)
            if c3.value <= 1e-12:
                triple = CriticalityTriple(c1, c2, c3.value, c3.certificate)
                return SubsolveResult(s, m_s + f0, triple, evals, Status.STALLED_AT_ZERO,
                                      "model is critical at the origin")
            pending = c3.certificate

        direction = None
        if pending is not None:
            direction, kind = pending, "third"
            pending = None
        elif c1 > theta * r**3 or (polishing and c1 > gtol * scale_g):
            kind = "descent"
        elif c2 > theta * r**2:
            direction, kind = V[:, 0], "curvature"
        else:
            c3 = chi3(Hm, model.third(s), zeta, restarts=inner_restarts, seed=seed + evals)
            if c3.value > theta * r:
                direction, kind = c3.certificate, "third"
            elif lam[0] > 0 and not polishing and c1 > gtol * scale_g:
                polishing = True
                kind = "descent"
            else:
                ok, triple = verify_condition2(model, s, theta, zeta, final_restarts, seed + 7919)
                if ok:
                    return SubsolveResult(s, m_s + f0, triple, evals, Status.CONVERGED)
                if triple.chi3 > theta * r and triple.chi3_certificate is not None:
                    pending = triple.chi3_certificate
                    continue
                if polishing:
                    polishing = False
                kind = "descent"

        if kind == "descent":
            p = _newton_direction(gm, lam, V, floor)
            pn = float(np.linalg.norm(p))
            if pn > 2.0 * radius:
                p *= 2.0 * radius / pn
            moved = _armijo(model, s, m_s, gm, p, armijo, backtrack)
            if moved is None:
                moved = _armijo(model, s, m_s, gm, -gm / max(1.0, float(lam[-1])), armijo, backtrack)
            if moved is None:
                if polishing:
                    # polishing stalled at round-off; accept the point as is
                    ok, triple = verify_condition2(model, s, theta, zeta, final_restarts, seed + 7919)
                    if ok:
                        return SubsolveResult(s, m_s + f0, triple, evals, Status.CONVERGED)
                    polishing = False
                    continue
                break
        else:
            moved = _escape(model, s, m_s, direction, alpha0)
            if moved is None:
                break
        s, m_s = moved

    if triple is None:
        triple = model_criticality(model, s, zeta, restarts=final_restarts, seed=seed + 7919)
    if stalled:
        message = "stagnated"
    elif evals < budget:
        message = "no decrease found"
    else:
        message = "budget exhausted"
    return SubsolveResult(s, m_s + f0, triple, evals, Status.MAX_ITER, message)
