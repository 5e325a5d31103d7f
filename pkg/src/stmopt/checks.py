"""Self-checks behind ``stm check``.

Each check takes a seed and a tolerance scale and returns a
:class:`CheckResult`.  Tolerances are multiplied by ``STM_CHECK_TOL_SCALE``
when that variable is set, which makes it possible to loosen them on
unusual hardware.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .concentration import bound_crossover
from .driver import StmConfig, run
from .model import QuarticModel
from .problems import make_problem
from .sampling import plan_with_replacement, plan_without_replacement, tail_bound
from .subsolver import solve, verify_condition2
from .tensor import SymTensor3, spectral_norm_lower, symmetrize

__all__ = [
    "CHECKS",
    "CheckResult",
    "ToleranceError",
    "central_diff",
    "random_model",
    "run_checks",
    "tolerance_scale",
]

FD_TOLS = (1e-6, 1e-5, 1e-4)
REMAINDER_SLACK = 1.1
LADDER_PROBLEMS = (
    ("cosine_sum", {"n": 30, "d": 6}),
    ("nonconvex_logistic", {"n": 30, "d": 6}),
    ("quadratic_sum", {"n": 30, "d": 6}),
)


class ToleranceError(ValueError):
    """``STM_CHECK_TOL_SCALE`` is not a positive finite number."""


@dataclass
class CheckResult:
    name: str
    passed: bool
    cases: int
    failures: int
    worst: float = 0.0
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        # plain Python scalars so the result serializes to JSON
        self.passed = bool(self.passed)
        self.cases = int(self.cases)
        self.failures = int(self.failures)
        self.worst = float(self.worst)

    def to_dict(self):
        return asdict(self)


def tolerance_scale(env=None):
    env = os.environ if env is None else env
    raw = env.get("STM_CHECK_TOL_SCALE")
    if raw is None or raw == "":
        return 1.0
    try:
        value = float(raw)
    except ValueError:
        raise ToleranceError(f"STM_CHECK_TOL_SCALE={raw!r} is not a number") from None
    if not (math.isfinite(value) and value > 0):
        raise ToleranceError(f"STM_CHECK_TOL_SCALE={raw!r} must be positive and finite")
    return value


def central_diff(fun, x, h=1e-5):
    """Central differences of ``fun`` along each coordinate, stacked last."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def _ladder_errors(value, grad, hess, third, x, h=1e-5):
    # errors of grad/hess/third against differences of the level below,
    # relative to max(1, size of the analytic quantity)
    out = []
    for lo, hi in ((value, grad), (grad, hess), (hess, third)):
        fd = central_diff(lo, x, h)
        an = np.asarray(hi(x))
        out.append(float(np.abs(fd - an).max() / max(1.0, np.abs(an).max())))
    return out


def _problem_ladder(problem, x):
    def third(p):
        return problem.derivatives(p).third.data
    return _ladder_errors(problem.value, lambda p: problem.derivatives(p, 1).grad,
                          lambda p: problem.derivatives(p, 2).hess, third, x)


def _model_ladder(model, s):
    return _ladder_errors(model.eval, model.grad, model.hess, lambda p: model.third(p).data, s)


def random_model(rng, d, sigma=None):
    """Model with Gaussian ``g``, ``B``, ``T`` and a log-uniform ``sigma``."""
    B = rng.standard_normal((d, d))
    T = SymTensor3(symmetrize(rng.standard_normal((d, d, d))))
    sigma = float(10 ** rng.uniform(-1, 1)) if sigma is None else sigma
    return QuarticModel(float(rng.standard_normal()), rng.standard_normal(d), 0.5 * (B + B.T), T, sigma)


def check_derivative_ladder(seed=0, scale=1.0, instances=10):
    rng = np.random.default_rng([seed, 1])
    tols = [t * scale for t in FD_TOLS]
    worst, failures, cases = 0.0, 0, 0
    for name, params in LADDER_PROBLEMS:
        problem = make_problem(name, seed=seed, **params)
        for _ in range(instances):
            x = rng.standard_normal(problem.d)
            errs = _problem_ladder(problem, x)
            cases += 1
            failures += any(e > t for e, t in zip(errs, tols))
            worst = max(worst, max(e / t for e, t in zip(errs, tols)))
    return CheckResult("derivative_ladder", failures == 0, cases, failures, worst)


def remainder_ratios(problem, x, s, restarts=8, seed=0):
    """Taylor remainders divided by their Lipschitz bounds.

    Returns the ratios for the gradient (bound ``L_t/2 |s|^3``), Hessian
    (``L_t/2 |s|^2``) and third derivative (``L_t |s|``).  The third-derivative
    difference is measured with the spectral-norm lower bound.
    """
    L_t = problem.lipschitz.t
    r = float(np.linalg.norm(s))
    a = problem.derivatives(x)
    b = problem.derivatives(x + s)
    Ts = np.einsum("ijk,k->ij", a.third.data, s)
    e_g = np.linalg.norm(b.grad - a.grad - a.hess @ s - 0.5 * Ts @ s)
    e_b = np.linalg.norm(b.hess - a.hess - Ts, 2)
    e_t = spectral_norm_lower(b.third - a.third, restarts=restarts, seed=seed).value
    # absolute floor for round-off when L_t = 0
    fp = 1e-10 * max(1.0, np.abs(a.hess).max(), np.abs(a.third.data).max())
    bounds = (L_t / 2 * r**3, L_t / 2 * r**2, L_t * r)
    return [float(e / (REMAINDER_SLACK * bnd + fp)) for e, bnd in zip((e_g, e_b, e_t), bounds)]


def check_remainder_bounds(seed=0, scale=1.0, instances=10):
    rng = np.random.default_rng([seed, 2])
    worst, failures, cases = 0.0, 0, 0
    for name, params in LADDER_PROBLEMS:
        problem = make_problem(name, seed=seed, **params)
        for _ in range(instances):
            x = rng.standard_normal(problem.d)
            u = rng.standard_normal(problem.d)
            s = 10 ** rng.uniform(-2, 0) * u / np.linalg.norm(u)
            ratios = remainder_ratios(problem, x, s, seed=seed)
            cases += 1
            failures += max(ratios) > scale
            worst = max(worst, max(ratios))
    return CheckResult("remainder_bounds", failures == 0, cases, failures, worst)


def quartic_hessian_gap(s, sigma):
    """Largest entry of the model's quartic Hessian term minus ``sigma (|s|^2 I + 2 s s^T)``."""
    s = np.asarray(s, dtype=float)
    d = s.size
    zero = QuarticModel(0.0, np.zeros(d), np.zeros((d, d)), SymTensor3.zeros(d), sigma)
    expected = sigma * (float(s @ s) * np.eye(d) + 2.0 * np.outer(s, s))
    return float(np.abs(zero.hess(s) - expected).max())


def check_model_ladder(seed=0, scale=1.0, instances=20):
    rng = np.random.default_rng([seed, 3])
    tols = [t * scale for t in FD_TOLS]
    worst, failures = 0.0, 0
    for _ in range(instances):
        d = int(rng.integers(2, 7))
        model = random_model(rng, d)
        s = rng.standard_normal(d)
        errs = _model_ladder(model, s)
        probe = rng.integers(-3, 4, size=d).astype(float)
        exact = quartic_hessian_gap(probe, 0.5) == 0.0
        failures += any(e > t for e, t in zip(errs, tols)) or not exact
        worst = max(worst, max(e / t for e, t in zip(errs, tols)))
    return CheckResult("model_ladder", failures == 0, instances, failures, worst)


def check_condition2(seed=0, scale=1.0, instances=20):
    rng = np.random.default_rng([seed, 4])
    failures = converged = 0
    for i in range(instances):
        model = random_model(rng, int(rng.integers(2, 7)))
        res = solve(model, theta=0.1, seed=seed + i)
        if res.converged:
            converged += 1
            ok, _ = verify_condition2(model, res.s, 0.1, 0.1, restarts=16, seed=seed + 104729 + i)
            failures += not ok
    return CheckResult("condition2", failures == 0, converged, failures,
                       detail={"instances": instances, "converged": converged})


def check_step_bounds(seed=0, scale=1.0):
    runs = (
        ("quadratic_sum", {"n": 100, "d": 8}, {}),
        ("nonconvex_logistic", {"n": 200, "d": 6}, {}),
        ("cosine_sum", {"n": 200, "d": 6}, {"init_scale": 1.0, "eps": (1e-4, 1e-3, 1e-2)}),
    )
    checked = violations = 0
    per_check = {}
    for name, params, extra in runs:
        problem = make_problem(name, seed=seed, **params)
        config = StmConfig(sampling="full", seed=seed, max_iters=60, **extra)
        report = run(problem, config)
        for key, c in report.checks.items():
            if key == "budget":
                continue
            checked += c.checked
            violations += c.violations
            per_check[key] = per_check.get(key, 0) + c.violations
    return CheckResult("step_bounds", violations == 0, checked, violations, detail=per_check)


def check_sample_sizes(seed=0, scale=1.0):
    failures = cases = 0
    sigmas = (1.0, 1.0, 2.0)
    for eps in (0.05, 0.1, 0.3, 1.0):
        for delta in (0.01, 0.1, 0.5):
            wo = plan_without_replacement(eps, delta, sigmas=sigmas, d=10, N=1000)
            wi = plan_with_replacement(eps, delta, sigmas=sigmas, d=10)
            tighter = plan_without_replacement(eps / 2, delta, sigmas=sigmas, d=10, N=1000)
            cases += 1
            failures += not all(1 <= n <= 1000 for n in wo.sizes)
            failures += not all(a <= b for a, b in zip(wo.sizes, tighter.sizes))
            failures += not all(n >= 1 for n in wi.sizes)
    return CheckResult("sample_sizes", failures == 0, cases, failures)


def check_crossover(seed=0, scale=1.0):
    failures = cases = 0
    worst = 0.0
    for kind, dims, n, N in (("tensor_hs", (5, 5, 5), 200, 2000), ("tensor_hoeffding", (5, 5, 5), 200, None),
                             ("matrix_hs", (5, 5), 50, 500), ("matrix_hoeffding", (5,), 1, None)):
        bound = tail_bound(kind, dims, 2.0, n, N)
        c = bound_crossover(bound)
        grid = np.linspace(c / 2, 2 * c, 200_001)
        informative = np.array([bound.informative(t) for t in grid[::1000]])
        scan = grid[::1000][np.argmax(informative)]
        cases += 1
        # the coarse scan brackets the bisection result within one grid step
        gap = abs(scan - c) / (grid[1000] - grid[0])
        worst = max(worst, gap)
        failures += gap > 1.0
    return CheckResult("crossover", failures == 0, cases, failures, worst)


CHECKS = {
    "derivative_ladder": check_derivative_ladder,
    "remainder_bounds": check_remainder_bounds,
    "model_ladder": check_model_ladder,
    "condition2": check_condition2,
    "step_bounds": check_step_bounds,
    "sample_sizes": check_sample_sizes,
    "crossover": check_crossover,
}


def run_checks(names=None, seed=0, scale=1.0):
    """Run the named checks (all by default) in a fixed order."""
    names = list(CHECKS) if not names else list(names)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown check(s): {', '.join(unknown)}; known: {', '.join(CHECKS)}")
    return [CHECKS[n](seed=seed, scale=scale) for n in names]
