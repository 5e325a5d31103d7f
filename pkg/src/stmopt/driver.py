"""Adaptive outer loop: sample derivatives, solve the model, test the step,
update the regularization weight.

Besides running the method, the driver evaluates the step-length and
counting inequalities of the convergence analysis on every iteration where
they are assertable and records how often they held.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .criticality import criticality, objective_criticality
from .model import QuarticModel
from .sampling import (
    DEFAULT_KAPPAS,
    Scheme,
    SamplePlan,
    condition1_errors,
    estimate_derivatives,
    full_plan,
    plan_with_replacement,
    plan_without_replacement,
)
from .subsolver import Status, solve

__all__ = [
    "Budget",
    "IterationRecord",
    "RunReport",
    "StepClass",
    "StmConfig",
    "condition1_eps",
    "iteration_budget",
    "run",
    "sigma_max_formula",
    "xi_term",
]

log = logging.getLogger(__name__)


class StepClass(str, enum.Enum):
    VERY_SUCCESSFUL = "very_successful"
    SUCCESSFUL = "successful"
    UNSUCCESSFUL = "unsuccessful"


@dataclass(frozen=True)
class StmConfig:
    """Parameters of the outer loop.

    ``sampling`` is ``"full"`` (exact derivatives), ``"without"`` or
    ``"with"`` (sizes from the concentration bounds at failure probability
    ``delta``).  ``sample_sizes`` overrides the computed sizes.  ``zeta``
    defaults to ``eps[1]``.  A positive ``init_scale`` starts from a seeded
    Gaussian point with that standard deviation instead of the origin.  In
    ``"verify"`` mode termination and the
    analysis checks use exact derivatives; ``"production"`` terminates on
    the sampled estimates.
    """

    gamma1: float = 0.5
    gamma2: float = 2.0
    gamma3: float = 4.0
    eta1: float = 0.1
    eta2: float = 0.9
    sigma0: float = 1.0
    sigma_min: float = 1e-8
    theta: float = 0.1
    zeta: float | None = None
    eps: tuple = (1e-3, 1e-2, 1e-1)
    max_iters: int = 100
    seed: int = 0
    sampling: str = "without"
    delta: float = 0.1
    kappas: tuple = DEFAULT_KAPPAS
    sample_sizes: tuple | None = None
    mode: str = "verify"
    random_sigma: bool = False
    subsolver_budget: int = 500
    chi_restarts: int = 16
    init_scale: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "eps", tuple(float(e) for e in self.eps))
        object.__setattr__(self, "kappas", tuple(float(k) for k in self.kappas))
        if self.sample_sizes is not None:
            object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        if not 0 < self.gamma1 < 1 < self.gamma2 < self.gamma3:
            raise ValueError("need 0 < gamma1 < 1 < gamma2 < gamma3")
        if not 0 < self.eta1 < self.eta2 < 1:
            raise ValueError("need 0 < eta1 < eta2 < 1")
        if self.sigma0 <= 0 or self.sigma_min <= 0:
            raise ValueError("sigma0 and sigma_min must be positive")
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if self.zeta is not None and self.zeta < 0:
            raise ValueError("zeta must be nonnegative")
        if len(self.eps) != 3 or not all(0 < e <= 1 for e in self.eps):
            raise ValueError("eps must be three tolerances in (0, 1]")
        if len(self.kappas) != 3 or min(self.kappas) <= 0:
            raise ValueError("kappas must be three positive numbers")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.sampling not in ("full", "with", "without"):
            raise ValueError(f"sampling must be 'full', 'with' or 'without', got {self.sampling!r}")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if self.sample_sizes is not None and (len(self.sample_sizes) != 3 or min(self.sample_sizes) < 1):
            raise ValueError("sample_sizes must be three positive integers")
        if self.mode not in ("verify", "production"):
            raise ValueError(f"mode must be 'verify' or 'production', got {self.mode!r}")
        if self.subsolver_budget < 1 or self.chi_restarts < 1:
            raise ValueError("subsolver_budget and chi_restarts must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.init_scale < 0:
            raise ValueError("init_scale must be nonnegative")

    @property
    def zeta_value(self):
        return self.eps[1] if self.zeta is None else self.zeta

    def to_dict(self):
        out = asdict(self)
        out["eps"] = list(self.eps)
        out["kappas"] = list(self.kappas)
        if self.sample_sizes is not None:
            out["sample_sizes"] = list(self.sample_sizes)
        return out


def condition1_eps(eps):
    """Single accuracy ``min(e1, e2^{3/2}, e3^3)`` for the sampling condition."""
    e1, e2, e3 = eps
    return min(e1, e2**1.5, e3**3)


def xi_term(eps, kappas, L_t):
    kg, kb, kt = kappas
    return eps * kg + eps ** (2 / 3) * kb / 2 + (eps ** (1 / 3) * kt + L_t) / 6


def sigma_max_formula(eps, kappas, L_t, theta, eta2, gamma3):
    """Upper bound ``gamma3 * sigma_hat`` on the regularization weight.

    ``sigma_hat`` is the weight above which every iteration is very
    successful.  Returns ``inf`` when the bound is vacuous at this ``eps``
    (its second denominator is not positive).
    """
    xi = xi_term(eps, kappas, L_t)
    denom = (1 - eta2) * eps - 8 * xi
    if eta2 >= 1 or denom <= 0:
        return math.inf
    sigma_hat = max(4 * xi / (1 - eta2), xi * (4 * L_t + 2 + 8 * theta) / denom)
    return gamma3 * sigma_hat


class Budget(NamedTuple):
    K_succ: float
    K: float
    kappa_max: float
    kappas_s: tuple


def counting_bound(n_successful, sigma_max, sigma0, gamma1, gamma2):
    """Largest iteration count compatible with ``n_successful`` successes."""
    return (1 + abs(math.log(gamma1)) / math.log(gamma2)) * n_successful + math.log(sigma_max / sigma0) / math.log(gamma2)


def iteration_budget(eps, f0, f_low, L_t, theta, sigma_max, sigma_min, sigma0, eta1, gamma1, gamma2):
    """Worst-case numbers of successful and total iterations.

    ``K`` is the counting bound evaluated at ``K_succ`` successful
    iterations.  Both are ``inf`` when ``sigma_max`` is.
    """
    e1, e2, e3 = eps
    ks = sigma_max + L_t / 2 + theta + 0.25
    ks2 = 3 * sigma_max + L_t / 2 + theta + 0.25
    ks3 = L_t + sigma_max / 2 + theta
    kappa_max = max(2 ** (1 / 3) * ks ** (4 / 3), 2 * ks2**2, 8 * ks3)
    gap = f0 - f_low
    if gap < 0:
        raise ValueError("f0 is below f_low")
    if gap == 0:
        k_succ = 0.0
    else:
        k_succ = math.ceil(8 * kappa_max * gap / (eta1 * sigma_min) * max(e1 ** (-4 / 3), e2**-2, e3**-4)) \
            if math.isfinite(kappa_max) else math.inf
    total = counting_bound(k_succ, sigma_max, sigma0, gamma1, gamma2) if math.isfinite(sigma_max) else math.inf
    if math.isfinite(total):
        total = math.ceil(total)
    return Budget(k_succ, total, kappa_max, (ks, ks2, ks3))


CSV_COLUMNS = (
    "k", "f", "sigma", "step_norm", "rho", "step_class", "chi1", "chi2", "chi3",
    "model_decrease", "n_g", "n_b", "n_t", "subsolver_status", "subsolver_iters", "condition1",
)


@dataclass
class IterationRecord:
    k: int
    f: float
    sigma: float
    step_norm: float
    rho: float
    step_class: StepClass
    chi1: float
    chi2: float
    chi3: float
    model_decrease: float
    n_g: int
    n_b: int
    n_t: int
    subsolver_status: str
    subsolver_iters: int
    condition1: bool | None

    def row(self):
        d = asdict(self)
        d["step_class"] = self.step_class.value
        return [d[c] for c in CSV_COLUMNS]


@dataclass
class CheckCount:
    checked: int = 0
    violations: int = 0

    def add(self, ok):
        self.checked += 1
        self.violations += 0 if ok else 1


@dataclass
class RunReport:
    records: list
    n_successful: int
    n_unsuccessful: int
    x: np.ndarray
    chi: tuple
    status: str
    heuristic: bool
    plan: SamplePlan
    budget: dict
    checks: dict = field(default_factory=dict)
    sigma_observed_max: float = math.nan

    @property
    def iterations(self):
        return len(self.records)

    @property
    def converged(self):
        return self.status == "converged"

    def to_dict(self):
        return {
            "status": self.status,
            "termination": "sampled estimates (heuristic)" if self.heuristic else "exact derivatives",
            "iterations": self.iterations,
            "n_successful": self.n_successful,
            "n_unsuccessful": self.n_unsuccessful,
            "x": [float(v) for v in self.x],
            "chi": [float(c) for c in self.chi],
            "sigma_observed_max": self.sigma_observed_max,
            "plan": self.plan.to_dict(),
            "budget": self.budget,
            "checks": {k: asdict(v) for k, v in self.checks.items()},
        }


def _make_plan(problem, config, eps_c):
    N = problem.n
    if config.sample_sizes is not None:
        scheme = Scheme.WITH if config.sampling == "with" else Scheme.WITHOUT
        sizes = tuple(min(n, N) for n in config.sample_sizes) if scheme is Scheme.WITHOUT else config.sample_sizes
        exact = tuple(scheme is Scheme.WITHOUT and n >= N for n in sizes)
        return SamplePlan(*sizes, scheme, {"fixed": True, "N": N}, tuple(float(n) for n in sizes), exact)
    if config.sampling == "full":
        return full_plan(N)
    if config.sampling == "without":
        return plan_without_replacement(eps_c, config.delta, config.kappas, problem.ranges, problem.d, N)
    return plan_with_replacement(eps_c, config.delta, config.kappas, problem.ranges, problem.d).clamped(N)


def _seed(config, k, purpose):
    return int(np.random.SeedSequence([config.seed, k, purpose]).generate_state(1)[0])


def _next_sigma(config, sigma, cls, rng):
    if cls is StepClass.VERY_SUCCESSFUL:
        lo, hi = max(config.sigma_min, config.gamma1 * sigma), sigma
        pick = lo
    elif cls is StepClass.SUCCESSFUL:
        lo, hi = sigma, config.gamma2 * sigma
        pick = lo
    else:
        lo, hi = config.gamma2 * sigma, config.gamma3 * sigma
        pick = lo
    if config.random_sigma:
        return float(rng.uniform(lo, hi))
    return pick


def classify(rho, eta1, eta2):
    if rho > eta2:
        return StepClass.VERY_SUCCESSFUL
    if rho >= eta1:
        return StepClass.SUCCESSFUL
    return StepClass.UNSUCCESSFUL


def run(problem, config=None, x0=None, callback=None):
    """Minimize ``problem`` and return a :class:`RunReport`.

    Parameters
    ----------
    problem : FiniteSumProblem
    config : StmConfig, optional
    x0 : array_like, optional
        Starting point; overrides ``config.init_scale``.
    callback : callable, optional
        Called with each :class:`IterationRecord` as it is produced.
    """
    config = config or StmConfig()
    verify = config.mode == "verify"
    d = problem.d
    if x0 is not None:
        x = np.array(x0, dtype=float)
    elif config.init_scale > 0:
        x = config.init_scale * np.random.default_rng(_seed(config, 0, 5)).standard_normal(d)
    else:
        x = np.zeros(d)
    if x.shape != (d,):
        raise ValueError(f"x0 must have shape ({d},)")
    eps = config.eps
    eps_c = condition1_eps(eps)
    zeta = config.zeta_value
    L_t = problem.lipschitz.t
    kg, kb, kt = config.kappas
    plan = _make_plan(problem, config, eps_c)
    all_exact = all(plan.exact)

    sigma = config.sigma0
    f = problem.value(x)
    f0 = f
    sigma_obs_max = sigma
    records = []
    n_succ = n_unsucc = 0
    checks = {name: CheckCount() for name in
              ("model_decrease", "step_vs_gradient", "step_vs_curvature", "step_vs_third", "counting", "descent", "condition1", "budget")}
    chi_seed = _seed(config, 0, 99)

    def exact_chi(point):
        return objective_criticality(problem, point, zeta, restarts=config.chi_restarts, seed=chi_seed)

    chi_x = exact_chi(x) if verify else None
    status = "max_iters"
    for k in range(config.max_iters + 1):
        bundle = estimate_derivatives(problem, x, plan, seed=_seed(config, k, 1))
        if not verify:
            chi_x = criticality(bundle.grad, bundle.hess, bundle.third, zeta,
                                restarts=config.chi_restarts, seed=chi_seed)
        if all(c <= e for c, e in zip(chi_x.values(), eps)):
            status = "converged"
            break
        if k == config.max_iters:
            break

        cond1 = None
        if verify:
            if all_exact:
                cond1 = True
            else:
                eg, eb, et = condition1_errors(bundle, problem.derivatives(x), seed=chi_seed)
                cond1 = eg <= kg * eps_c and eb <= kb * eps_c ** (2 / 3) and et <= kt * eps_c ** (1 / 3)
            checks["condition1"].add(cond1)

        model = QuarticModel(f, bundle.grad, bundle.hess, bundle.third, sigma)
        sub = solve(model, config.theta, zeta, budget=config.subsolver_budget, seed=_seed(config, k, 2))
        s = sub.s
        step_norm = float(np.linalg.norm(s))
        decrease = f - model.eval_phi(s)
        rho = math.nan
        chi_trial = None
        if sub.status is Status.CONVERGED:
            f_trial = problem.value(x + s)
            if not math.isfinite(f_trial):
                raise FloatingPointError(
                    f"objective is not finite at iteration {k} (sigma={sigma:.3g}, |s|={step_norm:.3g})"
                )
            if decrease > 1e-14 * max(1.0, abs(f)):
                rho = (f - f_trial) / decrease
                cls = classify(rho, config.eta1, config.eta2)
            else:
                cls = StepClass.UNSUCCESSFUL
            if verify:
                chi_trial = exact_chi(x + s)
                if cond1:
                    _step_length_checks(checks, chi_trial, step_norm, sigma, L_t, config)
        else:
            log.info("iteration %d: subsolver returned %s (%s)", k, sub.status.value, sub.message)
            cls = StepClass.UNSUCCESSFUL

        records.append(IterationRecord(
            k, f, sigma, step_norm, rho, cls, *chi_x.values(), decrease, *plan.sizes,
            sub.status.value, sub.iterations, cond1,
        ))
        if callback is not None:
            callback(records[-1])

        if cls is StepClass.UNSUCCESSFUL:
            n_unsucc += 1
        else:
            n_succ += 1
            checks["model_decrease"].add(model.eval_phi(np.zeros(d)) - model.eval_phi(s) > 0.25 * sigma * step_norm**4)
            checks["descent"].add(f_trial < f)
            x = x + s
            f = f_trial
            if verify:
                chi_x = chi_trial
        sigma = _next_sigma(config, sigma, cls, np.random.default_rng(_seed(config, k, 3)))
        sigma_obs_max = max(sigma_obs_max, sigma)
        checks["counting"].add(
            k + 1 <= counting_bound(n_succ, sigma_obs_max, config.sigma0, config.gamma1, config.gamma2) + 1e-9
        )

    sigma_max = sigma_max_formula(eps_c, config.kappas, L_t, config.theta, config.eta2, config.gamma3)
    budget = iteration_budget(eps, f0, problem.f_low, L_t, config.theta, sigma_max,
                              config.sigma_min, config.sigma0, config.eta1, config.gamma1, config.gamma2)
    if status == "converged":
        checks["budget"].add(len(records) <= budget.K)
    budget_info = {
        "eps_condition1": eps_c,
        "sigma_max": sigma_max,
        "K_succ": budget.K_succ,
        "K": budget.K,
        "kappa_max": budget.kappa_max,
        "C": counting_bound(n_succ, sigma_max, config.sigma0, config.gamma1, config.gamma2)
        if math.isfinite(sigma_max) else math.inf,
    }
    return RunReport(records, n_succ, n_unsucc, x, chi_x.values(), status, not verify, plan,
                     budget_info, checks, sigma_obs_max)


def _step_length_checks(checks, chi_trial, r, sigma, L_t, config):
    # step-length lower bounds in terms of the true measures at the trial point
    e1, e2, e3 = config.eps
    theta = config.theta
    k1 = sigma + L_t / 2 + theta + 0.25
    k2 = 3 * sigma + L_t / 2 + theta + 0.25
    k3 = L_t + sigma / 2 + theta
    rhs1 = chi_trial.chi1 - 0.5 * e1
    rhs2 = chi_trial.chi2 - 0.5 * e2
    rhs3 = chi_trial.chi3 - 0.5 * e3
    if rhs1 > 0:
        checks["step_vs_gradient"].add(k1 * r**3 >= rhs1)
    if rhs2 > 0:
        checks["step_vs_curvature"].add(k2 * r**2 >= rhs2)
    if rhs3 > 0:
        checks["step_vs_third"].add(k3 * r >= rhs3)
