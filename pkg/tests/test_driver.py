import math

import numpy as np
import pytest

from stmopt.driver import (
    StepClass,
    StmConfig,
    classify,
    condition1_eps,
    counting_bound,
    iteration_budget,
    run,
    sigma_max_formula,
    xi_term,
)
from stmopt.driver import _next_sigma
from stmopt.problems import FiniteSumProblem, make_cosine_sum, make_nonconvex_logistic, make_quadratic_sum

from oracles import mp_budget, mp_sigma_max

KAPPAS = (0.25, 0.25, 0.5)


@pytest.mark.parametrize("bad", [
    dict(gamma1=1.5), dict(gamma2=5.0), dict(eta1=0.95), dict(sigma0=0.0), dict(sigma_min=-1.0),
    dict(eps=(0.1, 0.1)), dict(sampling="sometimes"), dict(mode="fast"), dict(delta=0.0),
    dict(sample_sizes=(1, 0, 1)), dict(theta=0.0),
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        StmConfig(**bad)


def test_config_round_trip():
    c = StmConfig(eps=[1e-2, 1e-1, 0.5], sample_sizes=[10, 10, 10])
    assert StmConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in c.to_dict().items()}) == c
    assert c.zeta_value == 0.1


def test_classification_thresholds():
    assert classify(0.95, 0.1, 0.9) is StepClass.VERY_SUCCESSFUL
    assert classify(0.5, 0.1, 0.9) is StepClass.SUCCESSFUL
    assert classify(0.1, 0.1, 0.9) is StepClass.SUCCESSFUL
    assert classify(0.05, 0.1, 0.9) is StepClass.UNSUCCESSFUL


def test_sigma_update_endpoints():
    c = StmConfig()
    rng = np.random.default_rng(0)
    assert _next_sigma(c, 1.0, StepClass.VERY_SUCCESSFUL, rng) == 0.5
    assert _next_sigma(c, 1e-8, StepClass.VERY_SUCCESSFUL, rng) == 1e-8
    assert _next_sigma(c, 1.0, StepClass.SUCCESSFUL, rng) == 1.0
    assert _next_sigma(c, 1.0, StepClass.UNSUCCESSFUL, rng) == 2.0


def test_random_sigma_stays_in_intervals():
    c = StmConfig(random_sigma=True)
    rng = np.random.default_rng(0)
    for _ in range(100):
        assert 0.5 <= _next_sigma(c, 1.0, StepClass.VERY_SUCCESSFUL, rng) <= 1.0
        assert 1.0 <= _next_sigma(c, 1.0, StepClass.SUCCESSFUL, rng) <= 2.0
        assert 2.0 <= _next_sigma(c, 1.0, StepClass.UNSUCCESSFUL, rng) <= 4.0


def test_condition1_eps():
    assert condition1_eps((1e-3, 1e-2, 1e-1)) == pytest.approx(1e-3)
    assert condition1_eps((1.0, 0.01, 1.0)) == pytest.approx(1e-3)


def test_sigma_max_vacuous_cases():
    assert sigma_max_formula(0.01, KAPPAS, 1.0, 0.1, 1.0, 4.0) == math.inf
    assert sigma_max_formula(0.3, KAPPAS, 1.0, 0.1, 0.9, 4.0) == math.inf


def test_sigma_max_matches_high_precision():
    args = (1.0, (1e-3, 1e-3, 1e-3), 0.0, 0.1, 0.5, 4.0)
    assert sigma_max_formula(*args) == pytest.approx(mp_sigma_max(*args), rel=1e-13)
    assert sigma_max_formula(*args) == pytest.approx(0.05333333333333334, rel=1e-13)


def test_xi_monotone_in_kappas():
    base = xi_term(0.1, KAPPAS, 1.0)
    for i in range(3):
        k = list(KAPPAS)
        k[i] *= 2
        assert xi_term(0.1, tuple(k), 1.0) > base


def test_budget_matches_high_precision():
    sm = sigma_max_formula(1.0, (1e-3, 1e-3, 1e-3), 0.0, 0.1, 0.5, 4.0)
    b = iteration_budget((1e-2, 1e-1, 0.5), 2.0, 0.0, 0.0, 0.1, sm, 1e-8, 1.0, 0.1, 0.5, 2.0)
    assert (b.K_succ, b.K) == mp_budget((1e-2, 1e-1, 0.5), 2.0, 0.0, 0.1, sm, 1e-8, 1.0, 0.1, 0.5, 2.0)
    assert (b.K_succ, b.K) == (7525562695565, 15051125391126)


def test_budget_eps3_scaling():
    args = dict(f0=1.0, f_low=0.0, L_t=1.0, theta=0.1, sigma_max=1.0, sigma_min=1.0, sigma0=1.0,
                eta1=0.1, gamma1=0.5, gamma2=2.0)
    # make the eps3 term dominate, then halve eps3
    a = iteration_budget((1.0, 1.0, 0.1), **args)
    b = iteration_budget((1.0, 1.0, 0.05), **args)
    assert b.K_succ / a.K_succ == pytest.approx(16.0, rel=1e-9)


def test_budget_zero_gap():
    b = iteration_budget((0.1, 0.1, 0.1), 1.0, 1.0, 1.0, 0.1, 1.0, 1e-8, 1.0, 0.1, 0.5, 2.0)
    assert b.K_succ == 0


def test_counting_bound_formula():
    assert counting_bound(3, 8.0, 1.0, 0.5, 2.0) == pytest.approx(2 * 3 + 3)


def test_quadratic_full_batch_converges_to_mean():
    p = make_quadratic_sum(200, 20, seed=0)
    r = run(p, StmConfig(sampling="full", eps=(1e-8, 1e-8, 1e-8)))
    assert r.converged
    np.testing.assert_allclose(r.x, p.centers.mean(axis=0), atol=1e-8)
    assert r.chi[0] <= 1e-8 and r.chi[1] == 0.0 and r.chi[2] == 0.0
    assert r.n_unsuccessful == 0


def test_rejected_steps_keep_iterate():
    p = make_cosine_sum(100, 5, seed=0)
    cfg = StmConfig(sampling="full", init_scale=1.0, sigma0=1e-3, eps=(1e-4, 1e-3, 1e-2))
    r = run(p, cfg)
    assert r.n_unsuccessful > 0
    for prev, cur in zip(r.records, r.records[1:]):
        if prev.step_class is StepClass.UNSUCCESSFUL:
            assert cur.f == prev.f and cur.sigma == 2 * prev.sigma
        else:
            assert cur.f < prev.f


def test_report_bookkeeping():
    p = make_nonconvex_logistic(300, 5, seed=1)
    seen = []
    r = run(p, StmConfig(seed=4), callback=seen.append)
    assert r.n_successful + r.n_unsuccessful == r.iterations == len(seen)
    for rec in r.records:
        assert rec.step_class is classify(rec.rho, 0.1, 0.9) or math.isnan(rec.rho)
    assert all(c.violations == 0 for c in r.checks.values())
    d = r.to_dict()
    assert d["termination"] == "exact derivatives"


def test_production_mode_is_flagged_heuristic():
    p = make_nonconvex_logistic(300, 5, seed=1)
    r = run(p, StmConfig(mode="production"))
    assert r.heuristic and r.to_dict()["termination"].endswith("(heuristic)")


def test_max_iters_zero():
    p = make_cosine_sum(50, 3, seed=0)
    r = run(p, StmConfig(max_iters=0, init_scale=1.0))
    assert r.status == "max_iters" and r.iterations == 0


def test_seeded_runs_repeat():
    p = make_nonconvex_logistic(300, 5, seed=1)
    a = run(p, StmConfig(seed=9))
    b = run(p, StmConfig(seed=9))
    assert [x.row() for x in a.records] == [x.row() for x in b.records]


class _Blowup(FiniteSumProblem):
    # quadratic model data, objective NaN away from the origin
    name = "blowup"

    def __init__(self):
        super().__init__(1, 2, (1, 1, 1, 1), (0, 0, 0), -1.0)
        self.inner = make_quadratic_sum(1, 2, seed=0)

    def subsample(self, indices, x, order=3):
        b = self.inner.subsample(indices, x, order)
        if np.any(x != 0) and order == 0:
            return type(b)(math.nan, b.grad, b.hess, b.third)
        return b


def test_nonfinite_objective_aborts():
    with pytest.raises(FloatingPointError, match="iteration 0"):
        run(_Blowup(), StmConfig(sampling="full"))
