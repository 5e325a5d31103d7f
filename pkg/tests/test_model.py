import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stmopt.checks import quartic_hessian_gap, random_model
from stmopt.model import QuarticModel, quartic_third
from stmopt.tensor import SymTensor3

from oracles import fd_gradient, loop_contract1, loop_contract2, loop_contract3


def scalar_model():
    # m(s) = s + s^4
    return QuarticModel(0.0, np.array([1.0]), np.zeros((1, 1)), SymTensor3.zeros(1), 4.0)


def test_origin_value_is_f0():
    m = random_model(np.random.default_rng(0), 4)
    assert m.eval(np.zeros(4)) == m.eval_phi(np.zeros(4)) == m.f0


def test_scalar_model_assembly():
    m = scalar_model()
    for s in (-1.0, 0.3, 2.0):
        assert m.eval(np.array([s])) == pytest.approx(s + s**4)


def test_scalar_model_stationary_point():
    s_star = -(4.0 ** (-1.0 / 3.0))
    assert s_star == pytest.approx(-0.6299605249474366)
    assert m_grad(s_star) == pytest.approx(0.0, abs=1e-15)


def m_grad(s):
    return scalar_model().grad(np.array([s]))[0]


def test_terms_match_loop_evaluation():
    rng = np.random.default_rng(1)
    m = random_model(rng, 4)
    s = rng.standard_normal(4)
    T = m.T.data
    r2 = s @ s
    value = m.f0 + m.g @ s + 0.5 * s @ m.B @ s + loop_contract3(T, s) / 6 + m.sigma / 4 * r2**2
    grad = m.g + m.B @ s + 0.5 * loop_contract2(T, s) + m.sigma * r2 * s
    hess = m.B + loop_contract1(T, s) + m.sigma * (r2 * np.eye(4) + 2 * np.outer(s, s))
    assert m.eval(s) == pytest.approx(value, rel=1e-13)
    np.testing.assert_allclose(m.grad(s), grad, atol=1e-12)
    np.testing.assert_allclose(m.hess(s), hess, atol=1e-12)


def test_gradient_at_origin_is_g():
    m = random_model(np.random.default_rng(2), 5)
    np.testing.assert_array_equal(m.grad(np.zeros(5)), m.g)
    np.testing.assert_array_equal(m.hess(np.zeros(5)), m.B)


def test_quartic_hessian_on_unit_probe():
    # sigma = 1, B = 0, T = 0, s = e1 gives diag(3, 1)
    m = QuarticModel(0.0, np.zeros(2), np.zeros((2, 2)), SymTensor3.zeros(2), 1.0)
    np.testing.assert_array_equal(m.hess(np.array([1.0, 0.0])), [[3.0, 0.0], [0.0, 1.0]])


@given(st.lists(st.integers(-5, 5), min_size=1, max_size=6), st.sampled_from([0.25, 0.5, 1.0, 2.0]))
@settings(max_examples=50, deadline=None)
def test_quartic_hessian_exact_on_integer_probes(s, sigma):
    assert quartic_hessian_gap(np.array(s, dtype=float), sigma) == 0.0


def test_third_derivative_special_cases():
    m = random_model(np.random.default_rng(3), 3)
    assert m.third(np.zeros(3)) is m.T
    assert m.with_sigma(0.0).third(np.ones(3)) is m.T


def test_quartic_third_form():
    rng = np.random.default_rng(4)
    s, y = rng.standard_normal((2, 5))
    Q = quartic_third(s)
    assert loop_contract3(Q.data, y) == pytest.approx(6 * (s @ y) * (y @ y), rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_derivative_ladder(seed):
    rng = np.random.default_rng([seed, 9])
    m = random_model(rng, 6)
    s = rng.standard_normal(6)
    np.testing.assert_allclose(fd_gradient(m.eval, s), m.grad(s), atol=1e-6 * max(1, np.abs(m.grad(s)).max()))
    np.testing.assert_allclose(fd_gradient(m.grad, s), m.hess(s), atol=1e-5 * max(1, np.abs(m.hess(s)).max()))
    T = m.third(s).data
    np.testing.assert_allclose(fd_gradient(m.hess, s), T, atol=1e-4 * max(1, np.abs(T).max()))


def test_third_form_matches_directional_difference():
    rng = np.random.default_rng(5)
    m = random_model(rng, 4)
    s, y = rng.standard_normal((2, 4))
    h = 1e-5
    fd = (y @ m.hess(s + h * y) @ y - y @ m.hess(s - h * y) @ y) / (2 * h)
    assert m.third_form(s, y) == pytest.approx(fd, rel=1e-6)
    assert m.third_form(s, y) == pytest.approx(loop_contract3(m.third(s).data, y), rel=1e-12)


def test_invalid_models():
    with pytest.raises(ValueError):
        QuarticModel(0.0, np.zeros(2), np.zeros((3, 3)), SymTensor3.zeros(2), 1.0)
    with pytest.raises(ValueError):
        QuarticModel(0.0, np.zeros(2), np.zeros((2, 2)), SymTensor3.zeros(2), -1.0)
