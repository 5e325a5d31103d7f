import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stmopt.criticality import chi1, chi2, chi3, criticality
from stmopt.tensor import SymTensor3, contract3, spectral_norm_lower, symmetrize

from oracles import grid_form_max, lambda_min_bisection


def test_chi1_examples():
    assert chi1(np.zeros(3)) == 0.0
    assert chi1(np.array([3.0, 4.0])) == 5.0
    v = np.random.default_rng(0).standard_normal(7)
    assert chi1(v) == pytest.approx(math.sqrt(sum(x * x for x in v)))


def test_chi2_examples():
    assert chi2(np.eye(3)) == 0.0
    assert chi2(np.diag([1.0, -2.0])) == 2.0


@pytest.mark.parametrize("seed", range(3))
def test_chi2_matches_inertia_bisection(seed):
    A = np.random.default_rng(seed).standard_normal((6, 6))
    A = A + A.T
    lam = lambda_min_bisection(A)
    assert chi2(A) == pytest.approx(max(0.0, -lam), abs=1e-8)


def test_chi2_rejects_nan():
    with pytest.raises(np.linalg.LinAlgError):
        chi2(np.array([[np.nan, 0], [0, 1]]))


def test_chi3_zero_tensor():
    assert chi3(np.diag([0.0, 1.0]), SymTensor3.zeros(2), 0.5).value == 0.0


def test_chi3_infeasible():
    T = SymTensor3.rank1(np.ones(3))
    res = chi3(np.eye(3), T, 0.5)
    assert res.value == 0.0 and res.certificate is None


def test_chi3_kernel_restriction():
    T = SymTensor3.rank1(np.array([1.0, 0.0]))
    res = chi3(np.diag([0.0, 2.0]), T, 0.1)
    assert res.value == pytest.approx(1.0)
    assert abs(res.certificate[0]) == pytest.approx(1.0)


def test_unconstrained_chi3_is_spectral_norm():
    T = SymTensor3(symmetrize(np.random.default_rng(3).standard_normal((4, 4, 4))))
    assert chi3(np.zeros((4, 4)), T, math.inf).value == pytest.approx(spectral_norm_lower(T).value, rel=1e-14)


@pytest.mark.parametrize("seed", range(6))
def test_chi3_against_sphere_grid(seed):
    rng = np.random.default_rng([seed, 4])
    T = SymTensor3(symmetrize(rng.standard_normal((3, 3, 3))))
    H = np.diag(rng.uniform(-1.0, 1.0, 3))
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    H = Q @ H @ Q.T
    zeta = 0.3
    res = chi3(H, T, zeta)
    grid = grid_form_max(T.data, 40_000, H=H, zeta=zeta)
    # lower bound that the grid cannot beat by more than its resolution
    assert res.value >= grid - 2e-2 * max(1.0, grid)
    if res.certificate is not None:
        y = res.certificate
        assert np.linalg.norm(y) == pytest.approx(1.0)
        assert abs(y @ H @ y) <= zeta + 1e-10
        assert contract3(T, y) == pytest.approx(res.value, rel=1e-10)


@given(st.integers(2, 6), st.integers(0, 2**32 - 1), st.floats(0.01, 2.0))
@settings(max_examples=30, deadline=None)
def test_chi3_certificate_is_feasible(d, seed, zeta):
    rng = np.random.default_rng(seed)
    T = SymTensor3(symmetrize(rng.standard_normal((d, d, d))))
    B = rng.standard_normal((d, d))
    H = B + B.T
    res = chi3(H, T, zeta, restarts=4)
    assert res.value >= 0
    if res.certificate is not None:
        y = res.certificate
        assert abs(y @ H @ y) <= zeta * (1 + 1e-9) + 1e-9
        assert contract3(T, y) == pytest.approx(res.value, rel=1e-9, abs=1e-12)


def test_chi3_monotone_in_zeta():
    rng = np.random.default_rng(8)
    T = SymTensor3(symmetrize(rng.standard_normal((4, 4, 4))))
    H = np.diag([-1.0, -0.2, 0.1, 1.0])
    values = [chi3(H, T, z).value for z in (0.05, 0.15, 0.5, 2.0)]
    assert all(a <= b + 1e-9 for a, b in zip(values, values[1:]))


def test_criticality_triple():
    T = SymTensor3.rank1(np.array([1.0, 0.0]))
    trip = criticality(np.array([3.0, 4.0]), np.diag([0.0, -2.0]), T, zeta=0.1)
    assert trip.values() == pytest.approx((5.0, 2.0, 1.0))
