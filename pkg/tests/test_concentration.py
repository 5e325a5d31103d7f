import math

import numpy as np
import pytest

from stmopt.concentration import (
    bound_crossover,
    default_t_grid,
    dominance_check,
    gaussian_population,
    grid_norm_upper,
    rank1_population,
    simulate_tail,
    matching_tail_bound,
    thread_count,
    wilson_interval,
)
from stmopt.sampling import tail_bound
from stmopt.tensor import SymTensor3, spectral_norm_lower

from oracles import grid_form_max


def test_wilson_interval_formula():
    z = 2.5758293035489004
    k, n = 7, 1000
    p = k / n
    center = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
    lo, hi = wilson_interval(k, n)
    assert lo == pytest.approx(center - half) and hi == pytest.approx(center + half)
    lo, hi = wilson_interval(0, n)
    assert lo == 0.0 and 0 < hi < 0.01


def test_rank1_population_range():
    pop = rank1_population(300, 4, seed=1)
    assert pop.sigma == 2.0
    assert pop.probe_range(probes=5000) <= pop.sigma


def test_gaussian_population_sigma_dominates_probe():
    pop = gaussian_population(100, 3, seed=2, probes=2000)
    assert pop.sigma >= pop.probe_range(probes=2000, seed=2)


def test_crossover_examples():
    assert bound_crossover(tail_bound("tensor_hs", (5, 5, 5), 2.0, 100, 100)) == 0.0
    assert bound_crossover(tail_bound("tensor_hoeffding", (5, 5, 5), 2.0, 100), t_max=1.0) == math.inf


@pytest.mark.parametrize("kind,dims,n,N", [
    ("tensor_hs", (5, 5, 5), 200, 2000),
    ("tensor_hoeffding", (5, 5, 5), 50, None),
    ("matrix_hs", (4, 4), 30, 300),
])
def test_crossover_matches_dense_scan(kind, dims, n, N):
    b = tail_bound(kind, dims, 2.0, n, N)
    c = bound_crossover(b)
    grid = np.linspace(0.5 * c, 1.5 * c, 1_000_001)
    h = grid[1] - grid[0]
    # evaluate the closed form in log space on the whole grid
    vals = np.array([b.log_value(t) for t in grid[::1000]])
    coarse = grid[::1000][np.argmax(vals < 0)]
    fine = grid[(grid >= coarse - 1000 * h) & (grid <= coarse)]
    first = fine[np.argmax([b.log_value(t) < 0 for t in fine])]
    assert abs(first - c) <= max(1e-6, h)
    assert b.informative(c * (1 + 1e-9)) and not b.informative(c * (1 - 1e-6))


def test_default_grid_brackets_crossover():
    b = tail_bound("tensor_hs", (5, 5, 5), 2.0, 200, 2000)
    g = default_t_grid(b)
    c = bound_crossover(b)
    assert g[0] == pytest.approx(c / 4) and g[-1] == pytest.approx(4 * c)


def test_exhaustive_sample_has_no_deviation():
    pop = rank1_population(200, 3, seed=0)
    est = simulate_tail(pop, 200, "without", trials=1000, seed=1)
    positive = est.t_grid > 0
    assert not est.freq[positive].any()
    assert est.sound()


def test_vector_population_frequencies_valid():
    pop = rank1_population(500, 4, k=1, seed=0)
    est = simulate_tail(pop, 20, "with", trials=1000, seed=2, t_grid=np.linspace(0, 10, 21))
    assert np.all((0 <= est.freq) & (est.freq <= 1))
    assert est.freq[0] == 1.0 and np.all(np.diff(est.freq) <= 0)
    # deviations of vector sums are plain Euclidean norms
    assert est.sound()


def test_matrix_population_uses_exact_norm():
    pop = rank1_population(300, 3, k=2, seed=0)
    est = simulate_tail(pop, 30, "without", trials=1000, seed=3)
    assert est.sound()


def test_thread_count_does_not_change_results(monkeypatch):
    pop = rank1_population(300, 3, seed=0)
    a = simulate_tail(pop, 30, "with", trials=1000, seed=5, threads=1)
    b = simulate_tail(pop, 30, "with", trials=1000, seed=5, threads=3)
    np.testing.assert_array_equal(a.sum_deviations, b.sum_deviations)
    monkeypatch.setenv("STM_THREADS", "4")
    assert thread_count() == 4
    monkeypatch.setenv("STM_THREADS", "x")
    with pytest.raises(ValueError):
        thread_count()


def test_preconditions():
    pop = rank1_population(100, 3, seed=0)
    with pytest.raises(ValueError):
        simulate_tail(pop, 10, "with", trials=999)
    with pytest.raises(ValueError):
        simulate_tail(pop, 101, "without", trials=1000)
    with pytest.raises(ValueError):
        simulate_tail(pop, 10, "sideways", trials=1000)


def test_grid_upper_bound_brackets_power_iteration():
    rng = np.random.default_rng(0)
    D = rng.standard_normal((5, 3, 3, 3))
    D = np.array([SymTensor3(x).data for x in D])
    up = grid_norm_upper(D)
    for T, u in zip(D, up):
        low = spectral_norm_lower(SymTensor3(T)).value
        assert low <= u + 1e-12
        assert grid_form_max(T, 20_000) <= u


def test_with_replacement_is_sound_small():
    pop = rank1_population(500, 3, seed=0)
    est = simulate_tail(pop, 50, "with", trials=1000, seed=4)
    assert est.normalization == "sum" and est.sound()


def test_hs_bound_on_the_raw_sum_is_violated():
    # the without-replacement bound read as a bound on the sum fails: the
    # sum's deviations are about n times the mean's
    pop = rank1_population(2000, 5, seed=0)
    est = simulate_tail(pop, 50, "without", trials=1000, seed=1, normalization="sum")
    assert not est.sound()
    good = simulate_tail(pop, 50, "without", trials=1000, seed=1)
    assert good.normalization == "mean" and good.sound()
    np.testing.assert_array_equal(est.sum_deviations, good.sum_deviations)


def test_dominance_small():
    pop = rank1_population(300, 3, seed=0)
    wo = simulate_tail(pop, 150, "without", trials=1000, seed=6)
    wi = simulate_tail(pop, 150, "with", trials=1000, seed=7)
    assert wo.sum_deviations.mean() < wi.sum_deviations.mean()
    assert dominance_check(wo, wi)


def test_matching_tail_bound_selection():
    pop = rank1_population(100, 3, seed=0)
    assert matching_tail_bound(pop, 10, "without").kind == "tensor_hs"
    assert matching_tail_bound(pop, 10, "with").kind == "tensor_hoeffding"


def test_rows_csv_shape():
    pop = rank1_population(200, 3, seed=0)
    est = simulate_tail(pop, 20, "with", trials=1000, seed=1)
    rows = list(est.rows())
    assert len(rows) == len(est.t_grid) and all(len(r) == 5 for r in rows)


def test_wilson_endpoints_exact():
    lo, _ = wilson_interval(0, 10_000)
    _, hi = wilson_interval(10_000, 10_000)
    assert lo == 0.0 and hi == 1.0
