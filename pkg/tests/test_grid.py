import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mtp2.errors import DimensionMismatch, NonPositiveEntry, SupportViolation
from mtp2.grid import (
    CountGrid,
    LogPmfGrid,
    PmfGrid,
    corner_ratio_log,
    empirical_pmf,
    feasibility_gap,
    grid_from_json,
    grid_to_json,
    hellinger_sq,
    is_mtp2,
    is_supermodular,
    kl,
    normalize_log,
    read_grid,
    read_grid_csv,
    second_differences,
    write_grid_csv,
)
from mtp2.synth import make_supermodular_pmf


def random_pmf(rng, shape):
    p = rng.random(shape) + 1e-3
    return p / p.sum()


# --- types ------------------------------------------------------------------


def test_count_grid_total_and_validation():
    Y = CountGrid([[1, 2], [3, 4]])
    assert Y.total == 10
    assert Y.shape == (2, 2)
    with pytest.raises(ValueError):
        CountGrid([[1, -1]])
    with pytest.raises(ValueError):
        CountGrid([[1.5, 2.0]])
    with pytest.raises(ValueError):
        Y.counts[0, 0] = 5  # frozen buffer


def test_pmf_grid_requires_unit_mass():
    PmfGrid([[0.25, 0.25], [0.25, 0.25 + 5e-9]])
    with pytest.raises(ValueError):
        PmfGrid([[0.25, 0.25], [0.25, 0.26]])
    with pytest.raises(ValueError):
        PmfGrid([[1.1, -0.1]])


def test_normalized_log_pmf_is_checked():
    LogPmfGrid(np.log(np.full((2, 2), 0.25)), normalized=True)
    with pytest.raises(ValueError):
        LogPmfGrid(np.zeros((2, 2)), normalized=True)


# --- supermodularity --------------------------------------------------------


def test_constant_theta_is_feasible_with_zero_minor():
    r = is_supermodular(np.full((4, 5), -3.0))
    assert r.feasible
    assert r.min_minor == 0.0


def test_supermodular_family_is_feasible():
    p = make_supermodular_pmf(4, math.exp(2.0))
    assert is_supermodular(np.log(p.mass)).feasible


def test_anti_diagonal_grid_is_infeasible():
    p = np.array([[0.1, 0.4], [0.4, 0.1]])
    r = is_supermodular(np.log(p))
    assert not r.feasible
    np.testing.assert_allclose(r.min_minor, 2 * math.log(0.25), rtol=1e-14)
    assert r.argmin == (0, 0)
    m = is_mtp2(p)
    assert not m.feasible
    np.testing.assert_allclose(m.min_minor, 0.01 - 0.16, rtol=1e-12)


def test_degenerate_shapes_are_vacuously_feasible():
    for shape in [(1, 5), (5, 1), (1, 1)]:
        r = is_supermodular(np.zeros(shape))
        assert r.feasible and r.min_minor == math.inf and r.argmin is None


def test_is_mtp2_uniform_and_nonpositive():
    assert is_mtp2(np.full((3, 3), 1 / 9)).feasible
    with pytest.raises(NonPositiveEntry):
        is_mtp2([[0.5, 0.0], [0.25, 0.25]])


def test_tolerance_decides_feasibility():
    theta = np.array([[0.0, 0.0], [0.0, -1e-6]])
    assert not is_supermodular(theta).feasible
    assert is_supermodular(theta, tol=1e-5).feasible


def test_feasibility_gap_examples():
    assert feasibility_gap(np.log(make_supermodular_pmf(5, 3.0).mass)) == 0.0
    assert feasibility_gap([[0.0, 1.0], [1.0, 0.0]]) == 2.0


def test_second_differences_shape_and_value():
    theta = np.arange(12.0).reshape(3, 4) ** 2
    d = second_differences(theta)
    assert d.shape == (2, 3)
    expected = theta[:-1, :-1] + theta[1:, 1:] - theta[:-1, 1:] - theta[1:, :-1]
    np.testing.assert_array_equal(d, expected)


def test_adjacent_minors_imply_all_minors():
    p = make_supermodular_pmf(6, math.exp(1.5)).mass
    for i in range(6):
        for k in range(i + 1, 6):
            for j in range(6):
                for l in range(j + 1, 6):
                    assert p[i, j] * p[k, l] - p[i, l] * p[k, j] >= -1e-15


# --- distances --------------------------------------------------------------


def test_hellinger_examples():
    rng = np.random.default_rng(1)
    p = random_pmf(rng, (3, 3))
    assert hellinger_sq(p, p) == 0.0
    assert hellinger_sq([[1, 0], [0, 0]], [[0, 1], [0, 0]]) == 2.0
    expected = (math.sqrt(0.5) - math.sqrt(0.25)) ** 2 + (math.sqrt(0.5) - math.sqrt(0.75)) ** 2
    np.testing.assert_allclose(hellinger_sq([[0.5, 0.5]], [[0.25, 0.75]]), expected, rtol=1e-14)


def test_hellinger_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        hellinger_sq(np.full((2, 2), 0.25), np.full((1, 4), 0.25))


def test_kl_examples():
    p = np.array([[0.5, 0.5]])
    q = np.array([[0.25, 0.75]])
    assert kl(p, p) == 0.0
    np.testing.assert_allclose(kl(p, q), 0.5 * math.log(2) + 0.5 * math.log(2 / 3), rtol=1e-14)
    # zero mass in p contributes nothing
    np.testing.assert_allclose(kl([[1.0, 0.0]], [[0.5, 0.5]]), math.log(2), rtol=1e-14)
    with pytest.raises(SupportViolation):
        kl([[0.5, 0.5]], [[1.0, 0.0]])


def test_hellinger_kl_relation_in_this_convention():
    # with H^2 = sum (sqrt p - sqrt q)^2 the classical bounds read
    # H^2 <= KL <= (2 + log max p/q) H^2
    rng = np.random.default_rng(7)
    for _ in range(200):
        p, q = random_pmf(rng, (3, 4)), random_pmf(rng, (3, 4))
        h, d = hellinger_sq(p, q), kl(p, q)
        assert h <= d + 1e-12
        assert d <= (2 + math.log(np.max(p / q))) * h + 1e-12


def test_factor_two_lower_bound_needs_halved_hellinger():
    # 2 h^2 <= KL holds for h^2 = H^2 / 2 but not for the unhalved sum
    p = np.array([[0.9, 0.1]])
    q = np.array([[0.5, 0.5]])
    h = hellinger_sq(p, q)
    np.testing.assert_allclose(h, (math.sqrt(0.9) - math.sqrt(0.5)) ** 2 + (math.sqrt(0.1) - math.sqrt(0.5)) ** 2)
    assert 2 * (h / 2) <= kl(p, q)
    assert 2 * h > kl(p, q)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 3), elements=st.floats(0.01, 1.0)),
       arrays(np.float64, (3, 3), elements=st.floats(0.01, 1.0)))
def test_hellinger_properties(a, b):
    p, q = a / a.sum(), b / b.sum()
    h = hellinger_sq(p, q)
    assert 0.0 <= h <= 2.0
    np.testing.assert_allclose(h, hellinger_sq(q, p), rtol=1e-12, atol=1e-15)
    if np.allclose(p, q, rtol=0, atol=0):
        assert h == 0.0


def test_corner_ratio_examples():
    assert corner_ratio_log(np.full((3, 3), 1 / 9)) == 0.0
    np.testing.assert_allclose(corner_ratio_log([[0.1, 0.2], [0.3, 0.4]]), math.log(0.04 / 0.06), rtol=1e-14)
    with pytest.raises(NonPositiveEntry):
        corner_ratio_log([[0.0, 0.5], [0.25, 0.25]])


# --- normalization ----------------------------------------------------------


def test_normalize_log_examples():
    theta = np.log(random_pmf(np.random.default_rng(3), (3, 3)))
    out = normalize_log(theta)
    assert out.normalized
    np.testing.assert_allclose(out.theta, theta, atol=1e-12)
    np.testing.assert_allclose(normalize_log(np.zeros((2, 2))).theta, np.full((2, 2), math.log(0.25)), rtol=1e-15)
    t = np.log(np.array([[0.5, 1.0], [1.0, 0.5]]))
    out = normalize_log(t)
    np.testing.assert_allclose(out.theta, t - math.log(3.0), atol=1e-15)
    np.testing.assert_allclose(np.exp(out.theta).sum(), 1.0, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-700, 700)))
def test_normalize_log_sums_to_one_and_keeps_minors(theta):
    out = normalize_log(theta)
    assert abs(np.exp(out.theta).sum() - 1.0) <= 1e-10
    a = is_supermodular(theta).min_minor
    b = is_supermodular(out.theta).min_minor
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


def test_empirical_pmf_examples():
    np.testing.assert_array_equal(empirical_pmf([[1, 1], [1, 1]]).mass, np.full((2, 2), 0.25))
    np.testing.assert_array_equal(empirical_pmf([[3, 0], [1, 0]]).mass, [[0.75, 0.0], [0.25, 0.0]])


# --- serialisation ----------------------------------------------------------


def test_csv_round_trip(tmp_path):
    a = np.random.default_rng(0).random((3, 4))
    write_grid_csv(tmp_path / "g.csv", a)
    np.testing.assert_array_equal(read_grid_csv(tmp_path / "g.csv"), a)
    with pytest.raises(DimensionMismatch):
        read_grid_csv(tmp_path / "g.csv", shape=(4, 3))


def test_csv_rejects_ragged_rows(tmp_path):
    (tmp_path / "r.csv").write_text("1,2,3\n4,5\n")
    with pytest.raises(DimensionMismatch):
        read_grid_csv(tmp_path / "r.csv")


def test_json_envelope_round_trip(tmp_path):
    a = np.arange(6.0).reshape(2, 3)
    env = grid_to_json(a)
    assert env == {"n1": 2, "n2": 3, "data": [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]}
    np.testing.assert_array_equal(grid_from_json(json.dumps(env)), a)
    (tmp_path / "g.json").write_text(json.dumps(env))
    np.testing.assert_array_equal(read_grid(tmp_path / "g.json"), a)
    with pytest.raises(DimensionMismatch):
        grid_from_json({"n1": 2, "n2": 2, "data": [1.0, 2.0, 3.0]})
