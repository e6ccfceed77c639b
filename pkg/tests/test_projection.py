import numpy as np
import pytest
from scipy.optimize import minimize

from mtp2.errors import DimensionMismatch, InvalidParameters, SizeLimit
from mtp2.grid import feasibility_gap, is_supermodular
from mtp2.projection import (
    BoxBounds,
    ProjectionOptions,
    constraint_matrix,
    dykstra_project,
    harmonic_weights,
    init_state,
    oracle_project,
    project_box,
    project_cell,
    run_sweeps,
)
from mtp2.solver import build_box

CROSS = np.array([[0.0, 1.0], [1.0, 0.0]])


def supermodular_point(rng, shape):
    n1, n2 = shape
    a, b = rng.normal(size=n1), rng.normal(size=n2)
    c = np.cumsum(rng.uniform(0, 0.5, size=n1))
    d = np.cumsum(rng.uniform(0, 0.5, size=n2))
    return a[:, None] + b[None, :] + np.outer(c, d)


def random_instance(rng, shape, with_box):
    """Random target and log-uniform weights; boxes contain a feasible point."""
    y = rng.normal(scale=1.0, size=shape)
    w = np.exp(rng.uniform(np.log(1e-3), 0.0, size=shape))
    bounds = None
    if with_box:
        x0 = supermodular_point(rng, shape)
        bounds = BoxBounds(x0 - rng.uniform(0.05, 1.0, size=shape), x0 + rng.uniform(0.05, 1.0, size=shape))
    return y, w, bounds


def wnorm(x, w):
    return float(np.sqrt(np.sum(w * x * x)))


# --- harmonic weights -------------------------------------------------------


def test_harmonic_weights_examples():
    np.testing.assert_array_equal(harmonic_weights(np.ones((3, 4))), np.full((2, 3), 0.25))
    np.testing.assert_array_equal(harmonic_weights(np.full((2, 2), 4.0)), [[1.0]])
    np.testing.assert_allclose(harmonic_weights([[1.0, 2.0], [4.0, 4.0]]), [[0.5]], rtol=1e-15)


def test_harmonic_weights_structure():
    w = np.exp(np.random.default_rng(0).uniform(-5, 0, size=(5, 6)))
    g = harmonic_weights(w)
    inv = 1 / w
    np.testing.assert_allclose(1 / g, inv[:-1, :-1] + inv[1:, 1:] + inv[:-1, 1:] + inv[1:, :-1], rtol=1e-14)
    window_min = np.minimum(np.minimum(w[:-1, :-1], w[1:, 1:]), np.minimum(w[:-1, 1:], w[1:, :-1]))
    assert np.all((g > 0) & (g <= window_min))


# --- single cell ------------------------------------------------------------


def test_project_cell_leaves_feasible_window_alone():
    Z = np.array([[1.0, 0.0], [0.0, 1.0]])
    w = np.ones((2, 2))
    out, eta = project_cell(Z, w, harmonic_weights(w), (0, 0), 0.0)
    np.testing.assert_array_equal(out, Z)
    assert eta == 0.0


def test_project_cell_cross_example():
    w = np.ones((2, 2))
    out, eta = project_cell(CROSS, w, harmonic_weights(w), (0, 0), 0.0)
    assert eta == 0.5
    np.testing.assert_allclose(out, np.full((2, 2), 0.5), atol=1e-15)


def test_project_cell_idempotent_with_carried_residual():
    rng = np.random.default_rng(4)
    Z = rng.normal(size=(3, 3))
    w = rng.uniform(0.1, 1.0, size=(3, 3))
    g = harmonic_weights(w)
    once, eta = project_cell(Z, w, g, (1, 0), 0.0)
    # applying the projection again to its own output changes nothing
    twice, eta2 = project_cell(once, w, g, (1, 0), 0.0)
    np.testing.assert_allclose(twice, once, atol=1e-14)
    assert eta2 == 0.0


def test_project_cell_update_shape_and_norm():
    rng = np.random.default_rng(5)
    for _ in range(20):
        Z = rng.normal(size=(4, 4))
        w = rng.uniform(1e-3, 1.0, size=(4, 4))
        g = harmonic_weights(w)
        cell = tuple(rng.integers(0, 3, size=2))
        eta_in = float(rng.uniform(0, 0.5))
        out, eta_out = project_cell(Z, w, g, cell, eta_in)
        delta = out - Z
        i, j = cell
        mask = np.zeros_like(Z, dtype=bool)
        mask[i : i + 2, j : j + 2] = True
        assert np.all(delta[~mask] == 0)
        signs = np.array([[1, -1], [-1, 1]])
        np.testing.assert_allclose(delta[mask].reshape(2, 2), signs / w[mask].reshape(2, 2) * (eta_out - eta_in),
                                   rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(np.sum(w * delta**2), (eta_out - eta_in) ** 2 / g[i, j], rtol=1e-10)
        if eta_out > 0:
            d = out[i, j] + out[i + 1, j + 1] - out[i, j + 1] - out[i + 1, j]
            assert d >= -1e-12


def test_project_cell_rejects_negative_residual():
    w = np.ones((2, 2))
    with pytest.raises(InvalidParameters):
        project_cell(CROSS, w, harmonic_weights(w), (0, 0), -0.1)


# --- box --------------------------------------------------------------------


def test_project_box_examples():
    b = BoxBounds.constant((2, 2), -1.0, 1.0)
    Z = np.array([[0.5, -0.5], [0.0, 1.0]])
    np.testing.assert_array_equal(project_box(Z, b), Z)
    np.testing.assert_array_equal(project_box([[5.0]], BoxBounds([[0.0]], [[1.0]])), [[1.0]])
    box = build_box([[2, 2], [2, 2]])
    np.testing.assert_allclose(box.lower, np.full((2, 2), np.log(1 / 6)), rtol=1e-15)
    np.testing.assert_allclose(box.upper, np.full((2, 2), np.log(1 / 2)), rtol=1e-15)
    np.testing.assert_allclose(project_box(np.zeros((2, 2)), box), np.full((2, 2), np.log(0.5)), rtol=1e-15)


def test_infinite_bounds_are_no_ops():
    Z = np.array([[-1e300, 1e300]])
    np.testing.assert_array_equal(project_box(Z, BoxBounds.constant((1, 2))), Z)


def test_box_bounds_validation():
    with pytest.raises(InvalidParameters):
        BoxBounds([[1.0]], [[0.0]])
    with pytest.raises(DimensionMismatch):
        BoxBounds(np.zeros((2, 2)), np.zeros((2, 3)))


# --- Dykstra ----------------------------------------------------------------


def test_feasible_input_is_a_fixed_point():
    y = np.add.outer(np.arange(3.0), np.arange(4.0)) + 0.1 * np.outer(np.arange(3.0), np.arange(4.0))
    theta, st = dykstra_project(y, np.ones_like(y))
    np.testing.assert_array_equal(theta, y)
    assert st.sweeps == 1
    assert st.rel_change == 0.0
    assert st.converged


def test_cross_example():
    theta, st = dykstra_project(CROSS, np.ones((2, 2)))
    np.testing.assert_allclose(theta, np.full((2, 2), 0.5), atol=1e-12)
    np.testing.assert_allclose(oracle_project(CROSS, np.ones((2, 2))), np.full((2, 2), 0.5), atol=1e-12)


def test_matches_oracle_on_random_3x3():
    rng = np.random.default_rng(11)
    for k in range(20):
        y, w, b = random_instance(rng, (3, 3), with_box=k % 2 == 0)
        theta, st = dykstra_project(y, w, b)
        np.testing.assert_allclose(theta, oracle_project(y, w, b), atol=1e-5, rtol=0)


def test_residuals_stay_nonnegative_and_state_is_consistent():
    rng = np.random.default_rng(12)
    y, w, b = random_instance(rng, (4, 5), with_box=True)
    theta, st = dykstra_project(y, w, b)
    assert np.all(st.eta >= 0)
    assert st.eta.shape == (3, 4) and st.eta_box.shape == (4, 5)
    # the iterate is the target minus the accumulated (weighted) corrections
    push = np.zeros_like(y)
    push[:-1, :-1] += st.eta
    push[:-1, 1:] -= st.eta
    push[1:, :-1] -= st.eta
    push[1:, 1:] += st.eta
    np.testing.assert_allclose(st.theta, y + push / w - st.eta_box, atol=1e-9)


def test_feasibility_after_projection_of_random_8x8():
    rng = np.random.default_rng(13)
    for _ in range(5):
        y = rng.normal(size=(8, 8))
        w = rng.uniform(1e-3, 1.0, size=(8, 8))
        theta, st = dykstra_project(y, w)
        assert feasibility_gap(theta) <= 1e-5
        assert st.feasibility_gap <= 1e-5


def test_feasibility_with_solver_like_weights():
    # weights exp(theta) of a smooth log-PMF, as produced inside the Newton loop
    from mtp2.synth import make_supermodular_pmf

    rng = np.random.default_rng(14)
    for n, L in [(16, np.exp(2.0)), (32, np.exp(0.2)), (64, np.exp(0.02))]:
        p = make_supermodular_pmf(n, L).mass
        w = p * np.exp(0.3 * rng.normal(size=(n, n)))
        y = np.log(p) + rng.normal(scale=0.05, size=(n, n))
        theta, st = dykstra_project(y, w)
        assert feasibility_gap(theta) <= 1e-5


@pytest.mark.slow
@pytest.mark.parametrize("n", [8, 16, 32, 64])
def test_feasibility_with_rough_weights_over_full_range(n):
    # i.i.d. log-uniform weights on [1e-4, 1]; the hardest inputs in the design envelope
    rng = np.random.default_rng(100 + n)
    y = rng.normal(size=(n, n))
    w = np.exp(rng.uniform(np.log(1e-4), 0.0, size=(n, n)))
    theta, st = dykstra_project(y, w)
    assert feasibility_gap(theta) <= 1e-5, st.diagnostics()


def test_monotone_approach_to_the_projection():
    rng = np.random.default_rng(15)
    for k in range(8):
        y, w, b = random_instance(rng, (3, 3), with_box=False)
        star = oracle_project(y, w, b)
        state = init_state(y, w)
        dist = [wnorm(state.theta - star, w)]
        for _ in range(200):
            run_sweeps(state, w, b, sweeps=1)
            dist.append(wnorm(state.theta - star, w))
        assert np.all(np.diff(dist) <= 1e-12)
        assert dist[-1] < 1e-6


def test_box_runs_reach_the_projection():
    # with a box the distance need not shrink every sweep, but the limit is right
    rng = np.random.default_rng(21)
    for _ in range(8):
        y, w, b = random_instance(rng, (3, 3), with_box=True)
        theta, st = dykstra_project(y, w, b, ProjectionOptions(rel_tol=1e-9, feas_tol=1e-9))
        np.testing.assert_allclose(theta, oracle_project(y, w, b), atol=1e-6)


def test_one_reversed_sweep_leaves_converged_iterate():
    rng = np.random.default_rng(16)
    y, w, b = random_instance(rng, (4, 4), with_box=True)
    _, st = dykstra_project(y, w, b, ProjectionOptions(rel_tol=1e-13, feas_tol=0.0, max_sweeps=2_000_000))
    before = st.theta.copy()
    run_sweeps(st, w, b, sweeps=1, reverse=True)
    np.testing.assert_allclose(st.theta, before, atol=1e-10, rtol=0)


def test_hitting_the_sweep_cap_is_soft():
    rng = np.random.default_rng(17)
    y = rng.normal(size=(6, 6))
    w = rng.uniform(1e-3, 1.0, size=(6, 6))
    theta, st = dykstra_project(y, w, opts=ProjectionOptions(max_sweeps=2))
    assert st.sweeps == 2
    assert not st.converged
    assert set(st.diagnostics()) == {"sweeps", "feasibility_gap", "rel_change", "converged"}


def test_warm_start_converges_to_the_same_point():
    rng = np.random.default_rng(18)
    y, w, b = random_instance(rng, (4, 4), with_box=True)
    _, st = dykstra_project(y, w, b)
    y2 = y + 0.05 * rng.normal(size=y.shape)
    w2 = w * np.exp(0.1 * rng.normal(size=y.shape))
    cold, _ = dykstra_project(y2, w2, b)
    warm, _ = dykstra_project(y2, w2, b, duals=st.duals(w))
    np.testing.assert_allclose(warm, cold, atol=1e-5)
    np.testing.assert_allclose(warm, oracle_project(y2, w2, b), atol=1e-5)


def test_include_box_false_ignores_bounds():
    y = CROSS + 3.0
    b = BoxBounds.constant((2, 2), -1.0, 1.0)
    theta, _ = dykstra_project(y, np.ones((2, 2)), b, ProjectionOptions(include_box=False))
    np.testing.assert_allclose(theta, np.full((2, 2), 3.5), atol=1e-12)


def test_input_validation():
    with pytest.raises(DimensionMismatch):
        dykstra_project(np.zeros((2, 2)), np.ones((2, 3)))
    with pytest.raises(InvalidParameters):
        dykstra_project(np.zeros((2, 2)), np.array([[1.0, 0.0], [1.0, 1.0]]))
    with pytest.raises(InvalidParameters):
        ProjectionOptions(rel_tol=0.0)
    with pytest.raises(InvalidParameters):
        ProjectionOptions(max_sweeps=0)


# --- oracle -----------------------------------------------------------------


def test_oracle_fixed_point_and_size_limit():
    y = np.outer(np.arange(3.0), np.arange(3.0))
    np.testing.assert_allclose(oracle_project(y, np.ones((3, 3))), y, atol=1e-14)
    with pytest.raises(SizeLimit):
        oracle_project(np.zeros((6, 2)), np.ones((6, 2)))


def test_oracle_agrees_with_generic_solver():
    # independent check of the oracle itself with a general NLP method
    rng = np.random.default_rng(19)
    A = constraint_matrix((3, 3))
    for k in range(6):
        y, w, b = random_instance(rng, (3, 3), with_box=k % 2 == 0)
        cons = [{"type": "ineq", "fun": lambda x: A @ x, "jac": lambda x: A}]
        bnds = None if b is None else list(zip(b.lower.ravel(), b.upper.ravel()))
        x0 = np.zeros(9) if b is None else (b.lower.ravel() + b.upper.ravel()) / 2
        res = minimize(lambda x: 0.5 * np.sum(w.ravel() * (x - y.ravel()) ** 2), x0,
                       jac=lambda x: w.ravel() * (x - y.ravel()), constraints=cons, bounds=bnds,
                       method="SLSQP", options={"ftol": 1e-15, "maxiter": 1000})
        np.testing.assert_allclose(oracle_project(y, w, b), res.x.reshape(3, 3), atol=1e-6)


def test_oracle_output_satisfies_kkt():
    rng = np.random.default_rng(20)
    y, w, b = random_instance(rng, (4, 4), with_box=False)
    x = oracle_project(y, w, b)
    assert is_supermodular(x, tol=1e-10).feasible
    A = constraint_matrix((4, 4))
    # stationarity: w (x - y) = A^T lam with lam >= 0 and complementary slackness
    lam, *_ = np.linalg.lstsq(A.T, (w * (x - y)).ravel(), rcond=None)
    np.testing.assert_allclose(A.T @ lam, (w * (x - y)).ravel(), atol=1e-10)
    assert np.all(lam >= -1e-9)
    np.testing.assert_allclose(lam * (A @ x.ravel()), 0.0, atol=1e-9)
