import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar
from scipy.special import expit

from conftest import random_connected_counts, round_robin
from dynbt.data import Dataset
from dynbt.errors import DomainError, EmptyData, MaxIterExceeded, NotStronglyConnected
from dynbt.graph import condition1_holds
from dynbt.kernel import KernelFamily, KernelSpec, smooth_counts, smooth_counts_grid
from dynbt.solver import (
    Method, empirical_risk, fit, fit_static, fit_trajectory, hessian, projection, rank, residual_floor,
    risk_gradient, stationarity_residual, win_prob,
)


def plane_search(risk):
    '''Nested golden-section search over the plane beta = (x, y, -x - y).'''
    def inner(x):
        res = minimize_scalar(lambda y: risk(np.array([x, y, -x - y])), bracket=(-3, 3), method='golden', tol=1e-12)
        return res.fun, res.x

    outer = minimize_scalar(lambda x: inner(x)[0], bracket=(-3, 3), method='golden', tol=1e-12)
    y = inner(outer.x)[1]
    return np.array([outer.x, y, -outer.x - y])


def double_loop_risk(beta, X):
    total, acc = 0.0, 0.0
    for i in range(len(beta)):
        for j in range(len(beta)):
            if i != j:
                acc += X[i, j] * math.log(1 + math.exp(beta[j] - beta[i]))
                total += X[i, j]
    return acc / total


def random_instance(rng, n):
    while True:
        X = rng.integers(0, 4, size=(n, n)).astype(float)
        np.fill_diagonal(X, 0.0)
        if condition1_holds(X):
            return X


def test_risk_at_zero_is_log2(rng):
    X = random_connected_counts(rng, 5)
    assert empirical_risk(np.zeros(5), X) == pytest.approx(math.log(2), abs=1e-15)


def test_risk_two_teams():
    X = np.array([[0.0, 1.0], [0.0, 0.0]])
    for b in [-2.0, 0.3, 5.0]:
        assert empirical_risk(np.array([b, -b]), X) == pytest.approx(math.log(1 + math.exp(-2 * b)))


def test_risk_matches_double_loop(rng):
    X = random_connected_counts(rng, 4)
    beta = rng.normal(size=4)
    assert empirical_risk(beta, X) == pytest.approx(double_loop_risk(beta, X), rel=1e-12)


def test_risk_without_games():
    with pytest.raises(EmptyData):
        empirical_risk(np.zeros(3), np.zeros((3, 3)))


def test_risk_is_overflow_free():
    X = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert np.isfinite(empirical_risk(np.array([800.0, -800.0]), X))


def test_symmetric_counts_give_zero():
    X = 2.0 * (np.ones((4, 4)) - np.eye(4))
    np.testing.assert_allclose(fit(X).scores, 0.0, atol=1e-12)


def test_two_team_closed_form():
    report = fit(np.array([[0.0, 3.0], [1.0, 0.0]]))
    assert report.converged
    np.testing.assert_allclose(report.scores, [math.log(3) / 2, -math.log(3) / 2], atol=1e-10)


def test_three_teams_against_plane_search():
    X = np.array([[0, 2, 1], [1, 0, 2], [1, 1, 0]], dtype=float)
    expected = plane_search(lambda b: empirical_risk(b, X))
    np.testing.assert_allclose(fit(X).scores, expected, atol=1e-4)


def test_random_three_team_instances(rng):
    for _ in range(50):
        X = random_instance(rng, 3)
        expected = plane_search(lambda b: empirical_risk(b, X))
        np.testing.assert_allclose(fit(X).scores, expected, atol=1e-4)


def test_solvers_agree(rng):
    for _ in range(200):
        n = int(rng.integers(2, 7))
        X = random_instance(rng, n)
        mm = fit(X, method=Method.MM)
        gd = fit(X, max_iter=200000, method=Method.GRADIENT)
        newton = fit(X, method=Method.NEWTON)
        assert mm.converged and gd.converged and newton.converged
        np.testing.assert_allclose(mm.scores, gd.scores, atol=1e-6)
        np.testing.assert_allclose(mm.scores, newton.scores, atol=1e-6)
        for report in (mm, gd, newton):
            assert stationarity_residual(report.scores, X) <= 1e-9
        assert abs(mm.scores.sum()) <= 1e-9


def test_report_invariants(rng):
    X = random_connected_counts(rng, 5)
    report = fit(X, tol=1e-10)
    assert report.converged and report.grad_inf_norm <= 1e-10
    assert report.final_risk == pytest.approx(empirical_risk(report.scores, X))


@pytest.mark.parametrize('method', list(Method))
def test_residual_meets_tol_on_large_counts(rng, method):
    X = rng.integers(50, 501, size=(6, 6)).astype(float)
    np.fill_diagonal(X, 0.0)
    assert residual_floor(X) < 1e-10
    report = fit(X, method=method, max_iter=200000)
    assert report.converged
    assert report.grad_inf_norm == stationarity_residual(report.scores, X)
    assert stationarity_residual(report.scores, X) <= 1e-10


def test_residual_meets_tol_on_smoothed_counts():
    dataset = round_robin(6, 40, games=3)
    spec = KernelSpec(KernelFamily.GAUSSIAN, 0.01)
    smoothed = smooth_counts_grid(dataset, spec, dataset.distinct_times)
    for method in (Method.MM, Method.NEWTON):
        reports = fit_trajectory(dataset, spec, method=method)
        for report, X in zip(reports, smoothed):
            assert report.converged
            assert stationarity_residual(report.scores, X) <= 1e-10


def test_newton_reaches_tight_tolerance(rng):
    # the risk is flat to float64 well before the residual reaches 1e-12
    for _ in range(50):
        X = random_instance(rng, int(rng.integers(3, 7)))
        report = fit(X, tol=1e-12, method=Method.NEWTON)
        assert report.converged
        assert report.iterations < 100


def test_residual_floor_for_huge_counts():
    X = 1e9 * (np.ones((3, 3)) - np.eye(3))
    X[0, 1] *= 3
    report = fit(X)
    assert report.converged
    assert report.grad_inf_norm <= residual_floor(X)


def test_scale_invariance(rng):
    X = random_connected_counts(rng, 5)
    np.testing.assert_allclose(fit(X).scores, fit(7.5 * X).scores, atol=1e-9)


def test_label_equivariance(rng):
    X = random_connected_counts(rng, 5)
    perm = rng.permutation(5)
    Xp = np.empty_like(X)
    Xp[np.ix_(perm, perm)] = X
    np.testing.assert_allclose(fit(Xp).scores[perm], fit(X).scores, atol=1e-9)


def test_disconnected_raises():
    X = np.array([[0, 1, 1], [1, 0, 1], [0, 0, 0]], dtype=float)
    with pytest.raises(NotStronglyConnected):
        fit(X)


def test_iteration_cap(rng):
    X = random_connected_counts(rng, 6)
    report = fit(X, tol=1e-14, max_iter=2, method=Method.GRADIENT)
    assert not report.converged and report.iterations == 2
    with pytest.raises(MaxIterExceeded) as info:
        fit(X, tol=1e-14, max_iter=2, method=Method.GRADIENT, strict=True)
    assert info.value.report.iterations == 2


def test_gradient_matches_finite_differences(rng):
    for _ in range(10):
        X = random_connected_counts(rng, 5)
        beta = rng.normal(size=5)
        step = 1e-5
        numeric = np.array([
            (empirical_risk(beta + step * e, X) - empirical_risk(beta - step * e, X)) / (2 * step)
            for e in np.eye(5)
        ])
        np.testing.assert_allclose(risk_gradient(beta, X), numeric, rtol=1e-6, atol=1e-10)


def test_hessian_matches_finite_differences(rng):
    for _ in range(10):
        X = random_connected_counts(rng, 5)
        beta = rng.normal(size=5)
        step = 1e-5
        numeric = np.stack([
            (risk_gradient(beta + step * e, X) - risk_gradient(beta - step * e, X)) / (2 * step)
            for e in np.eye(5)
        ])
        np.testing.assert_allclose(hessian(beta, X) / X.sum(), numeric, rtol=1e-4, atol=1e-9)


def test_hessian_is_a_laplacian(rng):
    X = random_connected_counts(rng, 6)
    beta = rng.normal(size=6)
    H = hessian(beta, X)
    np.testing.assert_allclose(H, H.T)
    np.testing.assert_allclose(H.sum(axis=1), 0.0, atol=1e-10)
    np.testing.assert_allclose(H @ np.ones(6), 0.0, atol=1e-10)
    for _ in range(100):
        v = rng.normal(size=6)
        assert v @ H @ v >= -1e-10
        # only constants are in the null space
        v -= v.mean()
        assert v @ H @ v > 1e-8


def test_single_timestamp_reduces_to_static():
    dataset = Dataset.from_arrays(['A', 'B', 'C'], [5, 5, 5], [0, 0, 1], [1, 2, 2], [2, 1, 3], [1, 2, 1])
    reports = fit_trajectory(dataset, KernelSpec(KernelFamily.GAUSSIAN, 0.05), tol=1e-13)
    assert len(reports) == 1
    static = fit(dataset.raw_count_tensor[0], tol=1e-13)
    np.testing.assert_allclose(reports[0].scores, static.scores, atol=1e-10)


def test_huge_bandwidth_pools(toy_dataset):
    # smoothed counts are of order 1e-6, so the residual tolerance scales down with them
    reports = fit_trajectory(toy_dataset, KernelSpec(KernelFamily.GAUSSIAN, 1e6), tol=1e-18)
    pooled = fit(toy_dataset.total_count_matrix()).scores
    for report in reports:
        np.testing.assert_allclose(report.scores, pooled, atol=1e-6)


def test_trajectory_warm_start_and_parallel_agree(toy_dataset):
    spec = KernelSpec(KernelFamily.GAUSSIAN, 0.2)
    warm = fit_trajectory(toy_dataset, spec, warm_start=True)
    cold = fit_trajectory(toy_dataset, spec, warm_start=False)
    parallel = fit_trajectory(toy_dataset, spec, jobs=2)
    for a, b, c in zip(warm, cold, parallel):
        np.testing.assert_allclose(a.scores, b.scores, atol=1e-8)
        np.testing.assert_allclose(a.scores, c.scores, atol=1e-8)


def test_trajectory_records_disconnected_points(toy_dataset):
    # with a narrow compact kernel the last round stands alone
    reports = fit_trajectory(toy_dataset, KernelSpec(KernelFamily.EPANECHNIKOV, 0.1))
    assert [r.ok for r in reports] == [True, True, True, False]
    assert isinstance(reports[-1].error, NotStronglyConnected)
    assert np.all(np.isnan(reports[-1].scores))


def test_trajectory_grid_domain(toy_dataset):
    with pytest.raises(DomainError):
        fit_trajectory(toy_dataset, KernelSpec(), grid=[1.2])


def test_static_fits(toy_dataset):
    reports = fit_static(toy_dataset)
    assert [r.error is None for r in reports] == [True, True, True, False]
    # without a unique MLE the unregularized path drifts away from zero
    assert np.all(np.isfinite(reports[-1].scores))
    assert np.abs(reports[-1].scores).max() > 1.0
    np.testing.assert_allclose(reports[0].scores, fit(toy_dataset.raw_count_tensor[0]).scores)


def test_projection_of_fair_coins():
    P = np.full((4, 4), 0.5)
    np.fill_diagonal(P, 0.0)
    np.testing.assert_allclose(projection(P), 0.0, atol=1e-12)


def test_projection_recovers_bt_scores(rng):
    beta = rng.normal(size=5)
    beta -= beta.mean()
    P = expit(beta[:, None] - beta[None, :])
    np.fill_diagonal(P, 0.0)
    np.testing.assert_allclose(projection(P), beta, atol=1e-6)


def test_projection_against_plane_search():
    P = np.array([[0, 0.9, 0.2], [0.1, 0, 0.7], [0.8, 0.3, 0]])
    expected = plane_search(lambda b: empirical_risk(b, P))
    np.testing.assert_allclose(projection(P), expected, atol=1e-4)


@pytest.mark.parametrize('P', [
    np.array([[0, 0.6], [0.6, 0]]),
    np.array([[0, 1.0], [0.0, 0]]),
    np.ones((1, 1)),
])
def test_projection_rejects_invalid(P):
    with pytest.raises(DomainError):
        projection(P)


def test_rank():
    np.testing.assert_array_equal(rank(np.array([1.0, 0.0, -1.0])), [1, 2, 3])
    np.testing.assert_array_equal(rank(np.zeros(4)), [1, 2, 3, 4])
    beta = np.array([0.2, -1.0, 0.7, 0.1])
    np.testing.assert_array_equal(rank(beta + 3.0), rank(beta))
    np.testing.assert_array_equal(rank(beta), [2, 4, 1, 3])


def test_win_prob():
    assert win_prob(np.array([0.0, 0.0]), 0, 1) == 0.5
    assert win_prob(np.array([math.log(3) / 2, -math.log(3) / 2]), 0, 1) == pytest.approx(0.75)
