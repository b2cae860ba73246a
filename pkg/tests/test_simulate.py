import numpy as np
import pytest

from dynbt.errors import DegenerateField, DomainError, FactorizationError
from dynbt.simulate import (
    GPSpec, MeanMode, bt_probability_field, center_paths, default_teams, generate_agnostic_matches,
    generate_agnostic_probs, generate_bt_matches, gp_sample_beta, group_means, read_truth, symmetric_factor,
    toeplitz_cov, win_rate_scores, write_truth,
)


def test_toeplitz_entries():
    C = toeplitz_cov(50, 1.0, 1.0)
    assert C.shape == (50, 50)
    assert np.allclose(np.diag(C), 1.0)
    assert C[0, 49] == pytest.approx(0.02)
    assert C[0, 1] == pytest.approx(0.98)
    assert np.allclose(C, C.T)


def test_factor_reproduces_covariance():
    C = toeplitz_cov(30, 1.0, 1.0)
    F = symmetric_factor(C)
    assert np.allclose(F @ F.T, C, atol=1e-8)


def test_factor_rejects_indefinite():
    with pytest.raises(FactorizationError):
        symmetric_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_zero_covariance_returns_means(rng):
    gp = GPSpec(M=4, covariance=np.zeros((4, 4)))
    mu = np.array([0.1, 0.5, 0.9])
    beta = gp_sample_beta(3, gp, rng, means=mu)
    assert np.allclose(beta, np.repeat(mu[:, None], 4, axis=1))


def test_sample_moments(rng):
    gp = GPSpec(M=5, alpha=1.0, r=1.0)
    beta = gp_sample_beta(20000, gp, rng, means=np.zeros(20000))
    assert np.allclose(beta.mean(axis=0), 0.0, atol=0.05)
    assert np.allclose(np.cov(beta.T), toeplitz_cov(5, 1.0, 1.0), atol=0.05)


def test_uniform_means_in_unit_interval(rng):
    beta = gp_sample_beta(200, GPSpec(M=3, covariance=np.zeros((3, 3))), rng)
    assert np.all((beta >= 0) & (beta <= 1))


def test_group_means_ranges(rng):
    mu = group_means(50, 5, 1.5, 0.5, rng)
    group = np.floor(mu / 1.5).astype(int)
    assert np.all(mu - 1.5 * group <= 0.5)
    assert np.bincount(group).tolist() == [10] * 5


def test_gp_spec_domain():
    with pytest.raises(DomainError):
        GPSpec(M=0)
    with pytest.raises(DomainError):
        GPSpec(M=3, alpha=0.0)
    assert GPSpec(M=3, mean='group').mean is MeanMode.GROUP


def test_equal_scores_give_even_odds():
    field = bt_probability_field(np.zeros((3, 2)))
    off = ~np.eye(3, dtype=bool)
    assert np.allclose(field.p[off], 0.5)
    assert field.p_min == 0.5


def test_lopsided_scores(rng):
    beta = np.array([[10.0, 10.0], [0.0, 0.0]])
    assert bt_probability_field(beta).p[0, 1, 0] >= 0.999
    data = generate_bt_matches(beta, 100, rng)
    assert sum(r.wins_a for r in data.records) >= 195


def test_bt_matches_layout(rng):
    beta = gp_sample_beta(4, GPSpec(M=3), rng)
    data = generate_bt_matches(beta, 2, rng)
    assert data.teams == tuple(default_teams(4))
    assert data.n_records == 6 * 3
    assert all(r.games == 2 and r.team_a < r.team_b for r in data.records)
    assert np.allclose(data.distinct_times, [0.0, 0.5, 1.0])
    assert sorted(set(data.raw_times)) == [1.0, 2.0, 3.0]


def test_zero_games_pairs_are_dropped(rng):
    n = np.ones((3, 3), dtype=int)
    n[0, 1] = n[1, 0] = 0
    data = generate_bt_matches(np.zeros((3, 2)), n, rng)
    assert all((r.team_a, r.team_b) != (0, 1) for r in data.records)
    with pytest.raises(DomainError):
        generate_bt_matches(np.zeros((3, 2)), 0, rng)


def test_bt_matches_deterministic():
    beta = np.linspace(0, 1, 8).reshape(4, 2)
    first = generate_bt_matches(beta, 5, np.random.default_rng(7))
    second = generate_bt_matches(beta, 5, np.random.default_rng(7))
    assert first == second


def test_default_team_names_sort():
    names = default_teams(12)
    assert names[0] == 'T01' and names[-1] == 'T12'
    assert sorted(names) == names


def test_agnostic_field(rng):
    field = generate_agnostic_probs(5, 6, GPSpec(M=6), 0.05, 0.95, rng)
    I, J = np.triu_indices(5, k=1)
    upper = field.p[I, J, :]
    assert upper.min() == pytest.approx(0.05)
    assert upper.max() == pytest.approx(0.95)
    assert np.allclose(field.p[I, J, :] + field.p[J, I, :], 1.0)
    assert field.n_teams == 5 and field.n_times == 6
    assert np.array_equal(field.at(2), field.p[:, :, 2])


def test_agnostic_deterministic():
    gp = GPSpec(M=4)
    first = generate_agnostic_probs(4, 4, gp, 0.1, 0.9, np.random.default_rng(3))
    second = generate_agnostic_probs(4, 4, gp, 0.1, 0.9, np.random.default_rng(3))
    assert np.array_equal(first.p, second.p)
    data = generate_agnostic_matches(first, 3, np.random.default_rng(3))
    assert data.n_games == 6 * 4 * 3


def test_agnostic_degenerate(rng):
    gp = GPSpec(M=3, covariance=np.zeros((3, 3)))
    # two teams, zero variance: a single constant draw
    field = generate_agnostic_probs(2, 3, gp, 0.2, 0.6, rng)
    assert np.allclose(field.p[0, 1], 0.4)
    with pytest.raises(DegenerateField):
        generate_agnostic_probs(2, 3, gp, 0.2, 0.6, rng, strict=True)


@pytest.mark.parametrize('p_l, p_u', [(0.0, 0.9), (0.6, 0.4), (0.1, 1.0)])
def test_agnostic_bounds(rng, p_l, p_u):
    with pytest.raises(DomainError):
        generate_agnostic_probs(3, 3, GPSpec(M=3), p_l, p_u, rng)


def test_center_paths():
    beta = np.array([[1.0, 4.0], [3.0, 0.0]])
    centered = center_paths(beta)
    assert np.allclose(centered.sum(axis=0), 0.0)
    assert np.allclose(centered, [[-1.0, 2.0], [1.0, -2.0]])


def test_win_rate_scores(toy_dataset):
    rates = win_rate_scores(toy_dataset)
    assert rates.shape == (4, 3)
    # round 1: A 3/5, B 2/5, C 2/4
    assert np.allclose(rates[0], [3 / 5, 2 / 5, 2 / 4])


def test_truth_file(tmp_path):
    path = tmp_path / 'truth.json'
    beta = np.arange(6.0).reshape(3, 2)
    write_truth(path, 'bt', ['a', 'b', 'c'], [1.0, 2.0], beta=beta)
    doc = read_truth(path)
    assert doc['mode'] == 'bt'
    assert doc['teams'] == ['a', 'b', 'c']
    assert np.array_equal(doc['beta'], beta)
    assert 'p' not in doc
