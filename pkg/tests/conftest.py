import numpy as np
import pytest

from dynbt.data import Dataset


def round_robin(n_teams, n_times, games=1, wins_a=None):
    '''Every pair plays `games` >= 1 games at every time; team_a wins `wins_a` of them (default: the larger half).'''
    teams = [f't{i}' for i in range(n_teams)]
    times, a, b, wa, wb = [], [], [], [], []
    for k in range(n_times):
        for i in range(n_teams):
            for j in range(i + 1, n_teams):
                w = games // 2 + games % 2 if wins_a is None else wins_a
                times.append(float(k))
                a.append(i)
                b.append(j)
                wa.append(w)
                wb.append(games - w)
    return Dataset.from_arrays(teams, times, a, b, wa, wb)


def random_connected_counts(rng, n, low=1, high=5):
    '''Dense integer counts with every off-diagonal entry positive.'''
    X = rng.integers(low, high, size=(n, n)).astype(float)
    np.fill_diagonal(X, 0.0)
    return X


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def toy_dataset():
    # 3 teams over 4 rounds, every pair meets each round
    return Dataset.from_arrays(
        ['A', 'B', 'C'],
        [1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4],
        [0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 1],
        [1, 2, 2, 1, 2, 2, 1, 2, 2, 1, 2, 2],
        [2, 1, 1, 1, 2, 0, 2, 1, 1, 0, 1, 2],
        [1, 1, 1, 1, 0, 2, 1, 1, 1, 2, 1, 0],
    )


@pytest.fixture
def write_matches(tmp_path):
    def write(text, name='matches.csv'):
        path = tmp_path / name
        path.write_text(text, encoding='utf-8')
        return path
    return write
