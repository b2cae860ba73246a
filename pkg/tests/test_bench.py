import json
import math

import numpy as np
import pytest

from dynbt.bench import (
    ComparisonConfig, compare_estimators, comparison_table, cv_curve, frequency_study, rng_for, runtime_study,
    simulate_tournament, table1, table2, to_json,
)
from dynbt.errors import DomainError

SMALL = dict(n_teams=6, n_times=5, n_games=4, bandwidth=0.3, cv_subsample=30)


def test_repetition_streams_differ():
    assert rng_for(7, 0).random() != rng_for(7, 1).random()
    assert rng_for(7, 1).random() == rng_for(7, 1).random()


@pytest.mark.parametrize('N, M, expected', [(10, 10, 0.622), (30, 10, 0.950), (50, 10, 0.984)])
def test_per_time_frequency(N, M, expected):
    result = frequency_study(N, M, 1, repetitions=50, seed=2024)
    assert result['per_time'] == pytest.approx(expected, abs=0.10)


def test_many_games_connect_every_round():
    assert frequency_study(10, 10, 10, repetitions=50, seed=2024)['all_times'] >= 0.9


def test_frequency_orderings():
    result = frequency_study(6, 8, 1, repetitions=20, seed=5)
    assert result['all_times'] <= result['per_time']
    assert result['all_times'] <= result['smoothed_all_times']


def test_frequency_independent_of_jobs():
    assert frequency_study(8, 6, 1, repetitions=6, seed=9) == frequency_study(8, 6, 1, repetitions=6, seed=9, jobs=2)


def test_agnostic_truth_is_centered():
    cfg = ComparisonConfig(mode='agnostic', **SMALL)
    dataset, truth = simulate_tournament(cfg, rng_for(1, 0))
    assert truth.shape == (5, 6)
    np.testing.assert_allclose(truth.sum(axis=1), 0.0, atol=1e-9)
    assert dataset.n_games == 15 * 5 * 4


def test_unknown_mode():
    with pytest.raises(DomainError):
        simulate_tournament(ComparisonConfig(mode='elo', **SMALL), rng_for(1, 0))


@pytest.mark.parametrize('mode', ['bt', 'agnostic'])
def test_compare_estimators_small(mode):
    run = compare_estimators(ComparisonConfig(mode=mode, **SMALL), seed=3, repetition=0)
    assert run['bandwidth'] == 0.3
    rows = {r['estimator']: r for r in run['rows']}
    assert list(rows) == ['win_rate', 'static_bt', 'dynamic_bt']
    assert all(0 <= r['rank_diff'] <= 5 for r in rows.values())
    assert 0 <= rows['dynamic_bt']['loo_prob'] <= 1
    assert rows['dynamic_bt']['loo_nll'] > 0
    assert rows['win_rate']['loo_nll'] is None


def test_comparison_table_deterministic():
    cfg = ComparisonConfig(**SMALL)
    first = to_json(comparison_table(cfg, seeds=2, seed=7))
    assert first == to_json(comparison_table(cfg, seeds=2, seed=7))
    doc = json.loads(first)
    assert doc['setting']['seeds'] == 2
    assert len(doc['runs']) == 2
    assert 0 <= doc['dynamic_beats_static'] <= 2
    assert set(doc['summary']) == {'win_rate', 'static_bt', 'dynamic_bt'}


def test_comparison_table_independent_of_jobs():
    cfg = ComparisonConfig(**SMALL)
    sequential = comparison_table(cfg, seeds=2, seed=7)
    parallel = comparison_table(cfg, seeds=2, seed=7, jobs=2)
    for name, stats in sequential['summary'].items():
        for key, value in stats.items():
            if value is None:
                assert parallel['summary'][name][key] is None
            else:
                assert parallel['summary'][name][key] == pytest.approx(value, abs=1e-8)


def test_cv_curve_small():
    cfg = ComparisonConfig(h_grid=[0.1, 0.3, 1.0], **{k: v for k, v in SMALL.items() if k != 'bandwidth'})
    result = cv_curve(seed=4, cfg=cfg)
    assert [p['h'] for p in result['curve']] == [0.1, 0.3, 1.0]
    assert result['h_star'] in (0.1, 0.3, 1.0)


def test_runtime_study_shape():
    result = runtime_study([(4, 3)], repetitions=1, seed=0, bandwidth=0.3)
    row = result['rows'][0]
    assert (row['N'], row['M']) == (4, 3)
    assert row['dynamic_seconds'] > 0 and row['static_seconds'] > 0


def test_to_json_nulls_and_order():
    text = to_json({'b': math.nan, 'a': [np.float64(1.5), np.int64(2)]})
    assert text == '{\n  "a": [\n    1.5,\n    2\n  ],\n  "b": null\n}\n'


@pytest.mark.slow
def test_bt_comparison_matches_reference():
    result = table1(seeds=20, seed=7, jobs=4)
    summary = result['summary']
    assert summary['dynamic_bt']['rank_diff'] == pytest.approx(2.29, abs=0.8)
    assert summary['dynamic_bt']['loo_nll'] == pytest.approx(0.55, abs=0.05)
    assert result['dynamic_beats_static'] >= 16


@pytest.mark.slow
def test_agnostic_comparison_matches_reference():
    result = table2(seeds=20, seed=7, jobs=4)
    summary = result['summary']
    assert summary['dynamic_bt']['rank_diff'] == pytest.approx(5.48, abs=1.5)
    assert summary['dynamic_bt']['loo_nll'] == pytest.approx(0.68, abs=0.05)
    assert result['dynamic_beats_static'] >= 16


@pytest.mark.slow
def test_cv_curve_interior_minimum():
    result = cv_curve(seed=7)
    hs = [p['h'] for p in result['curve']]
    assert 0.01 <= result['h_star'] <= 0.10
    assert hs[0] < result['h_star'] < hs[-1]


@pytest.mark.slow
def test_bt_comparison_reproducible():
    assert to_json(table1(seeds=3, seed=7)) == to_json(table1(seeds=3, seed=7))
