'''
Reproductions of the synthetic experiments: estimator comparisons in the
BT-true and model-agnostic settings, connectivity frequency studies, the
LOOCV curve and a runtime comparison.

Every routine takes a base seed; repetition s draws from
`np.random.default_rng([seed, s])`, so results do not depend on how
repetitions are spread over workers.
'''
from dataclasses import dataclass
from functools import partial
from typing import Any, Dict, List, Optional, Sequence, Tuple
import json
import math
import time

from loguru import logger
import numpy as np

from .data import Dataset
from .errors import AllFoldsFailed, DomainError
from .graph import FrequencyMode, condition1_frequency, condition1_holds
from .kernel import KernelFamily, KernelSpec
from .metrics import EstimatorRow, score_estimators, trajectory_error, win_rate_loo_prob
from .parallel import run_parallel
from .simulate import (
    GPSpec, MeanMode, center_paths, generate_agnostic_matches, generate_agnostic_probs,
    generate_bt_matches, gp_sample_beta, win_rate_scores,
)
from .solver import DEFAULT_MAX_ITER, DEFAULT_TOL, Method, fit_static, fit_trajectory, projection
from .tuning import loocv, select_bandwidth

ESTIMATORS = ('win_rate', 'static_bt', 'dynamic_bt')
DEFAULT_CV_SUBSAMPLE = 2000

TABLE4_SIZES = [(5, 5), (10, 10), (20, 10), (30, 10), (40, 10), (50, 10)]
TABLE5_SIZES = [(10, 10), (20, 10), (30, 10), (40, 10), (50, 10), (60, 10)]
TABLE6_GAMES = [1, 2, 4, 6, 8, 10]


@dataclass
class ComparisonConfig:
    '''One estimator-comparison experiment; the defaults are the reference setting (50 teams, 50 rounds, one game per pair).'''
    mode: str = 'bt'
    n_teams: int = 50
    n_times: int = 50
    n_games: int = 1
    alpha: float = 1.0
    r: float = 1.0
    p_l: float = 0.05
    p_u: float = 0.95
    groups: int = 5
    bandwidth: Optional[float] = None
    h_grid: Optional[Sequence[float]] = None
    family: KernelFamily = KernelFamily.GAUSSIAN
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    method: Method = Method.MM
    cv_subsample: Optional[int] = DEFAULT_CV_SUBSAMPLE

    def gp(self) -> GPSpec:
        mean = MeanMode.UNIFORM if self.mode == 'bt' else MeanMode.GROUP
        return GPSpec(self.n_times, self.alpha, self.r, mean=mean, groups=self.groups)


def rng_for(seed: int, repetition: int) -> np.random.Generator:
    return np.random.default_rng([seed, repetition])


def simulate_tournament(cfg: ComparisonConfig, rng: np.random.Generator) -> Tuple[Dataset, np.ndarray]:
    '''A simulated dataset and its centered truth, shape (M, N): beta for "bt", the projection for "agnostic".'''
    if cfg.mode == 'bt':
        beta = gp_sample_beta(cfg.n_teams, cfg.gp(), rng)
        dataset = generate_bt_matches(beta, cfg.n_games, rng)
        return dataset, center_paths(beta).T
    if cfg.mode == 'agnostic':
        prob = generate_agnostic_probs(cfg.n_teams, cfg.n_times, cfg.gp(), cfg.p_l, cfg.p_u, rng)
        dataset = generate_agnostic_matches(prob, cfg.n_games, rng)
        truth = np.stack([projection(prob.at(k), cfg.tol, cfg.max_iter) for k in range(cfg.n_times)])
        return dataset, truth
    raise DomainError(f"unknown simulation mode '{cfg.mode}'")


def _observed(truth: np.ndarray, dataset: Dataset) -> np.ndarray:
    # simulated raw times are the round numbers 1..M
    return truth[np.asarray(dataset.distinct_raw_times, dtype=int) - 1]


def _scores(reports) -> np.ndarray:
    return np.stack([r.scores for r in reports])


def compare_estimators(cfg: ComparisonConfig, seed: int, repetition: int) -> Dict[str, Any]:
    rng = rng_for(seed, repetition)
    dataset, truth = simulate_tournament(cfg, rng)
    truth = _observed(truth, dataset)
    cv = dict(tol=cfg.tol, max_iter=cfg.max_iter, method=cfg.method, subsample=cfg.cv_subsample, seed=repetition)

    h = cfg.bandwidth
    if h is None:
        h, _ = select_bandwidth(dataset, cfg.h_grid, family=cfg.family, **cv)
    spec = KernelSpec(cfg.family, h)

    dynamic = _scores(fit_trajectory(dataset, spec, None, cfg.tol, cfg.max_iter, method=cfg.method))
    static = _scores(fit_static(dataset, cfg.tol, cfg.max_iter, method=cfg.method))
    estimates = {'win_rate': win_rate_scores(dataset), 'static_bt': static, 'dynamic_bt': dynamic}

    dyn_cv = loocv(dataset, spec, **cv)
    try:
        static_cv = loocv(dataset, None, **cv)
        static_loo = (static_cv.loo_prob, static_cv.nll)
    except AllFoldsFailed:
        static_loo = (None, None)
    loo = {
        'win_rate': (win_rate_loo_prob(dataset), None),
        'static_bt': static_loo,
        'dynamic_bt': (dyn_cv.loo_prob, dyn_cv.nll),
    }
    rows = score_estimators(dataset, truth, estimates, loo)
    _, uniform = trajectory_error(dynamic, truth) if np.all(np.isfinite(dynamic)) else ([], math.nan)
    logger.info(f'repetition {repetition}: h={h:.4g}, ' + ', '.join(f'{r.estimator}={r.rank_diff:.3f}' for r in rows))
    return {
        'repetition': repetition,
        'bandwidth': float(h),
        'rows': [r.model_dump() for r in rows],
        'uniform_error': uniform,
    }


def _mean(values: List[Optional[float]]) -> Optional[float]:
    kept = [v for v in values if v is not None and math.isfinite(v)]
    return float(np.mean(kept)) if kept else None


def comparison_table(cfg: ComparisonConfig, seeds: int, seed: int, jobs: int = 1) -> Dict[str, Any]:
    '''Mean Rank Diff / LOO Prob / LOO nll per estimator over `seeds` repetitions.'''
    if seeds < 1:
        raise DomainError('need at least one repetition')
    logger.info(f'Comparing estimators ({cfg.mode}, N={cfg.n_teams}, M={cfg.n_times}) over {seeds} repetitions')
    runs = run_parallel(partial(compare_estimators, cfg, seed), range(seeds), jobs)
    by_name = {name: [EstimatorRow(**row) for run in runs for row in run['rows'] if row['estimator'] == name]
               for name in ESTIMATORS}
    summary = {
        name: {
            'rank_diff': _mean([r.rank_diff for r in rows]),
            'loo_prob': _mean([r.loo_prob for r in rows]),
            'loo_nll': _mean([r.loo_nll for r in rows]),
        }
        for name, rows in by_name.items()
    }
    wins = sum(d.rank_diff < s.rank_diff for d, s in zip(by_name['dynamic_bt'], by_name['static_bt']))
    return {
        'setting': {
            'mode': cfg.mode, 'n_teams': cfg.n_teams, 'n_times': cfg.n_times, 'n_games': cfg.n_games,
            'seeds': seeds, 'seed': seed, 'bandwidth': cfg.bandwidth, 'cv_subsample': cfg.cv_subsample,
        },
        'summary': summary,
        'dynamic_beats_static': int(wins),
        'runs': runs,
    }


def table1(seeds: int = 20, seed: int = 0, jobs: int = 1, **kwargs) -> Dict[str, Any]:
    return comparison_table(ComparisonConfig(mode='bt', **kwargs), seeds, seed, jobs)


def table2(seeds: int = 20, seed: int = 0, jobs: int = 1, **kwargs) -> Dict[str, Any]:
    return comparison_table(ComparisonConfig(mode='agnostic', **kwargs), seeds, seed, jobs)


def _frequency_once(setting: Tuple[int, int, int], seed: int, repetition: int) -> Tuple[float, float, bool]:
    N, M, n_games = setting
    rng = rng_for(seed, repetition)
    beta = gp_sample_beta(N, GPSpec(M), rng)
    dataset = generate_bt_matches(beta, n_games, rng)
    return (
        condition1_frequency(dataset, FrequencyMode.PER_TIME),
        condition1_frequency(dataset, FrequencyMode.ALL_TIMES),
        # a full-support kernel sees the aggregated counts at every t
        condition1_holds(dataset.total_count_matrix()),
    )


def frequency_study(N: int, M: int, n_games: int = 1, repetitions: int = 50, seed: int = 0,
                    jobs: int = 1) -> Dict[str, Any]:
    '''How often raw per-time data satisfies the existence condition, averaged over repetitions.'''
    results = run_parallel(partial(_frequency_once, (N, M, n_games), seed), range(repetitions), jobs)
    per_time, all_times, smoothed = zip(*results)
    return {
        'N': N, 'M': M, 'n_games': n_games, 'repetitions': repetitions,
        'per_time': float(np.mean(per_time)),
        'all_times': float(np.mean(all_times)),
        'smoothed_all_times': float(np.mean(smoothed)),
    }


def table4(repetitions: int = 50, seed: int = 0, jobs: int = 1,
           sizes: Sequence[Tuple[int, int]] = TABLE4_SIZES) -> Dict[str, Any]:
    return {'rows': [frequency_study(N, M, 1, repetitions, seed, jobs) for N, M in sizes], 'statistic': 'per_time'}


def table5(repetitions: int = 50, seed: int = 0, jobs: int = 1,
           sizes: Sequence[Tuple[int, int]] = TABLE5_SIZES) -> Dict[str, Any]:
    return {'rows': [frequency_study(N, M, 1, repetitions, seed, jobs) for N, M in sizes], 'statistic': 'all_times'}


def table6(repetitions: int = 50, seed: int = 0, jobs: int = 1,
           games: Sequence[int] = TABLE6_GAMES) -> Dict[str, Any]:
    return {'rows': [frequency_study(10, 10, n, repetitions, seed, jobs) for n in games], 'statistic': 'all_times'}


def cv_curve(seed: int = 0, cfg: Optional[ComparisonConfig] = None, jobs: int = 1) -> Dict[str, Any]:
    '''LOOCV curve over the bandwidth grid for one simulated tournament.'''
    cfg = cfg or ComparisonConfig()
    dataset, _ = simulate_tournament(cfg, rng_for(seed, 0))
    h_star, curve = select_bandwidth(
        dataset, cfg.h_grid, cfg.tol, cfg.max_iter, family=cfg.family, method=cfg.method,
        subsample=cfg.cv_subsample, seed=seed, jobs=jobs,
    )
    return {
        'h_star': h_star,
        'curve': [{'h': p.h, 'nll': p.nll, 'folds_skipped': p.folds_skipped} for p in curve],
    }


def runtime_study(sizes: Sequence[Tuple[int, int]], repetitions: int = 5, seed: int = 0,
                  bandwidth: float = 0.03) -> Dict[str, Any]:
    '''Wall-clock seconds of one fixed-h dynamic fit (smoothing included) against the per-time static fits.'''
    rows = []
    for N, M in sizes:
        dynamic, static = [], []
        for s in range(repetitions):
            rng = rng_for(seed, s)
            dataset = generate_bt_matches(gp_sample_beta(N, GPSpec(M), rng), 1, rng)
            start = time.perf_counter()
            fit_trajectory(dataset, KernelSpec(KernelFamily.GAUSSIAN, bandwidth))
            dynamic.append(time.perf_counter() - start)
            start = time.perf_counter()
            fit_static(dataset)
            static.append(time.perf_counter() - start)
        rows.append({'N': N, 'M': M, 'dynamic_seconds': float(np.mean(dynamic)), 'static_seconds': float(np.mean(static))})
        logger.info(f'N={N}, M={M}: dynamic {rows[-1]["dynamic_seconds"]:.3f}s, static {rows[-1]["static_seconds"]:.3f}s')
    return {'rows': rows, 'repetitions': repetitions}


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def to_json(result: Dict[str, Any]) -> str:
    '''Canonical rendering: sorted keys, non-finite floats as null.'''
    return json.dumps(_plain(result), sort_keys=True, indent=2) + '\n'
