'''
Leave-one-out cross-validation of the kernel bandwidth.

The unit held out is a single game. Because smoothing is linear in the
counts, the training matrix of a fold at its own time t_m is the full
smoothed matrix minus W_h(t_m, t_m) on the held-out (winner, loser) entry;
only beta(t_m) is needed, so each fold is one warm-started fit.
'''
from dataclasses import dataclass, field
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple
import math

from loguru import logger
import numpy as np
from scipy.special import expit

from .data import Dataset
from .errors import AllFoldsFailed, DomainError, EmptyData, NotStronglyConnected
from .graph import EPS_RAW, EPS_SMOOTHED
from .kernel import KernelFamily, KernelSpec, smooth_counts_grid
from .parallel import run_parallel
from .solver import DEFAULT_MAX_ITER, DEFAULT_TOL, Method, fit


@dataclass(frozen=True)
class FoldResult:
    time: float
    winner: int
    loser: int
    p_hat: float
    nll: float
    error: float
    skipped: bool = False


@dataclass
class CVResult:
    nll: float
    loo_prob: float
    n_folds: int
    folds_skipped: int
    folds: List[FoldResult] = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class CurvePoint:
    h: float
    nll: float
    folds_skipped: int


def default_h_grid() -> np.ndarray:
    return np.geomspace(0.005, 1.0, 20)


def expand_games(dataset: Dataset) -> np.ndarray:
    '''
    One row (time index, winner, loser) per game, in record order,
    a-side wins before b-side wins.
    '''
    k_of = np.searchsorted(dataset.distinct_times, dataset.arrays['time'])
    rows = []
    for k, r in zip(k_of, dataset.records):
        rows.extend([(k, r.team_a, r.team_b)] * r.wins_a)
        rows.extend([(k, r.team_b, r.team_a)] * r.wins_b)
    return np.asarray(rows, dtype=int).reshape(-1, 3)


def prediction_error(p_hat: float) -> float:
    '''Error of predicting the held-out winner: 1 if p < 1/2, 1/2 on a tie.'''
    if p_hat < 0.5:
        return 1.0
    return 0.5 if p_hat == 0.5 else 0.0


def _time_group(payload, w0: float, eps: float, tol: float, max_iter: int, method: Method) -> List[FoldResult]:
    t, X_full, games = payload
    try:
        base = fit(X_full, tol, max_iter, method=method, eps=eps).scores
    except (NotStronglyConnected, EmptyData):
        base = None
    cache: Dict[Tuple[int, int], FoldResult] = {}
    out = []
    for i, j in games:
        key = (int(i), int(j))
        if key not in cache:
            X = X_full.copy()
            X[i, j] = max(X[i, j] - w0, 0.0)
            if X[i, j] <= eps:
                X[i, j] = 0.0
            try:
                beta = fit(X, tol, max_iter, method=method, init=base, eps=eps).scores
            except (NotStronglyConnected, EmptyData):
                cache[key] = FoldResult(t, key[0], key[1], math.nan, math.nan, math.nan, skipped=True)
            else:
                p_hat = float(expit(beta[i] - beta[j]))
                nll = float(np.logaddexp(0.0, beta[j] - beta[i]))
                cache[key] = FoldResult(t, key[0], key[1], p_hat, nll, prediction_error(p_hat))
        out.append(cache[key])
    return out


def loocv(
    dataset: Dataset,
    spec: Optional[KernelSpec],
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    method: Method = Method.MM,
    subsample: Optional[int] = None,
    seed: int = 0,
    jobs: int = 1,
) -> CVResult:
    '''
    Leave-one-game-out evaluation of the dynamic fit (or, with spec=None,
    of the static fit on raw per-time counts).

    Folds whose training data is not strongly connected at the held-out time
    are skipped and counted. With `subsample` only that many games, drawn
    without replacement with `seed`, are held out.
    '''
    games = expand_games(dataset)
    if len(games) < 2:
        raise DomainError('leave-one-out needs at least 2 games')
    if subsample is not None and subsample < len(games):
        pick = np.random.default_rng(seed).choice(len(games), size=subsample, replace=False)
        games = games[np.sort(pick)]

    if spec is None:
        tensor, w0, eps = np.asarray(dataset.raw_count_tensor, dtype=float), 1.0, EPS_RAW
    else:
        tensor = smooth_counts_grid(dataset, spec, dataset.distinct_times)
        w0, eps = float(spec.weight(0.0, 0.0)), EPS_SMOOTHED

    payloads = []
    for k in np.unique(games[:, 0]):
        mask = games[:, 0] == k
        payloads.append((float(dataset.distinct_times[k]), tensor[k], games[mask][:, 1:]))
    worker = partial(_time_group, w0=w0, eps=eps, tol=tol, max_iter=max_iter, method=Method(method))
    # groups are visited in time order and games are time-sorted, so fold order is preserved
    folds = [f for group in run_parallel(worker, payloads, jobs) for f in group]

    used = [f for f in folds if not f.skipped]
    skipped = len(folds) - len(used)
    label = 'static' if spec is None else f'h={spec.bandwidth:.4g}'
    if not used:
        raise AllFoldsFailed(f'every one of {len(folds)} folds is disconnected ({label})', {'folds': len(folds)})
    if skipped:
        logger.warning(f'{skipped}/{len(folds)} folds skipped as disconnected ({label})')
    nll = float(np.mean(np.array([f.nll for f in used])))
    loo_prob = float(np.mean(np.array([f.error for f in used])))
    logger.debug(f'LOOCV {label}: nll={nll:.6f}, prob={loo_prob:.4f} over {len(used)} folds')
    return CVResult(nll=nll, loo_prob=loo_prob, n_folds=len(folds), folds_skipped=skipped, folds=folds)


def loocv_folds(dataset: Dataset, spec: Optional[KernelSpec], **kwargs) -> List[FoldResult]:
    return loocv(dataset, spec, **kwargs).folds


def loocv_nll(
    dataset: Dataset,
    spec: KernelSpec,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    **kwargs,
) -> float:
    return loocv(dataset, spec, tol, max_iter, **kwargs).nll


def select_bandwidth(
    dataset: Dataset,
    h_grid: Optional[Sequence[float]] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    family: KernelFamily = KernelFamily.GAUSSIAN,
    **kwargs,
) -> Tuple[float, List[CurvePoint]]:
    '''
    Bandwidth with the smallest LOOCV negative log-likelihood, plus the curve.

    Ties go to the larger h. Bandwidths whose folds all fail stay in the curve
    with nll = nan and are never selected.
    '''
    grid = default_h_grid() if h_grid is None else np.asarray(h_grid, dtype=float)
    if len(grid) == 0 or np.any(grid <= 0):
        raise DomainError('bandwidth grid must be nonempty and positive')
    curve: List[CurvePoint] = []
    best: Optional[CurvePoint] = None
    for h in np.sort(grid):
        logger.info(f'LOOCV at h={h:.4g}')
        try:
            result = loocv(dataset, KernelSpec(family, float(h)), tol, max_iter, **kwargs)
        except AllFoldsFailed as e:
            logger.warning(f'Excluding h={h:.4g}: {e.message}')
            point = CurvePoint(float(h), math.nan, int(e.details.get('folds', 0)))
        else:
            point = CurvePoint(float(h), result.nll, result.folds_skipped)
            if best is None or point.nll <= best.nll:
                best = point
        curve.append(point)
    if best is None:
        raise AllFoldsFailed('every bandwidth in the grid has only disconnected folds')
    logger.info(f'Selected h*={best.h:.4g} (nll={best.nll:.6f})')
    return best.h, curve
