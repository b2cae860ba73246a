'''
Scores for estimated trajectories and the diagnostics of the consistency theory.
'''
from enum import Enum
from typing import Dict, List, Optional, Tuple
import math

from loguru import logger
import numpy as np
from pydantic import BaseModel, Field

from .data import Dataset
from .errors import DomainError, IsolatedTeam, ShapeMismatch
from .graph import connectivity_probability_bound
from .kernel import KernelSpec, bandwidth_pointwise, bandwidth_uniform, smooth_counts
from .simulate import center_paths
from .solver import DEFAULT_MAX_ITER, DEFAULT_TOL, rank
from .theory import TheoryParams
from .tuning import expand_games, loocv


class BoundMode(str, Enum):
    POINTWISE_M = 'pointwise_M'
    POINTWISE_K = 'pointwise_K'
    UNIFORM_M = 'uniform_M'
    UNIFORM_K = 'uniform_K'


class RateMode(str, Enum):
    POINTWISE = 'pointwise'
    UNIFORM = 'uniform'


# the oracle bounds only hold while their right-hand side is below this
BOUND_GATE = 1 / 3


class EstimatorRow(BaseModel):
    estimator: str = Field(description='win_rate, static_bt or dynamic_bt')
    rank_diff: float = Field(description='Mean |estimated rank - true rank| over teams and times')
    loo_prob: Optional[float] = Field(default=None, description='Leave-one-out prediction error of win/loss')
    loo_nll: Optional[float] = Field(default=None, description='Leave-one-out negative log-likelihood')


class TimeDiagnostics(BaseModel):
    time: float = Field(description='Raw time')
    delta_h: Optional[float] = Field(default=None, description='Design irregularity; null when a team has no smoothed games')
    condition_M: Optional[float] = Field(default=None, description='exp of the range of the target scores')
    bound_M: Optional[float] = None
    bound_M_active: Optional[bool] = None
    bound_K: Optional[float] = None
    bound_K_active: Optional[bool] = None


class TheoryDiagnostics(BaseModel):
    c_s: float
    eta: float
    p_min: float
    games_per_pair: float = Field(description='Average games per pair and round, used as T')
    condition_K: Optional[float] = None
    h_pointwise: float = Field(description='Bandwidth schedule for the pointwise bound')
    h_uniform: float = Field(description='Bandwidth schedule for the uniform bound')
    uniform_M: Optional[float] = None
    uniform_M_active: Optional[bool] = None
    uniform_K: Optional[float] = None
    uniform_K_active: Optional[bool] = None
    times: List[TimeDiagnostics] = Field(default_factory=list)


class EvalReport(BaseModel):
    mode: str = Field(description='bt when scored against true scores, agnostic when against the projection')
    n_teams: int
    n_times: int
    bandwidth: Optional[float] = Field(default=None, description='Bandwidth of the dynamic fit, if known')
    rows: List[EstimatorRow] = Field(default_factory=list)
    uniform_error: Optional[float] = Field(default=None, description='max_t ||beta_hat(t) - beta(t)||_inf after centering')
    theory: Optional[TheoryDiagnostics] = Field(default=None, description='Oracle-bound diagnostics at the fitted bandwidth')


def rank_paths(scores: np.ndarray) -> np.ndarray:
    '''
    Row-wise ranks of a (K, N) score array, rank 1 for the largest score.

    Non-finite scores (e.g. a team without games) rank after every finite one.
    '''
    scores = np.asarray(scores, dtype=float)
    filled = np.where(np.isfinite(scores), scores, -np.inf)
    out = np.empty(scores.shape, dtype=int)
    for k, row in enumerate(filled):
        if np.isinf(row).any():
            finite_min = row[np.isfinite(row)].min() if np.isfinite(row).any() else 0.0
            row = np.where(np.isfinite(row), row, finite_min - 1.0)
        out[k] = rank(row)
    return out


def rank_diff(est_ranks: np.ndarray, true_ranks: np.ndarray) -> float:
    est, true = np.asarray(est_ranks), np.asarray(true_ranks)
    if est.shape != true.shape:
        raise ShapeMismatch(f'rankings have shapes {est.shape} and {true.shape}')
    return float(np.mean(np.abs(est.astype(float) - true.astype(float))))


def loo_prediction_metrics(
    dataset: Dataset,
    spec: Optional[KernelSpec],
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    **kwargs,
) -> Tuple[float, float]:
    '''(loo_prob, loo_nll) of the dynamic fit, or of the static fit when spec is None.'''
    result = loocv(dataset, spec, tol, max_iter, **kwargs)
    return result.loo_prob, result.nll


def win_rate_loo_prob(dataset: Dataset) -> float:
    '''
    Leave-one-out error of the per-time win-rate predictor: the held-out game
    is predicted for the team with the higher win rate at that time, computed
    without the game. Equal or undefined rates count 1/2.
    '''
    C = np.asarray(dataset.raw_count_tensor, dtype=float)
    wins = C.sum(axis=2)
    games = wins + C.sum(axis=1)
    errors = []
    for k, w, l in expand_games(dataset):
        g_w, g_l = games[k, w] - 1, games[k, l] - 1
        rate_w = (wins[k, w] - 1) / g_w if g_w > 0 else math.nan
        rate_l = wins[k, l] / g_l if g_l > 0 else math.nan
        if math.isnan(rate_w) or math.isnan(rate_l):
            errors.append(0.5)
        else:
            errors.append(1.0 if rate_w < rate_l else 0.5 if rate_w == rate_l else 0.0)
    if not errors:
        raise DomainError('leave-one-out needs at least one game')
    return float(np.mean(errors))


def delta_h(dataset: Dataset, spec: KernelSpec, t: float) -> float:
    '''Design irregularity max_i sum_{j != i} |T~_ij / T~_i - 1 / (N - 1)|.'''
    X = smooth_counts(dataset, spec, t)
    T = X + X.T
    np.fill_diagonal(T, 0.0)
    totals = T.sum(axis=1)
    if np.any(totals <= 0):
        isolated = [dataset.teams[i] for i in np.flatnonzero(totals <= 0)]
        raise IsolatedTeam(f'no smoothed games at t={t:.6g} for {isolated}', {'teams': isolated})
    N = dataset.n_teams
    dev = np.abs(T / totals[:, None] - 1.0 / (N - 1))
    np.fill_diagonal(dev, 0.0)
    return float(dev.sum(axis=1).max())


def condition_number_M(beta_star: np.ndarray) -> float:
    beta_star = np.asarray(beta_star, dtype=float)
    if not np.all(np.isfinite(beta_star)):
        raise DomainError('scores must be finite')
    return float(math.exp(beta_star.max() - beta_star.min()))


def condition_number_K(p_min: float) -> float:
    if not 0 < p_min <= 1:
        raise DomainError(f'p_min must lie in (0, 1], got {p_min}')
    try:
        return math.exp(1.0 / p_min)
    except OverflowError:
        return math.inf


def oracle_bound_rhs(cond: float, delta: float, c_s: float, h: float,
                     mode: BoundMode = BoundMode.POINTWISE_M) -> Tuple[float, bool]:
    '''
    Right-hand side of the sup-norm oracle bound and whether it is active
    (below 1/3, where the bound is valid).

    `cond` is M(t) (sup_t M(t) in uniform_M mode) or K; `delta` is delta_h(t)
    (sup_t delta_h(t) in the uniform modes).
    '''
    mode = BoundMode(mode)
    if cond < 0 or delta < 0:
        raise DomainError('condition number and delta must be nonnegative')
    if not (c_s > 0 and h > 0):
        raise DomainError('c_s and h must be positive')
    factor = 48.0 if mode in (BoundMode.POINTWISE_M, BoundMode.UNIFORM_M) else 72.0
    value = factor * cond * (delta + c_s * h)
    return value, value < BOUND_GATE


def trajectory_error(est: np.ndarray, truth: np.ndarray) -> Tuple[List[float], float]:
    '''Per-time sup-norm error between (K, N) score paths, both centered first.'''
    est, truth = np.asarray(est, dtype=float), np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise ShapeMismatch(f'score paths have shapes {est.shape} and {truth.shape}')
    diff = np.abs(center_paths(est.T).T - center_paths(truth.T).T)
    per_time = diff.max(axis=1).tolist()
    return per_time, float(max(per_time)) if per_time else 0.0


def bound_probability(N: int, h: float, gamma: float, mode: RateMode = RateMode.POINTWISE) -> float:
    '''Probability with which the oracle bound holds: 1 - 2/N - gamma, or 1 - 2h^3/N - gamma uniformly.'''
    mode = RateMode(mode)
    if N < 2 or not h > 0 or not 0 <= gamma <= 1:
        raise DomainError('need N >= 2, h > 0 and gamma in [0, 1]')
    lead = 2.0 / N if mode is RateMode.POINTWISE else 2.0 * h ** 3 / N
    return max(0.0, 1.0 - lead - gamma)


def connectivity_failure_bound(N: int, T: float, p_min: float) -> float:
    '''gamma surrogate: one minus the probability bound that the comparison graph is strongly connected.'''
    return 1.0 - connectivity_probability_bound(N, T, p_min)


def convergence_rate(M_t: float, delta: float, N: int, T: float, eta: float,
                     mode: RateMode = RateMode.POINTWISE) -> float:
    '''Order of the estimation error M(t) (delta_h(t) + max{T^-(1+eta), (log N / NT)^(1/3)}) and its uniform analogue.'''
    mode = RateMode(mode)
    if N < 2 or not T > 0 or not eta > 0:
        raise DomainError('need N >= 2, T > 0 and eta > 0')
    if mode is RateMode.POINTWISE:
        bias = T ** -(1 + eta)
        variance = (math.log(N) / (N * T)) ** (1 / 3)
    else:
        bias = T ** -(0.5 + eta)
        variance = (math.log(N * T ** (1 + eta)) / (N * T)) ** (1 / 3)
    return M_t * (delta + max(bias, variance))


def score_estimators(
    dataset: Dataset,
    truth: np.ndarray,
    estimates: Dict[str, np.ndarray],
    loo: Optional[Dict[str, Tuple[Optional[float], Optional[float]]]] = None,
) -> List[EstimatorRow]:
    '''
    Rank Diff of each (K, N) estimate against the centered truth, plus any
    precomputed (loo_prob, loo_nll) pairs.
    '''
    true_ranks = rank_paths(center_paths(np.asarray(truth, dtype=float).T).T)
    rows = []
    for name, scores in estimates.items():
        loo_prob, loo_nll = (loo or {}).get(name, (None, None))
        diff = rank_diff(rank_paths(scores), true_ranks)
        logger.debug(f'{name}: rank diff {diff:.4f}')
        rows.append(EstimatorRow(estimator=name, rank_diff=diff, loo_prob=loo_prob, loo_nll=loo_nll))
    return rows


def _finite(value: float) -> Optional[float]:
    return float(value) if math.isfinite(value) else None


def _bound(cond: float, delta: Optional[float], c_s: float, h: float, mode: BoundMode):
    if delta is None or not math.isfinite(cond):
        return None, None
    value, active = oracle_bound_rhs(cond, delta, c_s, h, mode)
    return _finite(value), bool(active)


def theory_diagnostics(
    dataset: Dataset,
    spec: KernelSpec,
    target: np.ndarray,
    p_min: float,
    c_s: float = 1.0,
    eta: float = 0.1,
) -> TheoryDiagnostics:
    '''
    Evaluate the oracle bounds along the observed times.

    `target` holds the (K, N) scores the fit estimates at each observed time:
    the true scores under BT, the projection otherwise.
    '''
    target = np.asarray(target, dtype=float)
    times = dataset.distinct_times
    if target.shape != (len(times), dataset.n_teams):
        raise ShapeMismatch(f'target scores have shape {target.shape}, expected {(len(times), dataset.n_teams)}')
    N, h = dataset.n_teams, spec.bandwidth
    T = dataset.n_games / (len(times) * N * (N - 1) / 2)
    params = TheoryParams(p_min=p_min, n_games=T, n_teams=N, c_s=c_s, eta=eta)
    K = condition_number_K(p_min)

    rows = []
    for k, t in enumerate(times):
        try:
            delta = delta_h(dataset, spec, float(t))
        except IsolatedTeam as e:
            logger.debug(f'No delta_h at t={t:.6g}: {e.message}')
            delta = None
        try:
            M = condition_number_M(target[k])
        except (DomainError, OverflowError):
            M = math.inf
        bound_M, active_M = _bound(M, delta, c_s, h, BoundMode.POINTWISE_M)
        bound_K, active_K = _bound(K, delta, c_s, h, BoundMode.POINTWISE_K)
        rows.append(TimeDiagnostics(
            time=float(dataset.distinct_raw_times[k]), delta_h=delta, condition_M=_finite(M),
            bound_M=bound_M, bound_M_active=active_M, bound_K=bound_K, bound_K_active=active_K,
        ))

    deltas = [r.delta_h for r in rows]
    sup_delta = None if any(d is None for d in deltas) else max(deltas)
    sup_M = max(math.inf if r.condition_M is None else r.condition_M for r in rows)
    uniform_M, uniform_M_active = _bound(sup_M, sup_delta, c_s, h, BoundMode.UNIFORM_M)
    uniform_K, uniform_K_active = _bound(K, sup_delta, c_s, h, BoundMode.UNIFORM_K)
    active = sum(bool(r.bound_M_active) for r in rows)
    logger.info(f'Oracle bound active at {active}/{len(rows)} times (h={h:.4g}, p_min={p_min:.4g})')
    return TheoryDiagnostics(
        c_s=c_s, eta=eta, p_min=p_min, games_per_pair=T, condition_K=_finite(K),
        h_pointwise=bandwidth_pointwise(params), h_uniform=bandwidth_uniform(params),
        uniform_M=uniform_M, uniform_M_active=uniform_M_active,
        uniform_K=uniform_K, uniform_K_active=uniform_K_active, times=rows,
    )
