'''
Weighted Bradley-Terry fits on (smoothed) count matrices.

The risk minimized at each time point is

    R(beta) = sum_{i != j} X_ij log(1 + exp(beta_j - beta_i)) / sum_{i != j} X_ij

over the sum-zero plane. Its stationarity system is

    sum_j X_ij = sum_j T_ij sigma(beta_i - beta_j),   T = X + X^T,

and the gradient of R is the residual of that system divided by sum X.
Convergence is tested on the sup-norm of the unnormalized residual. Rows
whose totals are so large that float64 cannot resolve tol are held to a
floor of a few ulps of the largest row total instead.
'''
from dataclasses import dataclass, field
from enum import Enum
from functools import partial
from typing import List, Optional, Sequence
import math

from loguru import logger
import numpy as np
from scipy.special import expit

from .data import CountMatrix, Dataset, as_count_matrix
from .errors import DomainError, EmptyData, MaxIterExceeded, NotStronglyConnected, DynBTError
from .graph import EPS_RAW, EPS_SMOOTHED, check_condition1
from .kernel import KernelSpec, smooth_counts_grid
from .parallel import run_parallel

# np.ndarray of shape (N,), sum zero
ScoreVector = np.ndarray

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10000


class Method(str, Enum):
    MM = 'mm'
    GRADIENT = 'gradient'
    NEWTON = 'newton'


@dataclass
class FitReport:
    scores: ScoreVector
    iterations: int
    final_risk: float
    converged: bool
    grad_inf_norm: float
    method: str = Method.MM.value
    time: Optional[float] = None
    error: Optional[DynBTError] = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.error is None and bool(np.all(np.isfinite(self.scores)))

    @classmethod
    def failed(cls, n: int, error: DynBTError, time: Optional[float] = None) -> 'FitReport':
        return cls(
            scores=np.full(n, np.nan), iterations=0, final_risk=math.nan,
            converged=False, grad_inf_norm=math.nan, time=time, error=error,
        )


def center(beta) -> ScoreVector:
    beta = np.asarray(beta, dtype=float)
    return beta - beta.mean()


def _total(X: np.ndarray) -> float:
    total = float(X.sum())
    if not total > 0:
        raise EmptyData('count matrix has no games')
    return total


def _differences(beta: np.ndarray) -> np.ndarray:
    # D[i, j] = beta_i - beta_j
    return beta[:, None] - beta[None, :]


def empirical_risk(beta: ScoreVector, X: CountMatrix) -> float:
    X = np.asarray(X, dtype=float)
    total = _total(X)
    # softplus(beta_j - beta_i) in its overflow-free form
    return float((X * np.logaddexp(0.0, -_differences(np.asarray(beta, dtype=float)))).sum() / total)


def _stationarity(beta: np.ndarray, X: np.ndarray) -> np.ndarray:
    T = X + X.T
    return (T * expit(_differences(beta))).sum(axis=1) - X.sum(axis=1)


def risk_gradient(beta: ScoreVector, X: CountMatrix) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return _stationarity(np.asarray(beta, dtype=float), X) / _total(X)


def stationarity_residual(beta: ScoreVector, X: CountMatrix) -> float:
    '''Sup-norm of sum_j X_ij - sum_j T_ij sigma(beta_i - beta_j), unnormalized.'''
    X = np.asarray(X, dtype=float)
    return float(np.abs(_stationarity(np.asarray(beta, dtype=float), X)).max())


def residual_floor(X: CountMatrix) -> float:
    '''Smallest stationarity residual float64 can resolve for these counts.'''
    X = np.asarray(X, dtype=float)
    return float(16 * np.finfo(float).eps * (X + X.T).sum(axis=1).max())


def hessian(beta: ScoreVector, X: CountMatrix) -> np.ndarray:
    '''
    Unnormalized Hessian of the risk: a weighted graph Laplacian with edge weights
    T_ij e^{b_i} e^{b_j} / (e^{b_i} + e^{b_j})^2. Divide by sum X for the Hessian of R.
    '''
    X = np.asarray(X, dtype=float)
    _total(X)
    D = _differences(np.asarray(beta, dtype=float))
    W = (X + X.T) * expit(D) * expit(-D)
    np.fill_diagonal(W, 0.0)
    H = -W
    np.fill_diagonal(H, W.sum(axis=1))
    return H


def _mm_step(beta: np.ndarray, X: np.ndarray, log_wins: np.ndarray) -> np.ndarray:
    # u_i <- W_i / sum_j T_ij / (u_i + u_j), with u = exp(beta)
    denom = ((X + X.T) * expit(_differences(beta))).sum(axis=1)
    return center(log_wins + beta - np.log(denom))


def _gradient_step(beta: np.ndarray, X: np.ndarray, step: float, total: float) -> np.ndarray:
    return center(beta - step * _stationarity(beta, X) / total)


def _newton_step(beta: np.ndarray, X: np.ndarray, total: float) -> np.ndarray:
    n = len(beta)
    g = _stationarity(beta, X) / total
    H = hessian(beta, X) / total
    # H is singular along the ones vector; g is orthogonal to it
    d = np.linalg.solve(H + np.ones((n, n)) / n, -g)
    risk = empirical_risk(beta, X)
    residual = float(np.abs(g).max())
    slope = float(g @ d)
    t = 1.0
    for _ in range(40):
        candidate = center(beta + t * d)
        # near the optimum the risk stops moving in float64 while the residual still falls
        if (empirical_risk(candidate, X) <= risk + 1e-4 * t * slope
                or np.abs(_stationarity(candidate, X)).max() / total < (1 - 1e-4 * t) * residual):
            return candidate
        t *= 0.5
    return beta


def fit(
    X: CountMatrix,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    method: Method = Method.MM,
    init: Optional[ScoreVector] = None,
    eps: float = EPS_RAW,
    strict: bool = False,
    require_connectivity: bool = True,
    teams: Optional[Sequence[str]] = None,
) -> FitReport:
    '''
    Minimize the weighted risk over the sum-zero plane.

    The MLE exists and is unique iff the comparison graph of X is strongly
    connected; that is checked first and NotStronglyConnected is raised
    otherwise. With `require_connectivity=False` the check is skipped and the
    gradient path runs for `max_iter` steps, which diverges when the MLE
    does not exist.

    If `max_iter` is reached the last iterate is returned with
    converged=False, or MaxIterExceeded is raised when `strict`.
    '''
    X = as_count_matrix(X)
    total = _total(X)
    method = Method(method)
    n = X.shape[0]
    if require_connectivity:
        check_condition1(X, eps, teams)
    elif method is not Method.GRADIENT:
        logger.debug('Connectivity check disabled, switching to gradient descent')
        method = Method.GRADIENT

    beta = center(init) if init is not None else np.zeros(n)
    if not np.all(np.isfinite(beta)):
        beta = np.zeros(n)
    log_wins = np.log(X.sum(axis=1)) if method is Method.MM else None
    step = 2 * total / (X + X.T).sum(axis=1).max()
    threshold = max(tol, residual_floor(X))

    iterations = 0
    residual = stationarity_residual(beta, X)
    while residual > threshold and iterations < max_iter:
        if method is Method.MM:
            beta = _mm_step(beta, X, log_wins)
        elif method is Method.NEWTON:
            beta = _newton_step(beta, X, total)
        else:
            beta = _gradient_step(beta, X, step, total)
        iterations += 1
        residual = stationarity_residual(beta, X)

    report = FitReport(
        scores=beta,
        iterations=iterations,
        final_risk=empirical_risk(beta, X),
        converged=bool(residual <= threshold),
        grad_inf_norm=residual,
        method=method.value,
    )
    if report.converged:
        logger.debug(f'{method.value} converged in {iterations} iterations, residual = {residual:.3e}')
        if threshold > tol:
            logger.debug(f'Residual held to the float64 floor {threshold:.3e} instead of tol={tol:.1e}')
    elif require_connectivity:
        logger.warning(f'{method.value} stopped after {iterations} iterations with residual = {residual:.3e} > {threshold:.1e}')
    if not report.converged and strict:
        raise MaxIterExceeded(f'no convergence within {max_iter} iterations', report)
    return report


def _fit_point(X: np.ndarray, t: float, tol: float, max_iter: int, method: Method,
               eps: float, teams: Sequence[str], init: Optional[np.ndarray] = None) -> FitReport:
    try:
        report = fit(X, tol, max_iter, method=method, init=init, eps=eps, teams=teams)
    except (NotStronglyConnected, EmptyData) as e:
        logger.warning(f'No estimate at t={t:.6g}: {e.message}')
        return FitReport.failed(X.shape[0], e, time=t)
    report.time = t
    return report


def fit_trajectory(
    dataset: Dataset,
    spec: KernelSpec,
    grid: Optional[Sequence[float]] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    method: Method = Method.MM,
    warm_start: bool = True,
    jobs: int = 1,
    eps: float = EPS_SMOOTHED,
) -> List[FitReport]:
    '''
    Smooth, then fit, at every grid point (default: the observed times).

    Sequential runs warm-start each fit from the previous solution; with
    jobs > 1 every point starts cold. Both give the same estimates since the
    minimizer is unique. A disconnected grid point gets a failed report
    instead of aborting the trajectory.
    '''
    grid = dataset.distinct_times if grid is None else np.asarray(grid, dtype=float)
    if len(grid) == 0:
        raise DomainError('evaluation grid is empty')
    if np.any(grid < 0) or np.any(grid > 1):
        raise DomainError('evaluation grid must lie in [0, 1]')
    smoothed = smooth_counts_grid(dataset, spec, grid)
    logger.info(f'Fitting {len(grid)} grid points with {spec.family.value} kernel, h={spec.bandwidth:.4g}')

    if jobs > 1:
        worker = partial(_fit_pair, tol=tol, max_iter=max_iter, method=Method(method), eps=eps, teams=dataset.teams)
        return run_parallel(worker, list(zip(smoothed, grid)), jobs)

    reports: List[FitReport] = []
    previous: Optional[np.ndarray] = None
    for X, t in zip(smoothed, grid):
        report = _fit_point(X, float(t), tol, max_iter, Method(method), eps, dataset.teams,
                            init=previous if warm_start else None)
        if report.ok:
            previous = report.scores
        reports.append(report)
    return reports


def _fit_pair(item, tol, max_iter, method, eps, teams) -> FitReport:
    X, t = item
    return _fit_point(X, float(t), tol, max_iter, method, eps, teams)


def fit_static(
    dataset: Dataset,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    method: Method = Method.MM,
    divergent_budget: int = 1000,
) -> List[FitReport]:
    '''
    Plain Bradley-Terry fit on the raw counts of each observed time.

    Where the MLE does not exist the gradient path is still run for
    `divergent_budget` steps; its (unconverged, growing) iterate is what an
    unregularized static fit reports. The report keeps the connectivity error.
    '''
    reports = []
    previous = None
    for k, C in enumerate(dataset.raw_count_tensor):
        t = float(dataset.distinct_times[k])
        try:
            report = fit(C, tol, max_iter, method=method, init=previous, eps=EPS_RAW, teams=dataset.teams)
            previous = report.scores
        except NotStronglyConnected as e:
            report = fit(C, tol, divergent_budget, require_connectivity=False)
            report.error = e
        report.time = t
        reports.append(report)
    n_failed = sum(r.error is not None for r in reports)
    if n_failed:
        logger.info(f'Static MLE does not exist at {n_failed}/{len(reports)} observed times')
    return reports


def projection(P, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, *, method: Method = Method.MM) -> ScoreVector:
    '''
    Best Bradley-Terry approximation beta* of a winning-probability matrix.

    sum_{i != j} P_ij = C(N, 2) when P_ij + P_ji = 1, so the weighted risk with
    X = P is exactly the population risk normalized by C(N, 2).
    '''
    P = np.array(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 2:
        raise DomainError(f'probability matrix must be square with N >= 2, got shape {P.shape}')
    np.fill_diagonal(P, 0.0)
    off = ~np.eye(P.shape[0], dtype=bool)
    if not np.all((P[off] > 0) & (P[off] < 1)):
        raise DomainError('winning probabilities must lie strictly inside (0, 1)')
    if not np.allclose((P + P.T)[off], 1.0, atol=1e-12, rtol=0):
        raise DomainError('winning probabilities must satisfy P_ij + P_ji = 1')
    return fit(P, tol, max_iter, method=method, strict=True).scores


def win_prob(beta: ScoreVector, i: int, j: int) -> float:
    return float(expit(beta[i] - beta[j]))


def rank(scores: ScoreVector) -> np.ndarray:
    '''Rank 1 is the largest score; ties go to the lower team index.'''
    scores = np.asarray(scores, dtype=float)
    if not np.all(np.isfinite(scores)):
        raise DomainError('cannot rank non-finite scores')
    order = np.lexsort((np.arange(len(scores)), -scores))
    ranks = np.empty(len(scores), dtype=int)
    ranks[order] = np.arange(1, len(scores) + 1)
    return ranks
