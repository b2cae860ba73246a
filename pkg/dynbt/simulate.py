'''
Synthetic tournaments.

Score paths are Gaussian-process draws over M equally spaced rounds with a
Toeplitz covariance 1 - M^-alpha |k - l|^r. Matches are binomial: the BT-true
generator uses sigma(beta_i - beta_j), the model-agnostic one uses a smooth
probability field that need not come from any score vector.

All randomness flows through an explicit numpy Generator (PCG64 via
`np.random.default_rng(seed)`), so a seed reproduces a dataset exactly.
'''
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union
import json

from loguru import logger
import numpy as np
from scipy.linalg import eigh, toeplitz
from scipy.special import expit

from .data import Dataset
from .errors import DegenerateField, DomainError, FactorizationError

JITTER = 1e-10


class MeanMode(str, Enum):
    UNIFORM = 'uniform'
    GROUP = 'group'


@dataclass(frozen=True)
class GPSpec:
    '''
    M rounds; Toeplitz covariance from (alpha, r) unless `covariance` is given.

    Means are constant in time: u_i ~ Uniform[0, 1] (mean='uniform'), or
    group-wise u_i ~ Uniform[gap (g - 1), gap (g - 1) + width] for team i in
    group g of `groups` (mean='group').
    '''
    M: int
    alpha: float = 1.0
    r: float = 1.0
    mean: MeanMode = MeanMode.UNIFORM
    groups: int = 5
    gap: float = 1.5
    width: float = 0.5
    covariance: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, 'mean', MeanMode(self.mean))
        if self.M < 1:
            raise DomainError(f'M must be at least 1, got {self.M}')
        if not (self.alpha > 0 and self.r > 0):
            raise DomainError('alpha and r must be positive')

    def cov(self) -> np.ndarray:
        if self.covariance is not None:
            C = np.asarray(self.covariance, dtype=float)
            if C.shape != (self.M, self.M) or not np.allclose(C, C.T):
                raise DomainError(f'covariance must be a symmetric {self.M}x{self.M} matrix')
            return C
        return toeplitz_cov(self.M, self.alpha, self.r)


@dataclass(frozen=True)
class ProbabilityField:
    '''p[i, j, t] = P(i beats j at round t); p[i, j] + p[j, i] = 1 off the diagonal.'''
    p: np.ndarray

    @property
    def n_teams(self) -> int:
        return self.p.shape[0]

    @property
    def n_times(self) -> int:
        return self.p.shape[2]

    def at(self, k: int) -> np.ndarray:
        return self.p[:, :, k].copy()

    @property
    def p_min(self) -> float:
        off = ~np.eye(self.n_teams, dtype=bool)
        return float(self.p[off].min())


def toeplitz_cov(M: int, alpha: float, r: float) -> np.ndarray:
    lags = np.arange(M, dtype=float)
    return toeplitz(1.0 - M ** (-alpha) * lags ** r)


def symmetric_factor(cov: np.ndarray) -> np.ndarray:
    '''F with F F^T = cov, from the eigendecomposition; jitter is added once if needed.'''
    cov = np.asarray(cov, dtype=float)
    for jitter in (0.0, JITTER):
        vals, vecs = eigh(cov + jitter * np.eye(len(cov)))
        floor = -1e-10 * max(1.0, float(np.abs(vals).max()))
        if vals.min() >= floor:
            return vecs * np.sqrt(np.clip(vals, 0.0, None))
    raise FactorizationError(f'covariance is not positive semidefinite (min eigenvalue {vals.min():.3e})')


def uniform_means(N: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=N)


def group_means(N: int, groups: int, gap: float, width: float, rng: np.random.Generator) -> np.ndarray:
    '''Teams are dealt into `groups` near-equal random groups; group g draws from [gap (g-1), gap (g-1) + width].'''
    if groups < 1:
        raise DomainError('need at least one group')
    membership = rng.permutation(np.arange(N) % groups)
    return gap * membership + rng.uniform(0.0, width, size=N)


def team_means(N: int, gp: GPSpec, rng: np.random.Generator) -> np.ndarray:
    if gp.mean is MeanMode.GROUP:
        return group_means(N, gp.groups, gp.gap, gp.width, rng)
    return uniform_means(N, rng)


def gp_sample_beta(N: int, gp: GPSpec, rng: np.random.Generator, means: Optional[np.ndarray] = None) -> np.ndarray:
    '''N independent score paths, shape (N, M).'''
    F = symmetric_factor(gp.cov())
    mu = team_means(N, gp, rng) if means is None else np.asarray(means, dtype=float)
    mu = np.broadcast_to(mu[:, None] if mu.ndim == 1 else mu, (N, gp.M))
    z = rng.standard_normal((N, gp.M))
    return mu + z @ F.T


def _games_array(n_games, N: int, M: int) -> np.ndarray:
    n = np.asarray(n_games)
    if n.ndim == 0:
        n = np.full((N, N, M), int(n))
    elif n.ndim == 2:
        n = np.repeat(n[:, :, None], M, axis=2)
    if n.shape != (N, N, M):
        raise DomainError(f'n_games must be a scalar, (N, N) or (N, N, M) array, got shape {n.shape}')
    if np.any(n < 0) or not np.all(n == np.round(n)):
        raise DomainError('game counts must be nonnegative integers')
    return n.astype(int)


def default_teams(N: int) -> List[str]:
    width = len(str(N))
    return [f'T{i + 1:0{width}d}' for i in range(N)]


def _binomial_matches(prob: np.ndarray, n_games, rng: np.random.Generator, teams: Optional[Sequence[str]]) -> Dataset:
    # prob: (N, N, M) with prob[i, j, t] = P(i beats j); only i < j is read
    N, _, M = prob.shape
    n = _games_array(n_games, N, M)
    I, J = np.triu_indices(N, k=1)
    rounds = np.repeat(np.arange(M), len(I))
    ii, jj = np.tile(I, M), np.tile(J, M)
    games = n[ii, jj, rounds]
    wins = rng.binomial(games, prob[ii, jj, rounds])
    keep = games > 0
    if not keep.any():
        raise DomainError('no games scheduled')
    return Dataset.from_arrays(
        teams if teams is not None else default_teams(N),
        (rounds + 1)[keep].astype(float),
        ii[keep], jj[keep], wins[keep], (games - wins)[keep],
    )


def bt_probability_field(beta_paths: np.ndarray) -> ProbabilityField:
    beta = np.asarray(beta_paths, dtype=float)
    p = expit(beta[:, None, :] - beta[None, :, :])
    idx = np.arange(beta.shape[0])
    p[idx, idx, :] = 0.0
    return ProbabilityField(p)


def generate_bt_matches(beta_paths: np.ndarray, n_games, rng: np.random.Generator,
                        teams: Optional[Sequence[str]] = None) -> Dataset:
    return _binomial_matches(bt_probability_field(beta_paths).p, n_games, rng, teams)


def generate_agnostic_probs(N: int, M: int, gp: GPSpec, p_l: float, p_u: float, rng: np.random.Generator,
                            strict: bool = False) -> ProbabilityField:
    '''
    One GP path per pair i < j, with mean u_i - u_j (u from the GPSpec mean
    mode), then a single affine map sending the global min / max of all draws
    to p_l / p_u.
    '''
    if not 0 < p_l < p_u < 1:
        raise DomainError(f'need 0 < p_l < p_u < 1, got [{p_l}, {p_u}]')
    if gp.M != M:
        raise DomainError(f'GPSpec has M={gp.M}, expected {M}')
    F = symmetric_factor(gp.cov())
    u = team_means(N, gp, rng)
    I, J = np.triu_indices(N, k=1)
    raw = (u[I] - u[J])[:, None] + rng.standard_normal((len(I), M)) @ F.T
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        if strict:
            raise DegenerateField('all raw draws are equal; the affine map is undefined')
        logger.warning('Degenerate probability field, filling with the midpoint of [p_l, p_u]')
        scaled = np.full_like(raw, (p_l + p_u) / 2)
    else:
        scaled = p_l + (raw - lo) * (p_u - p_l) / (hi - lo)
    p = np.zeros((N, N, M))
    p[I, J, :] = scaled
    p[J, I, :] = 1.0 - scaled
    return ProbabilityField(p)


def generate_agnostic_matches(field: ProbabilityField, n_games, rng: np.random.Generator,
                              teams: Optional[Sequence[str]] = None) -> Dataset:
    return _binomial_matches(field.p, n_games, rng, teams)


def center_paths(beta_paths: np.ndarray) -> np.ndarray:
    '''Subtract the across-team mean at every round (truth is compared after centering).'''
    beta = np.asarray(beta_paths, dtype=float)
    return beta - beta.mean(axis=0, keepdims=True)


def win_rate_scores(dataset: Dataset) -> np.ndarray:
    '''
    Per-round win rate of each team, shape (K, N): wins / games at that round.
    Teams that did not play get nan.
    '''
    C = np.asarray(dataset.raw_count_tensor)
    wins = C.sum(axis=2)
    games = wins + C.sum(axis=1)
    with np.errstate(invalid='ignore', divide='ignore'):
        return np.where(games > 0, wins / np.where(games > 0, games, 1), np.nan)


def write_truth(path: Union[str, Path], mode: str, teams: Sequence[str], times: Sequence[float],
                beta: Optional[np.ndarray] = None, p: Optional[np.ndarray] = None, file_mode: str = 'w') -> None:
    '''Truth file: beta paths (N, M) for mode "bt", the probability field (N, N, M) for "agnostic".'''
    doc: Dict[str, Any] = {'mode': mode, 'teams': list(teams), 'times': [float(t) for t in times]}
    if beta is not None:
        doc['beta'] = np.asarray(beta).tolist()
    if p is not None:
        doc['p'] = np.asarray(p).tolist()
    with open(path, file_mode, encoding='utf-8') as f:
        json.dump(doc, f)


def read_truth(path: Union[str, Path]) -> Dict[str, Any]:
    with open(path, 'r', encoding='utf-8') as f:
        doc = json.load(f)
    for key in ('beta', 'p'):
        if key in doc:
            doc[key] = np.asarray(doc[key], dtype=float)
    return doc
