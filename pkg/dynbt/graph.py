'''
Existence and uniqueness checks for the Bradley-Terry MLE.

The MLE exists and is unique iff for every partition of the teams some team in
each part beat some team in the other, i.e. iff the digraph with an edge i -> j
whenever X_ij > eps is strongly connected.
'''
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple
import math

from loguru import logger
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .data import CountMatrix, Dataset
from .errors import DomainError, NotStronglyConnected, ValidationError
from .kernel import KernelSpec, smooth_counts_grid

EPS_RAW = 0.0
EPS_SMOOTHED = 1e-12


class FrequencyMode(str, Enum):
    PER_TIME = 'per_time'
    ALL_TIMES = 'all_times'


def _adjacency(X, eps: float) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValidationError(f'count matrix must be square, got shape {X.shape}')
    if X.shape[0] < 2:
        raise DomainError('need at least 2 teams to check connectivity')
    A = X > eps
    np.fill_diagonal(A, False)
    return A


def strongly_connected_components(X: CountMatrix, eps: float = EPS_RAW) -> Tuple[int, np.ndarray]:
    '''Number of SCCs and the component label of every team.'''
    A = _adjacency(X, eps)
    return connected_components(csr_matrix(A), directed=True, connection='strong')


def condition1_holds(X: CountMatrix, eps: float = EPS_RAW) -> bool:
    n_components, _ = strongly_connected_components(X, eps)
    return n_components == 1


def components(labels: np.ndarray) -> List[List[int]]:
    groups: Dict[int, List[int]] = {}
    for team, label in enumerate(labels):
        groups.setdefault(int(label), []).append(team)
    return sorted(groups.values(), key=lambda g: g[0])


def condition1_witness(X: CountMatrix, eps: float = EPS_RAW) -> List[int]:
    '''
    A set of teams that never beat anyone outside it (empty if the condition holds).

    Such a set is a sink of the condensation of the win digraph; the one holding
    the lowest team index is returned.
    '''
    A = _adjacency(X, eps)
    n_components, labels = connected_components(csr_matrix(A), directed=True, connection='strong')
    if n_components == 1:
        return []
    for group in components(labels):
        inside = np.zeros(len(labels), dtype=bool)
        inside[group] = True
        if not A[np.ix_(inside, ~inside)].any():
            return group
    raise AssertionError('a condensation always has a sink')  # pragma: no cover


def check_condition1(X: CountMatrix, eps: float = EPS_RAW, teams: Optional[Sequence[str]] = None) -> None:
    n_components, labels = strongly_connected_components(X, eps)
    if n_components == 1:
        return
    witness = condition1_witness(X, eps)
    raise NotStronglyConnected(
        f'comparison graph has {n_components} strongly connected components; the MLE does not exist',
        components(labels),
        witness,
        teams=list(teams) if teams is not None else None,
    )


def connectivity_probability_bound(N: int, T: float, p_min: float) -> float:
    '''Lower bound on the probability that the comparison graph is strongly connected at every time.'''
    if N < 2:
        raise DomainError(f'N must be at least 2, got {N}')
    if not T > 0:
        raise DomainError(f'T must be positive, got {T}')
    if not 0 < p_min < 1:
        raise DomainError(f'p_min must lie in (0, 1), got {p_min}')
    return max(0.0, 1 - 4 * N * math.exp(-N * T * p_min / 2))


def condition1_frequency(dataset: Dataset, mode: FrequencyMode = FrequencyMode.PER_TIME) -> float:
    mode = FrequencyMode(mode)
    holds = [condition1_holds(C, EPS_RAW) for C in dataset.raw_count_tensor]
    if mode is FrequencyMode.PER_TIME:
        return float(np.mean(holds))
    return float(all(holds))


def condition1_report(dataset: Dataset, spec: Optional[KernelSpec] = None) -> Dict[str, Any]:
    '''
    Per-time verdicts on the raw matrices and, when a kernel is given, on the
    smoothed matrices evaluated at the distinct times.

    The global verdict is strong connectivity of the time-aggregated counts,
    which is what a full-support kernel sees at every t.
    '''
    teams = dataset.teams
    smoothed = smooth_counts_grid(dataset, spec, dataset.distinct_times) if spec is not None else None
    times = []
    for k, C in enumerate(dataset.raw_count_tensor):
        entry: Dict[str, Any] = {
            'time': float(dataset.distinct_raw_times[k]),
            'normalized_time': float(dataset.distinct_times[k]),
            'connected': condition1_holds(C, EPS_RAW),
        }
        if not entry['connected']:
            entry['witness'] = [teams[i] for i in condition1_witness(C, EPS_RAW)]
        if smoothed is not None:
            entry['smoothed_connected'] = condition1_holds(smoothed[k], EPS_SMOOTHED)
        times.append(entry)
    total = dataset.total_count_matrix()
    n_components, labels = strongly_connected_components(total, EPS_RAW)
    report: Dict[str, Any] = {
        'global': n_components == 1,
        'per_time_frequency': float(np.mean([t['connected'] for t in times])),
        'times': times,
    }
    if n_components > 1:
        report['components'] = [[teams[i] for i in c] for c in components(labels)]
        report['witness'] = [teams[i] for i in condition1_witness(total, EPS_RAW)]
        logger.warning(f"Aggregated comparison graph is not strongly connected; witness {report['witness']}")
    return report
