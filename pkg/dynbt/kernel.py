'''
Kernel weights and the smoothing step X~(t) = sum_m W_h(t_m, t) X^(m).

Kernels are the standard density forms (Gaussian peak 1/sqrt(2 pi), Epanechnikov
peak 3/4), so sup W <= 1 holds without rescaling. There is no boundary
correction near t = 0 or t = 1.
'''
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union
import math

from loguru import logger
import numpy as np

from .data import CountMatrix, Dataset
from .errors import DomainError
from .theory import TheoryParams

# weights below this are flushed to zero
WEIGHT_FLOOR = 1e-300

_SQRT_2PI = math.sqrt(2 * math.pi)


class KernelFamily(str, Enum):
    GAUSSIAN = 'gaussian'
    EPANECHNIKOV = 'epanechnikov'


@dataclass(frozen=True)
class KernelSpec:
    family: KernelFamily = KernelFamily.GAUSSIAN
    bandwidth: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, 'family', KernelFamily(self.family))
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise DomainError(f'bandwidth must be a positive finite number, got {self.bandwidth}')

    @property
    def lipschitz(self) -> float:
        if self.family is KernelFamily.GAUSSIAN:
            # sup |phi'(x)| = phi(1)
            return math.exp(-0.5) / _SQRT_2PI
        return 1.5

    @property
    def full_support(self) -> bool:
        return self.family is KernelFamily.GAUSSIAN

    def standard(self, x: Union[float, np.ndarray]) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.family is KernelFamily.GAUSSIAN:
            return np.exp(-0.5 * x * x) / _SQRT_2PI
        return np.where(np.abs(x) <= 1, 0.75 * (1 - x * x), 0.0)

    def weight(self, s, t) -> np.ndarray:
        h = self.bandwidth
        w = self.standard((np.asarray(s, dtype=float) - np.asarray(t, dtype=float)) / h) / h
        return np.where(w < WEIGHT_FLOOR, 0.0, w)

    def with_bandwidth(self, bandwidth: float) -> 'KernelSpec':
        return KernelSpec(self.family, bandwidth)


def kernel_weight(spec: KernelSpec, s: float, t: float) -> float:
    return float(spec.weight(s, t))


def smooth_counts(dataset: Dataset, spec: KernelSpec, t: float) -> CountMatrix:
    if not 0 <= t <= 1:
        raise DomainError(f'evaluation time must lie in [0, 1], got {t}')
    return smooth_counts_grid(dataset, spec, [t])[0]


def smooth_counts_grid(dataset: Dataset, spec: KernelSpec, grid: Sequence[float]) -> np.ndarray:
    '''Smoothed count matrices at every grid point, shape (len(grid), N, N).'''
    grid = np.asarray(grid, dtype=float)
    W = spec.weight(dataset.distinct_times[None, :], grid[:, None])
    logger.debug(f'Smoothing {len(dataset.distinct_times)} times onto {len(grid)} grid points with {spec}')
    return np.tensordot(W, dataset.raw_count_tensor, axes=(1, 0))


def _check_params(params: TheoryParams) -> None:
    if params.p_min > 1:
        raise DomainError('p_min must not exceed 1')


def bandwidth_pointwise(params: TheoryParams) -> float:
    _check_params(params)
    N, T, eta = params.n_teams, params.n_games, params.eta
    variance = 36 * (1 - params.p_min) * math.log(N) / (params.c_s ** 2 * params.design_min * (N - 1) * T)
    return max(T ** -(1 + eta), max(variance, 0.0) ** (1 / 3))


def bandwidth_uniform(params: TheoryParams) -> float:
    _check_params(params)
    N, T, eta = params.n_teams, params.n_games, params.eta
    log_term = math.log(N) + (3 + 3 * eta) * math.log(T)
    variance = 36 * (1 - params.p_min) * log_term / (params.c_s ** 2 * params.design_min * (N - 1) * T)
    return max(T ** -(1 + eta), max(variance, 0.0) ** (1 / 3))
