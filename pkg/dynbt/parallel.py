from typing import Callable, Iterable, List, TypeVar

from joblib import Parallel, delayed
from loguru import logger

T = TypeVar('T')
R = TypeVar('R')


def run_parallel(func: Callable[[T], R], items: Iterable[T], jobs: int = 1) -> List[R]:
    '''Map `func` over `items`, in input order, on `jobs` worker processes.'''
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    logger.debug(f'Dispatching {len(items)} tasks to {jobs} workers')
    return Parallel(n_jobs=jobs)(delayed(func)(item) for item in items)
