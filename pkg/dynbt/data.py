'''
Timestamped pairwise-comparison data.

A Dataset is an immutable bag of MatchRecords over an ordered team roster.
Times are min-max normalized onto [0, 1]; the raw times are kept so the
dataset can be written back out unchanged.
'''
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union
import re

from loguru import logger
import numpy as np
import pandas as pd

from .errors import ParseError, UnknownTime, ValidationError

COLUMNS = ['time', 'team_a', 'team_b', 'wins_a', 'wins_b']

# np.ndarray of shape (N, N), nonnegative, zero diagonal
CountMatrix = np.ndarray

TIME_ATOL = 1e-12


@dataclass(frozen=True)
class MatchRecord:
    time: float
    team_a: int
    team_b: int
    wins_a: int
    wins_b: int

    @property
    def games(self) -> int:
        return self.wins_a + self.wins_b


def normalize_times(raw_times: Sequence[float]) -> np.ndarray:
    raw = np.asarray(raw_times, dtype=float)
    if raw.size == 0:
        raise ValidationError('at least one time value is required')
    if not np.all(np.isfinite(raw)):
        raise ValidationError('times must be finite')
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def as_count_matrix(X) -> CountMatrix:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValidationError(f'count matrix must be square, got shape {X.shape}')
    if not np.all(np.isfinite(X)):
        raise ValidationError('count matrix entries must be finite')
    if np.any(X < 0):
        raise ValidationError('count matrix entries must be nonnegative')
    if np.any(np.diag(X) != 0):
        raise ValidationError('count matrix diagonal must be zero')
    return X


@dataclass(frozen=True)
class Dataset:
    '''
    Records are sorted by normalized time (stable with respect to source order).
    `raw_times[k]` is the unnormalized time of `records[k]` and `source_order[k]`
    its position in the input, which `write_csv` uses to reproduce the file.
    '''
    teams: Tuple[str, ...]
    records: Tuple[MatchRecord, ...]
    raw_times: Tuple[float, ...]
    source_order: Tuple[int, ...] = field(default=())

    def __post_init__(self):
        n = len(self.teams)
        if n < 2:
            raise ValidationError(f'a dataset needs at least 2 teams, got {n}')
        if len(set(self.teams)) != n:
            raise ValidationError('team identifiers must be unique')
        if not self.records:
            raise ValidationError('a dataset needs at least one record')
        prev = -np.inf
        for r in self.records:
            if not (0 <= r.team_a < n and 0 <= r.team_b < n):
                raise ValidationError(f'team index out of range in {r}')
            if r.time < prev:
                raise ValidationError('records must be sorted by time')
            prev = r.time
        if not self.source_order:
            object.__setattr__(self, 'source_order', tuple(range(len(self.records))))

    @classmethod
    def from_arrays(
        cls,
        teams: Sequence[str],
        times: Sequence[float],
        team_a: Sequence[int],
        team_b: Sequence[int],
        wins_a: Sequence[int],
        wins_b: Sequence[int],
        normalize: bool = True,
    ) -> 'Dataset':
        raw = np.asarray(times, dtype=float)
        a = np.asarray(team_a, dtype=int)
        b = np.asarray(team_b, dtype=int)
        wa = np.asarray(wins_a, dtype=int)
        wb = np.asarray(wins_b, dtype=int)
        if not (raw.shape == a.shape == b.shape == wa.shape == wb.shape):
            raise ValidationError('record columns must have equal length')
        if raw.size == 0:
            raise ValidationError('a dataset needs at least one record')
        if np.any(a == b):
            raise ValidationError('team_a and team_b must differ')
        if np.any(wa < 0) or np.any(wb < 0):
            raise ValidationError('win counts must be nonnegative')
        if np.any(wa + wb < 1):
            raise ValidationError('every record needs at least one game')
        norm = normalize_times(raw) if normalize else raw
        if not normalize and (np.any(norm < 0) or np.any(norm > 1)):
            raise ValidationError('times must lie in [0, 1]')
        order = np.argsort(norm, kind='stable')
        records = tuple(
            MatchRecord(float(norm[k]), int(a[k]), int(b[k]), int(wa[k]), int(wb[k])) for k in order
        )
        return cls(
            teams=tuple(teams),
            records=records,
            raw_times=tuple(float(raw[k]) for k in order),
            source_order=tuple(int(k) for k in order),
        )

    @property
    def n_teams(self) -> int:
        return len(self.teams)

    @property
    def n_records(self) -> int:
        return len(self.records)

    @cached_property
    def index(self) -> Dict[str, int]:
        return {team: i for i, team in enumerate(self.teams)}

    @cached_property
    def arrays(self) -> Dict[str, np.ndarray]:
        cols = {
            'time': np.array([r.time for r in self.records], dtype=float),
            'team_a': np.array([r.team_a for r in self.records], dtype=int),
            'team_b': np.array([r.team_b for r in self.records], dtype=int),
            'wins_a': np.array([r.wins_a for r in self.records], dtype=float),
            'wins_b': np.array([r.wins_b for r in self.records], dtype=float),
        }
        for v in cols.values():
            v.flags.writeable = False
        return cols

    @property
    def n_games(self) -> int:
        return sum(r.games for r in self.records)

    @cached_property
    def distinct_times(self) -> np.ndarray:
        t = np.unique(self.arrays['time'])
        t.flags.writeable = False
        return t

    @cached_property
    def distinct_raw_times(self) -> np.ndarray:
        '''Raw time for each entry of distinct_times.'''
        times = self.arrays['time']
        raw = np.asarray(self.raw_times)
        first = np.searchsorted(times, self.distinct_times, side='left')
        out = raw[first]
        out.flags.writeable = False
        return out

    def time_index(self, t: float) -> int:
        k = int(np.searchsorted(self.distinct_times, t))
        for j in (k - 1, k):
            if 0 <= j < len(self.distinct_times) and abs(self.distinct_times[j] - t) <= TIME_ATOL:
                return j
        raise UnknownTime(f'{t!r} is not an observed time', {'time': t})

    @cached_property
    def raw_count_tensor(self) -> np.ndarray:
        '''Raw win counts aggregated per distinct time, shape (K, N, N).'''
        n, cols = self.n_teams, self.arrays
        k = np.searchsorted(self.distinct_times, cols['time'])
        C = np.zeros((len(self.distinct_times), n, n))
        np.add.at(C, (k, cols['team_a'], cols['team_b']), cols['wins_a'])
        np.add.at(C, (k, cols['team_b'], cols['team_a']), cols['wins_b'])
        C.flags.writeable = False
        return C

    def total_count_matrix(self) -> CountMatrix:
        return self.raw_count_tensor.sum(axis=0)


def raw_count_matrix(dataset: Dataset, t: float) -> CountMatrix:
    return dataset.raw_count_tensor[dataset.time_index(t)].copy()


_LINE_RE = re.compile(r'line (\d+)')


def _undecodable_line(path: Path) -> Optional[int]:
    with path.open('rb') as f:
        for number, raw in enumerate(f, start=1):
            try:
                raw.decode('utf-8')
            except UnicodeDecodeError:
                return number
    return None


def load_csv(path: Union[str, Path]) -> Dataset:
    '''
    Read a UTF-8 match file. Team names are taken verbatim (surrounding
    whitespace included); the other fields may be padded.
    '''
    path = Path(path)
    logger.debug(f'Loading matches from {path}')
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except UnicodeDecodeError as e:
        raise ParseError(f'{path} is not valid UTF-8: {e.reason}', line=_undecodable_line(path))
    except pd.errors.EmptyDataError:
        raise ValidationError(f'{path} is empty')
    except pd.errors.ParserError as e:
        m = _LINE_RE.search(str(e))
        raise ParseError(f'malformed row in {path}: {e}', line=int(m.group(1)) if m else None)

    columns = [c.strip() for c in df.columns]
    unknown = [c for c in columns if c not in COLUMNS]
    if unknown:
        raise ValidationError(f'unknown column(s) {unknown}', {'expected': COLUMNS})
    missing = [c for c in COLUMNS if c not in columns]
    if missing:
        raise ValidationError(f'missing column(s) {missing}', {'expected': COLUMNS})
    df.columns = columns
    if df.empty:
        raise ValidationError(f'{path} has no records')

    teams: List[str] = []
    index: Dict[str, int] = {}

    def team_id(name: str) -> int:
        if name not in index:
            index[name] = len(teams)
            teams.append(name)
        return index[name]

    times, a, b, wa, wb = [], [], [], [], []
    for offset, row in enumerate(df[COLUMNS].itertuples(index=False)):
        line = offset + 2  # header is line 1
        time_s, ta, tb, wa_s, wb_s = (str(v) for v in row)
        time_s, wa_s, wb_s = time_s.strip(), wa_s.strip(), wb_s.strip()
        try:
            t = float(time_s)
        except ValueError:
            raise ParseError(f'time {time_s!r} is not a number', line=line)
        if not np.isfinite(t):
            raise ParseError(f'time {time_s!r} is not finite', line=line)
        if not ta or not tb:
            raise ParseError('team names must be non-empty', line=line)
        counts = []
        for s in (wa_s, wb_s):
            try:
                counts.append(int(s))
            except ValueError:
                raise ParseError(f'win count {s!r} is not an integer', line=line)
        if min(counts) < 0:
            raise ValidationError('win counts must be nonnegative', {'line': line})
        if ta == tb:
            raise ValidationError(f'team {ta!r} plays itself', {'line': line})
        if sum(counts) == 0:
            raise ValidationError('record has no games (wins_a + wins_b = 0)', {'line': line})
        times.append(t)
        a.append(team_id(ta))
        b.append(team_id(tb))
        wa.append(counts[0])
        wb.append(counts[1])

    dataset = Dataset.from_arrays(teams, times, a, b, wa, wb)
    logger.info(f'Loaded {dataset.n_records} records, {dataset.n_teams} teams, {len(dataset.distinct_times)} times')
    return dataset


def write_csv(dataset: Dataset, path: Union[str, Path], mode: str = 'w') -> None:
    '''Write the dataset with its raw times, in source order.'''
    rows = sorted(zip(dataset.source_order, dataset.records, dataset.raw_times))
    df = pd.DataFrame(
        {
            'time': [raw for _, _, raw in rows],
            'team_a': [dataset.teams[r.team_a] for _, r, _ in rows],
            'team_b': [dataset.teams[r.team_b] for _, r, _ in rows],
            'wins_a': [r.wins_a for _, r, _ in rows],
            'wins_b': [r.wins_b for _, r, _ in rows],
        },
        columns=COLUMNS,
    )
    with open(path, mode, encoding='utf-8', newline='') as f:
        df.to_csv(f, index=False)


def _columns(dataset: Dataset):
    cols = dataset.arrays
    return (
        cols['time'],
        cols['team_a'],
        cols['team_b'],
        cols['wins_a'].astype(int),
        cols['wins_b'].astype(int),
    )


def merge(first: Dataset, second: Dataset) -> Dataset:
    '''Union of two datasets on their normalized time axes.

    Teams keep `first`'s order; teams only in `second` are appended.
    '''
    teams = list(first.teams)
    remap = []
    for name in second.teams:
        if name not in teams:
            teams.append(name)
        remap.append(teams.index(name))
    remap = np.asarray(remap)
    t1, a1, b1, wa1, wb1 = _columns(first)
    t2, a2, b2, wa2, wb2 = _columns(second)
    return Dataset.from_arrays(
        teams,
        np.concatenate([t1, t2]),
        np.concatenate([a1, remap[a2]]),
        np.concatenate([b1, remap[b2]]),
        np.concatenate([wa1, wa2]),
        np.concatenate([wb1, wb2]),
        normalize=False,
    )


def scale(dataset: Dataset, factor: int) -> Dataset:
    if factor < 1:
        raise ValidationError('scale factor must be a positive integer')
    t, a, b, wa, wb = _columns(dataset)
    return Dataset.from_arrays(dataset.teams, t, a, b, wa * factor, wb * factor, normalize=False)


def without_game(dataset: Dataset, record: int, winner: str) -> Dataset:
    '''Copy of `dataset` with one game won by side `winner` ('a' or 'b') of `record` removed.'''
    if winner not in ('a', 'b'):
        raise ValidationError(f"winner must be 'a' or 'b', got {winner!r}")
    t, a, b, wa, wb = (np.array(c) for c in _columns(dataset))
    col = wa if winner == 'a' else wb
    if col[record] < 1:
        raise ValidationError(f'record {record} has no game won by side {winner}')
    col[record] -= 1
    keep = wa + wb > 0
    return Dataset.from_arrays(dataset.teams, t[keep], a[keep], b[keep], wa[keep], wb[keep], normalize=False)


def permute_teams(dataset: Dataset, perm: Sequence[int]) -> Dataset:
    '''Relabel teams: old team i becomes new team perm[i].'''
    perm = np.asarray(perm)
    teams: List[Optional[str]] = [None] * dataset.n_teams
    for old, new in enumerate(perm):
        teams[new] = dataset.teams[old]
    t, a, b, wa, wb = _columns(dataset)
    return Dataset.from_arrays(teams, t, perm[a], perm[b], wa, wb, normalize=False)
