from dataclasses import dataclass

from .errors import DomainError


@dataclass(frozen=True)
class TheoryParams:
    '''
    Constants of the consistency theory that are not tied to data.

    design_min / design_max: design-density bounds, 0 < design_min <= 1 <= design_max
    lipschitz_p: Lipschitz constant of the winning probabilities
    p_min: lower bound on every winning probability, in (0, 1]
    c_s: smoothing constant; the theory only says it exists, 1.0 is a free default
    eta: slack exponent in the bandwidth schedules
    lipschitz_w: Lipschitz constant of the kernel
    n_games: lower bound T on the games played by each pair
    n_teams: N
    '''
    p_min: float
    n_games: float
    n_teams: int
    design_min: float = 1.0
    design_max: float = 1.0
    lipschitz_p: float = 1.0
    c_s: float = 1.0
    eta: float = 0.1
    lipschitz_w: float = 1.0

    def __post_init__(self):
        if self.n_teams < 2:
            raise DomainError(f'n_teams must be at least 2, got {self.n_teams}')
        if not 0 < self.p_min <= 1:
            raise DomainError(f'p_min must lie in (0, 1], got {self.p_min}')
        if not 0 < self.design_min <= 1 <= self.design_max:
            raise DomainError('need 0 < design_min <= 1 <= design_max')
        for name in ('n_games', 'lipschitz_p', 'c_s', 'eta', 'lipschitz_w'):
            if not getattr(self, name) > 0:
                raise DomainError(f'{name} must be positive, got {getattr(self, name)}')
