from typing import Any, Dict, List, Optional


class DynBTError(Exception):
    '''
    Base class for every error dynbt raises on purpose.

    Each error knows how to render itself as the JSON object the CLI writes
    to stderr, and which exit code the CLI should return for it:
    1 for usage problems, 2 for data or model problems.
    '''
    exit_code = 2

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    @property
    def code(self) -> str:
        return type(self).__name__

    def to_dict(self) -> Dict[str, Any]:
        return {'error': self.code, 'message': self.message, **self.details}


class UsageError(DynBTError):
    exit_code = 1


class ParseError(DynBTError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message, {'line': line} if line is not None else None)
        self.line = line


class ValidationError(DynBTError):
    pass


class UnknownTime(DynBTError):
    pass


class DomainError(DynBTError):
    pass


class EmptyData(DynBTError):
    pass


class NotStronglyConnected(DynBTError):
    '''Raised when the comparison digraph has more than one strongly connected component.

    `witness` is a set of team indices that never beat anyone outside the set,
    i.e. a split across which no cross-group win exists.
    '''
    def __init__(self, message: str, components: List[List[int]], witness: List[int], teams: Optional[List[str]] = None):
        details: Dict[str, Any] = {'components': components, 'witness': witness}
        if teams is not None:
            details['components'] = [[teams[i] for i in c] for c in components]
            details['witness'] = [teams[i] for i in witness]
        super().__init__(message, details)
        self.components = components
        self.witness = witness


class MaxIterExceeded(DynBTError):
    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report


class AllFoldsFailed(DynBTError):
    pass


class FactorizationError(DynBTError):
    pass


class DegenerateField(DynBTError):
    pass


class ShapeMismatch(DynBTError):
    pass


class IsolatedTeam(DynBTError):
    pass
