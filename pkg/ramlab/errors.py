"""Exception hierarchy shared by every ramlab module."""

from typing import List, Optional


class RamLabError(Exception):
    """Base class for all errors raised by ramlab"""


class NotPositiveDefinite(RamLabError):
    def __init__(self, pivot: int, message: Optional[str] = None):
        self.pivot = pivot
        super().__init__(message or f"Matrix is not positive definite (failing pivot {pivot})")


class DowndateFailure(RamLabError):
    """Rank-one downdate lost positivity"""


class NoConvergence(RamLabError):
    """Iterative eigenvalue solver hit its sweep cap"""


class DimensionMismatch(RamLabError, ValueError):
    def __init__(self, expected: int, got: int, what: str = "vector"):
        self.expected = expected
        self.got = got
        super().__init__(f"Expected {what} of dimension {expected}, got {got}")


class InvalidState(RamLabError):
    """Chain or target evaluated at a point of zero density"""


class MissingMetadata(RamLabError):
    """Diagnostic needs the target's known mean/shape"""


class NoExactSampler(RamLabError):
    """Target has no exact i.i.d. sampler"""


class NoSignChange(RamLabError):
    """Bracket search did not find a sign change"""


class EmptyInput(RamLabError):
    """Aggregation over an empty (or too small) collection"""


class ConfigError(RamLabError):
    """Invalid sampler or experiment configuration"""


class ParseError(ConfigError):
    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")


class ValidationError(ConfigError):
    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class StepError(RamLabError):
    def __init__(self, iteration: int, cause: Exception):
        self.iteration = iteration
        self.cause = cause
        super().__init__(f"Chain failed at iteration {iteration}: {cause}")
