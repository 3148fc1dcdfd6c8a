"""Error taxonomy shared by every module.

The class name is what the CLI prints on a domain error, so keep names stable.
"""


class ActSimError(Exception):
    """Base class for all domain errors (CLI exit code 1)."""


class DegenerateDistribution(ActSimError):
    pass


class UnknownLabel(ActSimError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class InvalidPrecision(ActSimError, ValueError):
    pass


class ShapeError(ActSimError, ValueError):
    pass


class HorizonExceeded(ActSimError):
    pass


class PolicySpaceTooLarge(ActSimError):
    pass


class InvalidConfig(ActSimError, ValueError):
    pass


class EmptyPolicySpace(ActSimError):
    pass


class UndefinedRate(ActSimError):
    pass


class DuplicatePolicy(ActSimError):
    pass


class NotEnrolled(ActSimError):
    pass


class OracleInfeasible(ActSimError):
    pass


class InvalidVisualization(ActSimError):
    pass


class IoError(ActSimError, OSError):
    pass


class CellFailed(ActSimError):
    """A sweep cell raised; carries the cell coordinates."""

    def __init__(self, coords, cause):
        super().__init__(f"sweep cell {coords} failed: {type(cause).__name__}: {cause}")
        self.coords = coords
        self.cause = cause
