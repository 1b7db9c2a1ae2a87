"""Exception hierarchy shared by all tslim modules."""


class TslimError(Exception):
    """Base class for every error raised by tslim."""


class ParseError(TslimError):
    pass


class ValidationError(TslimError):
    pass


class NonConvergence(TslimError):
    """Newton power flow did not converge; ``trace`` holds the per-iteration mismatch."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class IslandingError(TslimError):
    pass


class InitError(TslimError):
    pass


class NoEquilibrium(InitError):
    """Motor torque demand exceeds what the machine can deliver at the given voltage."""


class AlgebraicDivergence(TslimError):
    pass


class LengthMismatch(TslimError):
    pass


class NoCandidate(TslimError):
    pass


class AllFailed(TslimError):
    pass


class SourceCapacityExceeded(TslimError):
    pass


class BaseInfeasible(TslimError):
    """The base operating point already fails; ``record`` holds its StepRecord."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record
