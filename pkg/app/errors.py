"""Error hierarchy. Every error carries the CLI exit code it maps to."""


class PassFlError(Exception):
    exit_code = 1


class ScenarioError(PassFlError):
    """Scenario file or command-line configuration is invalid."""

    exit_code = 2

    def __init__(self, message: str, key_path: str = ""):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}" if key_path else message)


class NumericError(PassFlError):
    exit_code = 3


class OverflowLatency(NumericError):
    """Link rate underflowed to zero; the client cannot upload at this position."""


class DimensionMismatch(NumericError):
    pass


class KTooSmall(NumericError):
    pass


class InvalidParams(NumericError):
    pass


class NonPositiveG(NumericError):
    pass


class NonPositiveWeight(NumericError):
    pass


class DeltaOutOfRange(NumericError):
    pass


class IndexOutOfRange(NumericError):
    pass


class InvalidMargin(NumericError):
    pass


class InvalidProblem(NumericError):
    pass


class OnBreakpoint(NumericError):
    """Envelope derivative requested at an ordering breakpoint."""


class ConvergenceError(PassFlError):
    exit_code = 4


class DidNotConverge(ConvergenceError):
    pass


class MaxRoundsExceeded(ConvergenceError):
    pass
