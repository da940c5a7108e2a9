"""Exception hierarchy. Each class carries the CLI exit code for its error class."""


class SurvFusionError(Exception):
    exit_code = 1


class ConfigError(SurvFusionError):
    exit_code = 2


class InputError(SurvFusionError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class ConvergenceError(SurvFusionError):
    """Raised when an optimizer fails; ``trace`` holds the per-iteration history."""

    exit_code = 4

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class EvaluationError(SurvFusionError):
    exit_code = 5


class UndefinedCIndexError(EvaluationError):
    pass
