"""Exception hierarchy for annealpath.

Library code raises these; only the CLI turns them into exit codes.
"""


class AnnealPathError(Exception):
    """Base class for every error raised on purpose by annealpath."""


class ProblemInputError(AnnealPathError, ValueError):
    """A problem, formula, bitstring or problem file is malformed."""


class EnumerationLimitError(ProblemInputError):
    """The problem is too large for exhaustive enumeration."""


class ScheduleError(AnnealPathError, ValueError):
    """Anneal fraction or offsets outside their valid range."""


class StateError(AnnealPathError, ValueError):
    """A state vector is not normalized or has the wrong dimension."""


class SamplingError(AnnealPathError, ValueError):
    """Event sampling was asked for no events or handed an empty event list."""


class EigensolverError(AnnealPathError, RuntimeError):
    """The iterative eigensolver did not converge."""

    def __init__(self, message: str, s: float | None = None):
        super().__init__(message)
        self.s = s


class ConfigError(AnnealPathError, ValueError):
    """An experiment configuration is inconsistent or references missing files."""


class StageError(AnnealPathError, RuntimeError):
    """A CLI stage failed; carries the stage name for the diagnostic."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
