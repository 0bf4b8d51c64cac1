##################
## Exception hierarchy shared by every package. The CLI maps each
## family onto a stable exit code.
##################

from typing import Optional


class FactorSelectionError(Exception):
    """Base class for all errors raised by this project."""

    exit_code = 1


class UsageError(FactorSelectionError, ValueError):
    """Bad input: unreadable files, invalid configuration, malformed data."""

    exit_code = 1


class ParseError(UsageError):
    """Positional error in a constraint file or a pattern file."""

    def __init__(self, line: int, column: int, message: str, source: Optional[str] = None):
        self.line = line
        self.column = column
        self.message = message
        self.source = source
        where = f"{source}:" if source else ""
        super().__init__(f"{where}{line}:{column}: {message}")


class ModelError(FactorSelectionError, ValueError):
    """The model itself is unusable: failed binding, identification, admissibility."""

    exit_code = 2


class BindError(ModelError):
    """A constraint system does not fit the base pattern it is attached to."""

    def __init__(self, message: str, line: Optional[int] = None, source: Optional[str] = None):
        self.line = line
        self.source = source
        self.message = message
        where = ""
        if source:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip() if where else message)


class NumericalError(FactorSelectionError, RuntimeError):
    """Numerical breakdown: non-PD matrices, divergent chains, degenerate ordinates."""

    exit_code = 3

    def __init__(self, message: str, iteration: Optional[int] = None):
        self.iteration = iteration
        super().__init__(message)


class StageError(FactorSelectionError):
    """A pipeline stage failed; carries the stage label and the partial report."""

    def __init__(self, stage: str, cause: Exception, partial_report=None):
        self.stage = stage
        self.cause = cause
        self.partial_report = partial_report
        self.exit_code = getattr(cause, "exit_code", 3)
        super().__init__(f"stage '{stage}' failed: {cause}")
