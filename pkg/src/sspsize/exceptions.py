"""Exception hierarchy shared across the package."""


class SspsizeError(Exception):
    """Base class for all package errors."""


class ValidationError(SspsizeError, ValueError):
    """Bad user input: data, configuration or design parameters."""


class InfeasibleMomentsError(ValidationError):
    """The requested (mean, sd) pair cannot be realized by the size family."""


class ElicitationError(ValidationError):
    """A prior elicitation target is below the sample size or unattainable."""


class InfeasibleDesignError(ValidationError):
    """Network design targets imply a block probability outside (0, 1)."""


class ChainFailure(SspsizeError, RuntimeError):
    """The sampler reached a degenerate or non-finite state."""


class TiltedSamplingError(ChainFailure):
    """Rejection sampler exhausted its retry budget."""


class DataFormatError(ValidationError):
    """A data file is malformed; ``line`` names the offending line when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)
