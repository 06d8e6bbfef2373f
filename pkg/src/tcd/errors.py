"""Exception taxonomy shared across the engine.

Validation problems (bad arguments, bad config) are ValueError subclasses so
callers that only know stdlib semantics still catch them; data problems
(broken files, corrupted archives) form a separate branch used by the CLI to
pick exit codes.
"""


class TcdError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(TcdError, ValueError):
    """An argument value is outside its permitted range."""


class DimensionError(TcdError, ValueError):
    """Vector/matrix shapes do not line up."""


class DomainError(TcdError, ValueError):
    """Input is outside the mathematical domain of an operation."""


class ConfigError(ParameterError):
    """A configuration file or flag set is invalid; message names the key."""


class DataError(TcdError):
    """Base class for problems with on-disk data."""


class FormatError(DataError):
    """A file or buffer does not conform to its declared format."""


class CompositionError(DataError):
    """Watermark placement cannot be resolved against the base image."""


class TraceError(DataError):
    """Structural problem in a trace archive."""


class ChecksumError(TraceError):
    """Stored checksum does not match the sample payload."""


class ReplayExhausted(TraceError):
    """A replay model was asked to step beyond its recorded horizon.

    When raised from inside a decode loop, ``partial`` carries the
    GenerationResult accumulated before the horizon was hit.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
