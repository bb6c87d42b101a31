"""Exception types shared across the package.

Every error the library raises deliberately derives from
:class:`IQFusionError`, so callers (and the CLI) can distinguish our
failures from genuine bugs. Configuration-class errors additionally
derive from :class:`ConfigError` and map to exit code 2 in the CLI.
"""


class IQFusionError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(IQFusionError):
    """Operands have incompatible dimensions."""


class ConfigError(IQFusionError):
    """Invalid configuration value or config file."""


class ManifestError(ConfigError):
    """Malformed dataset manifest; carries the offending line number."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class StateError(IQFusionError):
    """Operation called in an invalid order (e.g. backward before forward)."""


class NumericError(IQFusionError):
    """Non-finite values encountered where finite ones are required."""


class DivergenceError(NumericError):
    """Training loss became non-finite."""


class DegenerateWeightsError(IQFusionError):
    """Patch weights sum to zero, so the weighted rating is undefined."""


class UndefinedCorrelationError(IQFusionError):
    """Correlation requested on constant input; refusing to return 0."""


class DatasetTooSmallError(IQFusionError):
    """Dataset or split part too small for the requested operation."""


class MissingFeatureError(IQFusionError):
    """A required (image_id, tag) feature is absent from a cache."""


class DuplicateEntryError(IQFusionError):
    """Two cache entries share the same (image_id, tag) key."""


class CompatibilityError(IQFusionError):
    """Checkpoint and provided features disagree on dimensions."""


class CacheFormatError(IQFusionError):
    """Binary cache or checkpoint file is malformed; carries a byte offset."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BadMagicError(CacheFormatError):
    """File does not start with the expected magic bytes."""


class VersionError(CacheFormatError):
    """File declares an unsupported format version."""


class ChecksumError(CacheFormatError):
    """CRC32 trailer does not match the file contents."""
