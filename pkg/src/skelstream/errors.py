"""Exception taxonomy for the package.

Every error raised by library code derives from SkelstreamError so callers
can catch one base type at the boundary.
"""


class SkelstreamError(Exception):
    """Base class for all package errors."""


class ShapeError(SkelstreamError):
    """An array argument has the wrong rank or incompatible dimensions."""


class ContractError(SkelstreamError):
    """An argument violates a documented precondition other than shape."""


class ConfigError(SkelstreamError):
    """A configuration value is missing, malformed, or out of range."""


class MaskingError(SkelstreamError):
    """A softmax slice was fully masked, leaving no valid attention target."""


class CapacityError(SkelstreamError):
    """A streaming session received more frames than its configured maximum."""


class ParseError(SkelstreamError):
    """An input file could not be parsed at the syntactic level."""


class SchemaError(SkelstreamError):
    """A parsed record is structurally valid but violates the data schema."""


class DivergenceError(SkelstreamError):
    """Training produced a non-finite loss."""


class CheckpointError(SkelstreamError):
    """Base class for checkpoint load failures."""


class IntegrityError(CheckpointError):
    """The checkpoint payload is truncated or corrupted."""


class CompatibilityError(CheckpointError):
    """The checkpoint was written by an incompatible format version."""


class PreprocessingError(SkelstreamError):
    """A frame could not be normalized (e.g. degenerate skeleton scale)."""


class VerificationError(SkelstreamError):
    """A self-check (gradient, solver order, causality) failed."""
