"""Exception types shared across the package."""


class FlexPruneError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(FlexPruneError):
    """Tensor shapes do not compose for the requested operation."""


class GeometryError(FlexPruneError):
    """Convolution/pooling geometry does not produce integer output extents."""


class InputError(FlexPruneError):
    """A caller-supplied value is out of its documented range."""


class ConstraintError(FlexPruneError):
    """A pruning constraint (e.g. never empty a layer) would be violated."""


class ConsistencyError(FlexPruneError):
    """Mismatched artifacts, e.g. a trace replayed against a different network."""


class TrainingError(FlexPruneError):
    """Non-finite loss or gradient during optimization."""


class ParseError(FlexPruneError):
    """Malformed dataset file."""


class CheckpointError(FlexPruneError):
    """Base class for checkpoint load failures."""


class BadMagicError(CheckpointError):
    """File does not start with the checkpoint magic bytes."""


class VersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class TruncatedError(CheckpointError):
    """Checkpoint file ends before the declared payload."""


class ChecksumError(CheckpointError):
    """Payload bytes do not match the stored checksum."""
