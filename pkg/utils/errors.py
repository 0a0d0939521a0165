class CascadeMatchError(Exception):
    """Base class for every error raised by the matching pipeline."""
    category = "error"
    exit_code = 1


class ValidationError(CascadeMatchError):
    """Exception raised when an argument or precondition is invalid."""
    category = "validation"
    exit_code = 2


class DimensionMismatchError(CascadeMatchError):
    """Exception raised when vectors, templates or models disagree on dimension."""
    category = "dimension"
    exit_code = 3


class NormalizationError(CascadeMatchError):
    """Exception raised when a vector cannot be scaled to unit length."""
    category = "normalization"
    exit_code = 4


class ThresholdLearningError(CascadeMatchError):
    """Exception raised when stage thresholds cannot be learned."""
    category = "learning"
    exit_code = 5


class LdaError(CascadeMatchError):
    """Exception raised when a discriminant projection cannot be fitted or applied."""
    category = "lda"
    exit_code = 6


class StoreFormatError(CascadeMatchError):
    """Exception raised when an artifact file is malformed."""
    category = "format"
    exit_code = 7


class NormViolationError(StoreFormatError):
    """Exception raised when a stored template row is not unit length."""
    pass


class ProvenanceError(CascadeMatchError):
    """Exception raised when identities leak between sets that must be disjoint."""
    category = "provenance"
    exit_code = 8


class StorageError(CascadeMatchError):
    """Exception raised when an artifact cannot be read or written."""
    category = "io"
    exit_code = 9
