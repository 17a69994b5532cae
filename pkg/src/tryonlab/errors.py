"""Exception types shared across the package."""


class TryOnError(Exception):
    """Base class for all package errors."""


# dataset / persistence
class MissingFile(TryOnError):
    """A referenced dataset asset does not exist."""


class LabelSetViolation(TryOnError):
    """A parsing map contains an id outside the declared label set."""


class StoreCorrupt(TryOnError):
    """The caption cache file could not be parsed."""


# mask engine
class EmptyRegion(TryOnError):
    """No pixels of the target garment class were found."""


class PoseIncomplete(TryOnError):
    """Required pose keypoints are missing or below the confidence threshold."""


class ShapeMismatch(TryOnError):
    """Operands do not share the required shape."""


class FineNotInCoarse(TryOnError):
    """The fine mask is not contained in the coarse mask."""


class IndivisibleShape(TryOnError):
    """Raster dimensions are not divisible by the downsample factor."""


# captioning
class SchemaMismatch(TryOnError):
    """Captions or exemplars do not follow the attribute schema in use."""


class ResponseSchemaViolation(TryOnError):
    """The LMM response never matched the schema within the retry budget."""


class TransportError(TryOnError):
    """The LMM endpoint could not be reached or answered with an error."""


class TokenBudgetExceeded(TryOnError):
    """A rendered prompt exceeds the text-encoder token limit."""


# diffusion core
class RangeViolation(TryOnError):
    """Schedule parameters outside their valid open interval."""


class TimestepOutOfRange(TryOnError):
    """Timestep index outside the schedule."""


class LayerShapeMismatch(TryOnError):
    """Injected attention keys/values do not match the layer's shapes."""


class NonFiniteLoss(TryOnError):
    """Training produced a NaN or infinite loss."""


# inference / evaluation
class SegmenterShapeMismatch(TryOnError):
    """Segmenter output shape differs from its input raster."""


class EmptyInput(TryOnError):
    """An aggregate metric received no items."""


class LengthMismatch(TryOnError):
    """Label sets to compare do not have equal length."""


class ConfigError(TryOnError):
    """Invalid run configuration; the message names the offending key."""
