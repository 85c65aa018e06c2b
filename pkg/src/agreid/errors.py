"""Exception types shared across the package.

The hierarchy maps onto the CLI exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class AgreidError(Exception):
    pass


class ConfigError(AgreidError):
    """Invalid configuration (bad field values, unknown preset, ...)."""


class DataError(AgreidError):
    """Invalid or missing input data."""


class NumericError(AgreidError):
    """Numerical failure that invalidates the current computation."""


class MalformedRecordError(DataError):
    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class UnknownViewError(DataError):
    pass


class AttributeOutOfRangeError(DataError):
    pass


class LabelOutOfRangeError(DataError):
    pass


class TooManyIdentitiesError(ConfigError):
    pass


class TooFewIdentitiesError(DataError):
    pass


class UnknownPresetError(ConfigError):
    pass


class ShapeMismatchError(AgreidError):
    pass


class ContextOverflowError(ConfigError):
    pass


class DegenerateAttributeSetError(AgreidError):
    """Cross-attention was asked for with no context prompts (single attribute)."""


class DegenerateBatchError(AgreidError):
    """A batch that cannot form valid triplets (some anchor has no negative)."""


class NonFiniteActivationError(NumericError):
    """A forward/backward pass produced NaN or Inf; the step must be aborted."""


class NoValidGalleryError(DataError):
    """A query has no valid gallery match after exclusions."""
