"""Exception types shared across the package.

The CLI maps ConfigError to exit code 2 and data/format problems
(FormatError and the descriptor-level errors) to exit code 3.
"""


class CmIndexError(Exception):
    """Base class for all package errors."""


class ConfigError(CmIndexError):
    """Bad configuration: missing files, invalid keys, out-of-range values."""


class FormatError(CmIndexError):
    """On-disk data is malformed: wrong magic, truncation, bad field values."""


class InvalidDescriptorError(CmIndexError, ValueError):
    """A descriptor violates its contract (shape, range, simplex, finiteness)."""


class EmptyPatchError(CmIndexError, ValueError):
    """A patch-mean was requested over zero pixel vectors."""


class TrainingError(CmIndexError):
    """Codebook or signature-model training cannot proceed."""


class IngestionError(CmIndexError):
    """Corpus cannot be indexed, e.g. duplicate image ids."""


class FrozenIndexError(CmIndexError):
    """Mutation was attempted on a frozen index."""


class UndefinedEntryError(CmIndexError, LookupError):
    """IDF requested for a word pair no image contains."""


class ZeroFeatureError(CmIndexError, ValueError):
    """A per-image quantity was requested for an image with no features."""


class MetricError(CmIndexError, ValueError):
    """A metric's protocol precondition does not hold."""
