"""Typed exceptions shared across the package.

Every parser and numeric routine raises one of these instead of a bare
builtin, so callers (and the CLI exit-code mapping) can tell usage errors,
malformed data, and degenerate statistics apart.
"""


class CardioFusionError(Exception):
    """Base class for all package errors."""


class FormatError(CardioFusionError):
    """A file does not conform to its declared on-disk format."""


class TooShortError(FormatError):
    """An ECG record is shorter than the minimum ingestible duration."""


class SchemaError(CardioFusionError):
    """A manifest or report payload violates its schema."""


class MissingFileError(CardioFusionError, FileNotFoundError):
    """A path referenced by a manifest does not exist."""


class IoError(CardioFusionError):
    """An output path could not be written."""


class ParamError(CardioFusionError, ValueError):
    """An argument violates a documented precondition."""


class DataError(CardioFusionError):
    """Input data is structurally valid but unusable (e.g. an empty group)."""


class SpecError(CardioFusionError):
    """A network specification is internally inconsistent."""


class TrainError(CardioFusionError):
    """Training aborted (non-finite gradients or similar)."""


class VersionError(CardioFusionError):
    """A serialized artifact declares an unsupported version."""


class DegenerateError(CardioFusionError):
    """A statistic is undefined for the given data (e.g. zero within-group variance)."""
