"""Exception types shared across the package.

File-system problems (missing or unreadable files) raise the builtin
``OSError`` family; everything below covers contract violations that are
specific to this package.
"""


class UwhaloError(Exception):
    """Base class for all package-specific errors."""


class FormatError(UwhaloError):
    """File exists but its encoding is unsupported or malformed."""


class DimensionError(UwhaloError):
    """Image too small (or otherwise mis-sized) for the requested operation."""


class ShapeError(UwhaloError):
    """Operands have incompatible shapes."""


class ParamError(UwhaloError):
    """Invalid parameter value (e.g. non-positive falloff scale)."""


class DegenerateError(UwhaloError):
    """Input is degenerate (e.g. constant image where structure is required)."""


class CenterMismatchError(UwhaloError):
    """Two halo layers carry different light centers."""


class ConfigError(UwhaloError):
    """Invalid solver or trainer configuration."""


class NonFiniteError(UwhaloError):
    """NaN or Inf appeared where finite values are guaranteed."""


class DataError(UwhaloError):
    """Dataset unusable (too few pairs, unreadable records, ...)."""


class EmptyDatasetError(DataError):
    """No usable input images were found."""


class MissingPredictionError(DataError):
    """Evaluation requested but predictions are missing for some records."""
