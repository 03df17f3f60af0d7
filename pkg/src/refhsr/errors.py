"""Shared exception types.

Everything user-facing derives from RefHsrError so the CLI can map
failures onto exit codes without string matching.
"""


class RefHsrError(Exception):
    """Base class for all library errors."""


class ShapeError(RefHsrError, ValueError):
    """Array has the wrong rank / extent, or two rasters disagree in shape."""


class SingularMappingError(RefHsrError, ValueError):
    """A projective mapping degenerates (homogeneous scale ~ 0)."""


class ConfigError(RefHsrError, ValueError):
    """Invalid or inconsistent configuration values."""


class PhaseOrderError(RefHsrError, RuntimeError):
    """Training phases invoked out of order without an explicit override."""


class DataError(RefHsrError, ValueError):
    """Dataset directory missing, malformed, or of the wrong kind."""


class DivergenceError(RefHsrError, RuntimeError):
    """Training produced a non-finite loss."""
