"""Exception types shared across the package."""


class GramtexError(Exception):
    """Base class for all package errors."""


class ShapeError(GramtexError):
    """An operation received tensors whose shapes violate its contract."""


class NumericError(GramtexError):
    """A computation produced NaN/Inf or otherwise diverged."""


class FormatError(GramtexError):
    """A serialized file is malformed, truncated, or inconsistent."""


class ConfigError(GramtexError):
    """A run configuration or CLI invocation is invalid."""
