"""Exception types, grouped by the CLI's error categories."""


class PtqkitError(Exception):
    """Base class for all toolkit errors."""

    category = "config"


class ConfigError(PtqkitError):
    """Invalid argument, shape mismatch, or inconsistent configuration."""

    category = "config"


class TensorFormatError(PtqkitError):
    """Malformed or unreadable tensor file."""

    category = "io"


class NumericError(PtqkitError):
    """Computation produced or encountered non-finite/invalid numbers."""

    category = "numeric"
