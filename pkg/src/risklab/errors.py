"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or inconsistent experiment setup."""


class DatasetParseError(ValueError):
    """A dataset or params file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MetricUndefinedError(ValueError):
    """The requested metric has no value for the given inputs (e.g. one class only)."""
