from __future__ import annotations


class TimeclError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TimeclError):
    """Invalid configuration. ``field`` names the offending key when known."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class DataError(TimeclError):
    """Malformed input data (interaction logs, profiles, checkpoints)."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None,
                 field: str | None = None):
        self.path = path
        self.line = line
        self.field = field
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class NumericalError(TimeclError):
    """A loss or gradient became non-finite during training."""
