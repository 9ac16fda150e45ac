"""Time-aware continual user representation learning."""

from timecl.errors import ConfigError, DataError, NumericalError, TimeclError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "NumericalError", "TimeclError", "__version__"]
