"""Exception types shared across the toolkit."""


class DehazeError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(DehazeError, ValueError):
    """Shapes or extents do not agree."""


class ParameterError(DehazeError, ValueError):
    """A scalar parameter or config value is out of its allowed range."""


class ContractError(DehazeError, RuntimeError):
    """A call contract was violated by the caller."""


class DataError(DehazeError, OSError):
    """Input files are missing, unreadable or inconsistent."""


class TrainingError(DehazeError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component
