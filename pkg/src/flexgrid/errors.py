class FlexgridError(Exception):
    """Base class for toolkit errors."""


class DataError(FlexgridError, ValueError):
    """Malformed input data or invalid configuration values."""


class InfeasibleError(FlexgridError):
    """A grid specification or search region admits no valid ladder."""
