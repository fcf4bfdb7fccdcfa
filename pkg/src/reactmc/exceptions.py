class ReactError(Exception):
    """Base class for errors raised by reactmc."""


class ValidationError(ReactError, ValueError):
    """Invalid argument, out-of-range value or malformed input file."""


class DegenerateInputError(ReactError, ValueError):
    """Input for which a metric is undefined (e.g. a flat image)."""
