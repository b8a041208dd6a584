"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not match what an operation expects."""


class ConfigError(ValueError):
    """Invalid configuration value or unknown key."""


class NumericError(FloatingPointError):
    """A non-finite value appeared during evaluation.

    ``index`` is the offending collocation (or grid) index when known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class CheckpointError(ValueError):
    """A checkpoint file is malformed or has an unsupported format version."""
