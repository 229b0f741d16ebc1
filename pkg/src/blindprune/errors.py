"""Exception types shared across the package."""


class BlindPruneError(Exception):
    """Base class for all errors raised by blindprune."""


class ShapeError(BlindPruneError, ValueError):
    """Array dimensions do not line up."""


class InputError(BlindPruneError, ValueError):
    """An argument is outside the domain an operation accepts."""


class FormatError(BlindPruneError, ValueError):
    """A binary file (IDX or checkpoint) is malformed."""


class ConfigError(BlindPruneError, ValueError):
    """An experiment configuration value is invalid."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")
