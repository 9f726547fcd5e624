"""Exception types shared across the package."""


class RLCCFError(Exception):
    """Base class for all package errors."""


class EmptyPool(RLCCFError):
    """No model produced a valid sample for the question; skip it this step."""


class MissingGroundTruth(RLCCFError):
    pass


class InsufficientData(RLCCFError):
    pass


class ZeroOldProbability(RLCCFError):
    """A sampled answer has zero probability under the snapshot policy."""


class SupportMismatch(RLCCFError):
    pass


class ShapeMismatch(RLCCFError):
    pass


class InsufficientPoints(RLCCFError):
    pass


class ConfigError(RLCCFError):
    """Invalid experiment configuration. ``keys`` lists the offending fields."""

    def __init__(self, message, keys=()):
        super().__init__(message)
        self.keys = tuple(keys)


class FormatError(RLCCFError):
    """Malformed input record. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
