"""Exception hierarchy shared by every module of the package."""


class AntibunchError(Exception):
    """Base class for all errors raised by this package."""


class InvalidDimensionError(AntibunchError, ValueError):
    pass


class TruncationOverflowError(AntibunchError, ValueError):
    """The truncated Fock space is too small for the requested state.

    ``tail`` is the probability mass that would fall outside the space.
    """

    def __init__(self, message, tail):
        super().__init__(message)
        self.tail = tail


class UndefinedStatisticError(AntibunchError, ValueError):
    pass


class OptimizationFailureError(AntibunchError, RuntimeError):
    def __init__(self, message, best):
        super().__init__(message)
        self.best = best


class ParameterError(AntibunchError, ValueError):
    pass


class CapacityError(AntibunchError, MemoryError):
    pass


class OrderingError(AntibunchError, ValueError):
    pass


class NormalizationError(AntibunchError, ValueError):
    pass


class FitFailureError(AntibunchError, RuntimeError):
    def __init__(self, message, params=None, residual=None):
        super().__init__(message)
        self.params = params
        self.residual = residual


class TagFileError(AntibunchError, ValueError):
    """Base class for malformed tag files."""


class BadMagicError(TagFileError):
    pass


class UnsupportedVersionError(TagFileError):
    pass


class NonMonotoneError(TagFileError):
    pass


class TruncatedFileError(TagFileError):
    pass


class ConfigError(AntibunchError, ValueError):
    """Invalid run configuration; the message names the offending field."""


class ScenarioError(AntibunchError, RuntimeError):
    """A lower-level failure, re-raised with the scenario that hit it."""
