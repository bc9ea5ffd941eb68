"""Exception hierarchy.

Each top-level family carries the CLI exit code it maps to.
"""


class ToolkitError(Exception):
    exit_code = 1


class ConfigError(ToolkitError, ValueError):
    exit_code = 2


class DataError(ToolkitError):
    exit_code = 3


class NumericError(ToolkitError, ArithmeticError):
    exit_code = 4


class ShapeError(ConfigError):
    """Tensor/image shapes are incompatible with the requested operation."""


class ParseError(DataError):
    pass


class EmptyCorpusError(DataError):
    pass


class SamplingExhaustedError(DataError):
    pass


class ProviderContractError(ConfigError):
    """A heatmap provider returned maps violating its declared size contract."""
