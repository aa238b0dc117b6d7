"""Exception hierarchy shared by all qrim modules."""


class QrimError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(QrimError, ValueError):
    """Invalid parameters, scene description or model configuration."""


class ShapeError(QrimError, ValueError):
    """Array or tensor shapes are incompatible."""


class NumericsError(QrimError, FloatingPointError):
    """A NaN or Inf appeared in a tensor value."""


class UsageError(QrimError, RuntimeError):
    """An API was called in the wrong order or with an unsupported option."""


class DegenerateInputError(QrimError, ValueError):
    """The input carries no information to work with (e.g. an all-zero map)."""


class DatasetError(QrimError, IOError):
    """Reading or writing a dataset or checkpoint file failed."""
