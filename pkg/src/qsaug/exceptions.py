"""Exception hierarchy shared across the package."""


class QsaugError(Exception):
    """Base class for all errors raised by :mod:`qsaug`."""


class ShapeError(QsaugError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(QsaugError, ValueError):
    """A scalar argument lies outside its admissible range."""


class ConfigError(QsaugError, ValueError):
    """Invalid configuration or dataset size."""


class RangeError(ConfigError):
    """A requested count or slice exceeds what the data provides."""


class FormatError(QsaugError, ValueError):
    """A binary or text file does not match its documented layout."""


class DegenerateEmbeddingError(QsaugError, ValueError):
    """An embedding vector is zero and cannot define a pure state."""


class PolicyUnsatisfiableError(QsaugError, ValueError):
    """No index pair satisfies the requested pairing policy."""


class DivergenceError(QsaugError, ArithmeticError):
    """Training produced non-finite values."""
