"""Exception types raised across the package."""


class SecformError(Exception):
    """Base class for all package errors."""


class PlaintextOutOfRange(SecformError, ValueError):
    pass


class ShapeMismatch(SecformError, ValueError):
    pass


class InputNotCanonical(SecformError, ValueError):
    pass


class BudgetExceeded(SecformError, ValueError):
    """Quantizer precision does not fit the plaintext space or noise budget."""


class MissingEdgeResult(SecformError, KeyError):
    pass


class DegenerateState(SecformError, ValueError):
    pass


class NotRigid(SecformError, ValueError):
    pass


class NonFiniteState(SecformError, FloatingPointError):
    pass


class ConfigError(SecformError, ValueError):
    pass


class TraceFormatError(SecformError, ValueError):
    pass
