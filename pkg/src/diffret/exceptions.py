"""Exception hierarchy shared by every diffret module."""


class DiffRetError(Exception):
    """Base class for all errors raised by diffret."""


class DimensionError(DiffRetError, ValueError):
    """Shapes of operands do not agree."""


class ContractError(DiffRetError, ValueError):
    """A precondition of an operation was violated by the caller."""


class ConfigError(DiffRetError, ValueError):
    """An invalid configuration value."""


class InputError(DiffRetError, ValueError):
    """Malformed or empty input data."""


class NumericError(DiffRetError, ArithmeticError):
    """A computation produced NaN or infinite values."""


class NumericGuardWarning(RuntimeWarning):
    """A numeric guard (e.g. a norm clamp) had to intervene."""


class FormatError(DiffRetError, IOError):
    """Base class for binary file format errors."""


class HeaderError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass
