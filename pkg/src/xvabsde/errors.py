"""Exception hierarchy shared by every module."""


class XvaError(Exception):
    """Base class for all library errors."""


class ConfigError(XvaError, ValueError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class UnsupportedConfiguration(ConfigError):
    """Configuration is valid but outside what the requested engine supports."""


class DomainError(XvaError, ValueError):
    """Argument outside the domain of an operation."""


class NumericError(XvaError, ArithmeticError):
    """Numerical failure: rank deficiency, blow-up, non-finite values (exit code 3)."""


class ConsistencyError(NumericError):
    """A post-check on computed results failed beyond its tolerance."""
