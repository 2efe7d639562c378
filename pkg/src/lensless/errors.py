"""Exception types. Each maps to one CLI exit code."""


class LenslessError(Exception):
    exit_code = 1


class ConfigError(LenslessError, ValueError):
    """Invalid configuration or usage (exit 1)."""

    exit_code = 1


class DimensionError(LenslessError, ValueError):
    """Shapes of inputs do not agree (exit 2)."""

    exit_code = 2


class FormatError(LenslessError, ValueError):
    """Malformed or truncated file (exit 2)."""

    exit_code = 2


class NumericalError(LenslessError, ArithmeticError):
    """Non-finite data or an undefined numerical quantity (exit 3)."""

    exit_code = 3
