"""Exception hierarchy shared by all modules."""


class CrtPruneError(Exception):
    """Base class for package errors."""


class DomainError(CrtPruneError, ValueError):
    """Argument outside the domain where a quantity is defined."""


class IntegrationError(CrtPruneError, ArithmeticError):
    """Quadrature did not reach its tolerance."""


class ConvergenceError(CrtPruneError, ArithmeticError):
    """Root bracketing or iteration failed to converge."""


class InversionError(CrtPruneError, ArithmeticError):
    """Numeric Laplace inversion failed its self-consistency test."""


class ConfigError(CrtPruneError, ValueError):
    """Invalid configuration or option value."""


class DegenerateError(CrtPruneError, ValueError):
    """Degenerate random input (for example colliding leaf times)."""


class DegenerateWeights(CrtPruneError, ArithmeticError):
    """Importance weights with too small an effective sample size."""


class SizeError(CrtPruneError, MemoryError):
    """Node budget exceeded while growing a tree."""


class EmptySample(CrtPruneError, ValueError):
    """No finite samples to compute a statistic from."""
