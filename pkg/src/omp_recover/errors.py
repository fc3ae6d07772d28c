"""Exception types raised across the package."""


class OmpRecoverError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(OmpRecoverError, ValueError):
    pass


class ZeroResidual(OmpRecoverError, ArithmeticError):
    """The residual vanished, so the normalized statistic is undefined."""


class GramSingular(OmpRecoverError, ArithmeticError):
    """A Schur-complement pivot fell below the singular tolerance."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class SigmaNotPD(OmpRecoverError, ValueError):
    pass


class InfeasibleTail(OmpRecoverError, ValueError):
    pass


class DomainError(OmpRecoverError, ValueError):
    pass


class HNotLessThanOne(DomainError):
    """sqrt(kbar/n) + mu_n >= 1, so the Gaussian-regime constants are undefined."""


class TooLarge(OmpRecoverError, ValueError):
    pass


class ConfigError(OmpRecoverError, ValueError):
    pass
